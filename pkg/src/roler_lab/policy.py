"""Advantage actor-critic with hand-written gradients for one-hidden-layer MLPs."""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._seeding import stream
from .errors import ParameterError, TrainingDiverged
from .tracker import AttentionTracker, AverageTracker, IdentityTracker, Window

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


# ------------------------------------------------------------ action table


@dataclass(frozen=True, eq=False)
class ActionTable:
    vectors: np.ndarray
    init: str

    @property
    def n_items(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def init_actions(wm, n_items, dim, init="gaussian_random", seed=0):
    if init == "world_model_embeddings":
        if wm is None or getattr(wm, "item_emb", None) is None:
            raise ParameterError("world_model_embeddings init needs a world model with item embeddings")
        emb = np.asarray(wm.item_emb, dtype=float)
        if emb.shape != (n_items, dim):
            raise ParameterError(f"world model embeddings are {emb.shape}, expected {(n_items, dim)}")
        vectors = emb.copy()
    elif init == "gaussian_random":
        vectors = stream(seed, "actions").standard_normal((n_items, dim))
    else:
        raise ParameterError(f"unknown action init {init!r}")
    vectors.setflags(write=False)
    return ActionTable(vectors, init)


# -------------------------------------------------------------------- MLP


class MLP:
    """``x -> relu(x W1 + b1) W2 + b2``."""

    def __init__(self, n_in, n_hidden, n_out, rng, out_scale=0.01):
        self.params = {
            "W1": rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_hidden)),
            "b1": np.zeros(n_hidden),
            "W2": rng.normal(0.0, out_scale, (n_hidden, n_out)),
            "b2": np.zeros(n_out),
        }

    def forward(self, x):
        pre = x @ self.params["W1"] + self.params["b1"]
        h = np.maximum(pre, 0.0)
        return h @ self.params["W2"] + self.params["b2"], (x, pre, h)

    def backward(self, cache, dy):
        x, pre, h = cache
        grads = {"W2": h.T @ dy, "b2": dy.sum(axis=0)}
        dh = dy @ self.params["W2"].T
        dpre = dh * (pre > 0)
        grads["W1"] = x.T @ dpre
        grads["b1"] = dpre.sum(axis=0)
        return grads, dpre @ self.params["W1"].T


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            self.params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _clip_grads(grads, max_norm):
    if not max_norm:
        return grads
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        return {k: g * (max_norm / norm) for k, g in grads.items()}
    return grads


# ------------------------------------------------------------------ policy


@dataclass
class TrackerConfig:
    kind: str = "average"
    window: int = 3
    key_dim: int = 8

    def build(self, dim, rng=None):
        if self.kind == "average":
            return AverageTracker(self.window)
        if self.kind == "attention":
            return AttentionTracker(self.window, dim, self.key_dim, rng)
        if self.kind == "identity":
            return IdentityTracker()
        raise ParameterError(f"unknown tracker kind {self.kind!r}")


@dataclass
class A2CConfig:
    epochs: int = 20
    trajectories_per_epoch: int = 64
    batch_size: int = 16
    gamma: float = 0.9
    actor_lr: float = 1e-3
    critic_lr: float = 3e-3
    hidden: int = 64
    entropy_coef: float = 0.01
    bootstrap: bool = False
    max_grad_norm: float = 5.0
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.trajectories_per_epoch < 1 or self.batch_size < 1:
            raise ParameterError("epochs, trajectories_per_epoch and batch_size must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterError("gamma must lie in [0, 1)")
        return self


def masked_softmax(logits, masks):
    z = np.where(masks, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Policy:
    """Actor (state -> item logits), critic (state -> V) and state tracker."""

    def __init__(self, state_dim, n_actions, tracker, hidden=64, gamma=0.9, seed=0, actions=None):
        rng = stream(seed, "policy", "init")
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.tracker = tracker
        self.gamma = gamma
        self.hidden = hidden
        self.actions = actions
        self.actor = MLP(state_dim, hidden, n_actions, rng)
        self.critic = MLP(state_dim, hidden, 1, rng, out_scale=0.1)

    def states(self, obs):
        return self.tracker.forward(obs)

    def probs(self, obs, masks):
        states, _ = self.states(obs)
        logits, _ = self.actor.forward(states)
        return masked_softmax(logits, masks)

    def value(self, obs):
        states, _ = self.states(obs)
        return self.critic.forward(states)[0][:, 0]

    def act(self, obs, masks, rng=None, greedy=False):
        p = self.probs(obs, masks)
        if greedy:
            return np.argmax(p, axis=1)
        return sample_categorical(p, rng)

    # -- losses with analytic gradients ------------------------------------

    def actor_loss(self, obs, masks, actions, advantages, entropy_coef=0.0):
        """``-mean(log pi(a|s) A) - c * mean(H(pi(.|s)))`` and its gradients."""
        states, tcache = self.states(obs)
        logits, acache = self.actor.forward(states)
        n = len(actions)
        p = masked_softmax(logits, masks)
        rows = np.arange(n)
        logp_all = np.where(masks, np.log(np.where(masks, p, 1.0)), 0.0)
        logp = logp_all[rows, actions]
        ent = -(p * logp_all).sum(axis=1)
        loss = -(logp * advantages).mean() - entropy_coef * ent.mean()
        # d(-log p_a)/dz = p - onehot(a); dH/dz = -p (log p + H)
        dz = p.copy()
        dz[rows, actions] -= 1.0
        dz *= advantages[:, None] / n
        dz += entropy_coef * p * (logp_all + ent[:, None]) / n
        dz = np.where(masks, dz, 0.0)
        grads, dstates = self.actor.backward(acache, dz)
        tgrads = self.tracker.backward(tcache, dstates) if tcache is not None else {}
        return float(loss), grads, tgrads

    def critic_loss(self, obs, targets):
        states, tcache = self.states(obs)
        v, ccache = self.critic.forward(states)
        err = v[:, 0] - targets
        loss = float(np.mean(err**2))
        dv = (2.0 * err / len(targets))[:, None]
        grads, dstates = self.critic.backward(ccache, dv)
        tgrads = self.tracker.backward(tcache, dstates) if tcache is not None else {}
        return loss, grads, tgrads

    # -- persistence --------------------------------------------------------

    def save(self, path):
        meta = {
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
            "hidden": self.hidden,
            "gamma": self.gamma,
            "tracker": {"kind": self.tracker.kind, "window": getattr(self.tracker, "window", 1),
                        "key_dim": getattr(self.tracker, "key_dim", 8)},
            "format_version": 1,
        }
        arrays = {f"actor_{k}": v for k, v in self.actor.params.items()}
        arrays.update({f"critic_{k}": v for k, v in self.critic.params.items()})
        arrays.update({f"tracker_{k}": v for k, v in self.tracker.params.items()})
        if self.actions is not None:
            arrays["actions"] = self.actions.vectors
            meta["action_init"] = self.actions.init
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format_version") != 1:
                raise ValueError(f"unsupported policy checkpoint version {meta.get('format_version')}")
            tc = TrackerConfig(**meta["tracker"])
            tracker = tc.build(meta["state_dim"])
            actions = ActionTable(z["actions"], meta["action_init"]) if "actions" in z else None
            pol = cls(meta["state_dim"], meta["n_actions"], tracker, meta["hidden"], meta["gamma"], actions=actions)
            for k in pol.actor.params:
                pol.actor.params[k] = z[f"actor_{k}"].copy()
            for k in pol.critic.params:
                pol.critic.params[k] = z[f"critic_{k}"].copy()
            if tracker.params:
                tracker.params = {k: z[f"tracker_{k}"].copy() for k in tracker.params}
        return pol


def sample_categorical(p, rng):
    """Inverse-CDF draw per row; zero-probability entries are never chosen."""
    u = rng.random(p.shape[0])
    c = np.cumsum(p, axis=1)
    idx = (c > (u * c[:, -1])[:, None]).argmax(axis=1)
    # guard against a zero-probability column winning through rounding
    bad = p[np.arange(len(idx)), idx] <= 0
    if np.any(bad):
        for r in np.flatnonzero(bad):
            nz = np.flatnonzero(p[r] > 0)
            idx[r] = nz[np.searchsorted(c[r, nz], u[r] * c[r, -1], side="right").clip(0, nz.size - 1)]
    return idx


# ------------------------------------------------------------- trajectories


@dataclass
class Trajectories:
    """Flat transitions from a batch of episodes, in (step, episode) order."""

    obs: object
    masks: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    episode: np.ndarray
    step: np.ndarray
    returns: np.ndarray = field(default=None)
    next_index: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.actions)


def discounted_returns(rewards, gamma):
    """``G_t = r_t + gamma G_{t+1}`` with ``G_T = r_T``."""
    g = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        g[t] = acc
    return g


def _concat_obs(parts):
    if isinstance(parts[0], Window):
        return Window.concat(parts)
    return np.concatenate(parts)


def _take_obs(obs, idx):
    return obs.take(idx) if isinstance(obs, Window) else obs[idx]


def rollout(policy, env, rng, n_episodes, greedy=False, **reset_kwargs):
    """Run ``n_episodes`` in lockstep until all terminate."""
    env.reset(rng, n_episodes, **reset_kwargs)
    obs_parts, mask_parts, acts, rews, dones, eps, steps = [], [], [], [], [], [], []
    t = 0
    while env.active.size:
        obs, masks = env.observe()
        a = policy.act(obs, masks, rng, greedy)
        ids = env.active.copy()
        r, d = env.step(a, rng)
        obs_parts.append(obs)
        mask_parts.append(masks)
        acts.append(a)
        rews.append(r)
        dones.append(d)
        eps.append(ids)
        steps.append(np.full(ids.size, t))
        t += 1
    traj = Trajectories(
        _concat_obs(obs_parts),
        np.concatenate(mask_parts),
        np.concatenate(acts),
        np.concatenate(rews).astype(float),
        np.concatenate(dones),
        np.concatenate(eps),
        np.concatenate(steps),
    )
    _attach_returns(traj, policy.gamma)
    return traj


def _attach_returns(traj, gamma):
    order = np.lexsort((traj.step, traj.episode))
    returns = np.zeros(len(traj))
    next_index = np.full(len(traj), -1)
    ep_sorted = traj.episode[order]
    bounds = np.flatnonzero(np.diff(ep_sorted)) + 1
    for chunk in np.split(order, bounds):
        returns[chunk] = discounted_returns(traj.rewards[chunk], gamma)
        next_index[chunk[:-1]] = chunk[1:]
    traj.returns = returns
    traj.next_index = next_index


# ---------------------------------------------------------------- training


class A2CTrainer:
    def __init__(self, policy, cfg):
        self.policy = policy
        self.cfg = cfg.validate()
        self.actor_opt = Adam(policy.actor.params, cfg.actor_lr)
        self.critic_opt = Adam(policy.critic.params, cfg.critic_lr)
        self.tracker_opt = Adam(policy.tracker.params, cfg.actor_lr) if policy.tracker.params else None

    def targets(self, traj):
        if not self.cfg.bootstrap:
            return traj.returns
        v = self.policy.value(traj.obs)
        nxt = traj.next_index
        v_next = np.where(nxt >= 0, v[np.maximum(nxt, 0)], 0.0)
        return traj.rewards + self.policy.gamma * v_next

    def update(self, traj):
        """One critic step and one actor step on a batch of trajectories."""
        pol = self.policy
        targets = self.targets(traj)
        values = pol.value(traj.obs)
        advantages = traj.returns - values
        closs, cgrads, ctg = pol.critic_loss(traj.obs, targets)
        if not np.isfinite(closs) or closs > DIVERGENCE_LIMIT:
            raise TrainingDiverged(
                f"critic loss {closs:.3g} exceeded {DIVERGENCE_LIMIT:g}",
                {"critic_loss": closs, "mean_return": float(traj.returns.mean()),
                 "max_abs_reward": float(np.abs(traj.rewards).max())},
            )
        aloss, agrads, atg = pol.actor_loss(traj.obs, traj.masks, traj.actions, advantages, self.cfg.entropy_coef)
        self.critic_opt.step(_clip_grads(cgrads, self.cfg.max_grad_norm))
        self.actor_opt.step(_clip_grads(agrads, self.cfg.max_grad_norm))
        if self.tracker_opt is not None:
            tg = {k: ctg[k] + atg[k] for k in ctg}
            self.tracker_opt.step(_clip_grads(tg, self.cfg.max_grad_norm))
        return closs, aloss


def a2c_train(env, policy, cfg, evaluate_fn=None, log_every=0):
    """Offline A2C against a simulated environment.

    Each epoch samples ``trajectories_per_epoch`` episodes in lockstep groups
    of ``batch_size`` (``batch_size=1`` is one update per trajectory). After
    every epoch ``evaluate_fn(policy, epoch)`` may return a metrics dict that
    is merged into the trace row.
    """
    trainer = A2CTrainer(policy, cfg)
    rng = stream(cfg.seed, "a2c", "rollout")
    trace = []
    for epoch in range(cfg.epochs):
        closses, alosses = [], []
        remaining = cfg.trajectories_per_epoch
        while remaining > 0:
            n = min(cfg.batch_size, remaining)
            traj = rollout(policy, env, rng, n)
            c, a = trainer.update(traj)
            closses.append(c)
            alosses.append(a)
            remaining -= n
        row = {"epoch": epoch}
        if evaluate_fn is not None:
            row.update(evaluate_fn(policy, epoch))
        row["critic_loss"] = float(np.mean(closses))
        row["actor_loss"] = float(np.mean(alosses))
        trace.append(row)
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d %s", epoch, row)
    return policy, trace
