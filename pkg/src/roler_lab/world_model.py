"""Learned environment: MF reward model, ensembles and a noise-injected oracle."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._seeding import stream
from .errors import ConfigError, PreconditionError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True, eq=False)
class WorldModel:
    """Biased matrix factorisation; predictions are clipped to ``reward_range``."""

    user_emb: np.ndarray
    item_emb: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_bias: float
    reward_range: tuple
    train_rmse: tuple = field(default=())

    def __post_init__(self):
        if self.user_emb.shape[1] != self.item_emb.shape[1]:
            raise ValueError("user and item embeddings must share a dimension")
        for name in ("user_emb", "item_emb", "user_bias", "item_bias"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_users(self):
        return self.user_emb.shape[0]

    @property
    def n_items(self):
        return self.item_emb.shape[0]

    @property
    def dim(self):
        return self.user_emb.shape[1]

    def predict(self, u, i):
        raw = self.global_bias + self.user_bias[u] + self.item_bias[i] + self.user_emb[u] @ self.item_emb[i]
        return float(np.clip(raw, *self.reward_range))

    def predict_matrix(self):
        raw = (
            self.global_bias
            + self.user_bias[:, None]
            + self.item_bias[None, :]
            + self.user_emb @ self.item_emb.T
        )
        return np.clip(raw, *self.reward_range)


@dataclass(frozen=True, eq=False)
class LookupWorldModel:
    """Table-backed model with no embeddings (used by the noisy oracle)."""

    table: np.ndarray
    reward_range: tuple
    user_emb = None
    item_emb = None

    def __post_init__(self):
        t = np.clip(np.array(self.table, dtype=float), *self.reward_range)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def n_users(self):
        return self.table.shape[0]

    @property
    def n_items(self):
        return self.table.shape[1]

    def predict(self, u, i):
        return float(self.table[u, i])

    def predict_matrix(self):
        return self.table.copy()


@dataclass(frozen=True)
class WorldModelEnsemble:
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        first = members[0]
        for m in members[1:]:
            if (m.n_users, m.n_items) != (first.n_users, first.n_items) or m.reward_range != first.reward_range:
                raise ValueError("ensemble members disagree on shape or reward_range")
        object.__setattr__(self, "members", members)

    @property
    def reward_range(self):
        return self.members[0].reward_range

    @property
    def n_users(self):
        return self.members[0].n_users

    @property
    def n_items(self):
        return self.members[0].n_items

    def __len__(self):
        return len(self.members)

    def mean_matrix(self):
        stack = np.stack([m.predict_matrix() for m in self.members])
        return np.clip(stack.mean(axis=0), *self.reward_range)

    def variance_matrix(self):
        if len(self.members) == 1:
            warnings.warn("ensemble of one member has no disagreement; uncertainty is 0", stacklevel=2)
            return np.zeros((self.n_users, self.n_items))
        return np.stack([m.predict_matrix() for m in self.members]).var(axis=0)


@dataclass(frozen=True)
class MFConfig:
    d: int = 8
    learning_rate: float = 0.02
    l2: float = 0.01
    epochs: int = 50
    seed: int = 0
    init_scale: float = 0.01

    def validate(self):
        if self.d < 1:
            raise ConfigError("d", "must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.l2 < 0:
            raise ConfigError("l2", "must be >= 0")
        return self


def fit_mf(log, cfg=MFConfig(), backend=None):
    """SGD on squared error with L2, visiting events in a seeded shuffle."""
    cfg.validate()
    if not len(log):
        raise PreconditionError("cannot fit a world model on an empty log")
    rng = stream(cfg.seed, "mf", "init")
    P = rng.normal(0.0, cfg.init_scale, (log.n_users, cfg.d))
    Q = rng.normal(0.0, cfg.init_scale, (log.n_items, cfg.d))
    bu = np.zeros(log.n_users)
    bi = np.zeros(log.n_items)
    gb = float(log.rewards.mean())
    users = np.ascontiguousarray(log.users, dtype=np.int64)
    items = np.ascontiguousarray(log.items, dtype=np.int64)
    rewards = np.ascontiguousarray(log.rewards, dtype=float)
    order_rng = stream(cfg.seed, "mf", "order")
    history = []
    for _ in range(cfg.epochs):
        order = order_rng.permutation(len(log)).astype(np.int64)
        sse = kernels.mf_sgd_epoch(users, items, rewards, order, P, Q, bu, bi, gb, cfg.learning_rate, cfg.l2, backend)
        history.append(float(np.sqrt(sse / len(log))))
    lo, hi = log.reward_range
    if not (np.isfinite(lo) and np.isfinite(hi)):
        lo, hi = float(rewards.min()), float(rewards.max())
    return WorldModel(P, Q, bu, bi, gb, (lo, hi), tuple(history))


def fit_ensemble(log, cfg=MFConfig(), n_members=5, backend=None):
    seeds = stream(cfg.seed, "ensemble").integers(0, 2**31 - 1, size=n_members)
    members = [
        fit_mf(log, MFConfig(cfg.d, cfg.learning_rate, cfg.l2, cfg.epochs, int(s), cfg.init_scale), backend)
        for s in seeds
    ]
    return WorldModelEnsemble(tuple(members))


def predict_reward_mean(ens, u, i):
    if isinstance(ens, (WorldModel, LookupWorldModel)):
        ens = WorldModelEnsemble((ens,))
    mean = sum(m.predict(u, i) for m in ens.members) / len(ens.members)
    return float(np.clip(mean, *ens.reward_range))


def ensemble_uncertainty(ens, u, i):
    """Population variance of member predictions (0 with a warning when M == 1)."""
    if len(ens.members) == 1:
        warnings.warn("ensemble of one member has no disagreement; uncertainty is 0", stacklevel=2)
        return 0.0
    preds = np.array([m.predict(u, i) for m in ens.members])
    return float(np.mean((preds - preds.mean()) ** 2))


def make_noisy_oracle(gt, sigma, bias=0.0, seed=0):
    """Ground truth plus ``bias`` plus Gaussian noise, clipped; an ensemble of one."""
    if not gt.is_fully_observed():
        raise PreconditionError("the noisy oracle needs a fully observed ground-truth matrix")
    if sigma < 0:
        raise ConfigError("sigma", "must be >= 0")
    table = gt.values + bias
    if sigma > 0:
        table = table + stream(seed, "oracle").normal(0.0, sigma, gt.shape)
    return WorldModelEnsemble((LookupWorldModel(table, gt.reward_range),))


# ------------------------------------------------------------ checkpoints


def save_ensemble(path, ens):
    arrays = {"format_version": np.array(CHECKPOINT_VERSION), "n_members": np.array(len(ens))}
    for j, m in enumerate(ens.members):
        arrays[f"m{j}_range"] = np.array(m.reward_range, dtype=float)
        if isinstance(m, LookupWorldModel):
            arrays[f"m{j}_kind"] = np.array("lookup")
            arrays[f"m{j}_table"] = m.table
        else:
            arrays[f"m{j}_kind"] = np.array("mf")
            arrays[f"m{j}_user_emb"] = m.user_emb
            arrays[f"m{j}_item_emb"] = m.item_emb
            arrays[f"m{j}_user_bias"] = m.user_bias
            arrays[f"m{j}_item_bias"] = m.item_bias
            arrays[f"m{j}_global_bias"] = np.array(m.global_bias)
            arrays[f"m{j}_train_rmse"] = np.array(m.train_rmse, dtype=float)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_ensemble(path):
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        members = []
        for j in range(int(z["n_members"])):
            rr = tuple(float(x) for x in z[f"m{j}_range"])
            if str(z[f"m{j}_kind"]) == "lookup":
                members.append(LookupWorldModel(z[f"m{j}_table"], rr))
            else:
                members.append(
                    WorldModel(
                        z[f"m{j}_user_emb"],
                        z[f"m{j}_item_emb"],
                        z[f"m{j}_user_bias"],
                        z[f"m{j}_item_bias"],
                        float(z[f"m{j}_global_bias"]),
                        rr,
                        tuple(float(x) for x in z[f"m{j}_train_rmse"]),
                    )
                )
    return WorldModelEnsemble(tuple(members))
