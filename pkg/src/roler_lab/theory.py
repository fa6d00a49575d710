"""Exact finite-MDP tools and an empirical check of the shaped-reward value bound.

The bound under test is

    max_s |V_pihat(s) - V*(s)| <= 2 (L d_m + Q_m eps) / (1 - gamma),
    eps = Q_m sqrt(ln(2 C / delta) / (2 k)),

where pihat is optimal for the MDP whose rewards were replaced by kNN
averages, L is the empirical Lipschitz constant of the Bellman backup over
neighbor pairs, d_m the largest query-to-neighbor distance and C the number
of distinct neighbor sets.
"""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._seeding import stream
from .errors import ParameterError
from .shaping import knn_all

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    transition: np.ndarray  # (S, A, S)
    rewards: np.ndarray  # (S, A)
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.rewards, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[:2] != R.shape:
            raise ParameterError(f"inconsistent shapes: transition {P.shape}, rewards {R.shape}")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, atol=1e-9, rtol=0):
            raise ParameterError("each P(.|s,a) must be a probability vector")
        if not np.all(np.isfinite(R)):
            raise ParameterError("rewards must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterError("gamma must lie in [0, 1)")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rewards", R)

    @property
    def n_states(self):
        return self.rewards.shape[0]

    @property
    def n_actions(self):
        return self.rewards.shape[1]

    def with_rewards(self, rewards):
        return FiniteMDP(self.transition, rewards, self.gamma)


class ValueIterationResult(NamedTuple):
    V: np.ndarray
    Q: np.ndarray
    policy: np.ndarray


def bellman_q(mdp, V):
    return mdp.rewards + mdp.gamma * mdp.transition @ V


def value_iteration(mdp, tol=1e-10, deltas=None, max_iter=100_000):
    """Iterate the optimality backup until the sup-norm change drops below
    ``tol (1 - gamma) / gamma``; the greedy policy takes the lowest index on ties.

    If ``deltas`` is a list, successive sup-norm changes are appended to it.
    """
    if tol <= 0:
        raise ParameterError("tol must be > 0")
    g = mdp.gamma
    threshold = math.inf if g == 0 else tol * (1.0 - g) / g
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        V_new = bellman_q(mdp, V).max(axis=1)
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if deltas is not None:
            deltas.append(delta)
        if delta < threshold or delta == 0.0:
            break
    Q = bellman_q(mdp, V)
    return ValueIterationResult(V, Q, np.argmax(Q, axis=1))


def policy_evaluation(mdp, policy):
    """Exact V of a deterministic policy via one linear solve."""
    s = np.arange(mdp.n_states)
    P_pi = mdp.transition[s, policy]
    r_pi = mdp.rewards[s, policy]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)


def epsilon_bound(k, N, delta, Q_m, C):
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    if k < 1:
        raise ParameterError("k must be >= 1")
    if C < 1:
        raise ParameterError("C must be >= 1")
    if N < 1:
        raise ParameterError("N must be >= 1")
    if Q_m < 0:
        raise ParameterError("Q_m must be >= 0")
    return Q_m * math.sqrt(math.log(2.0 * C / delta) / (2.0 * k))


def estimate_lipschitz(q_values, distances):
    """Largest ``|dQ| / d`` over distinct pairs with finite distance.

    Pairs at distance 0 with different values make the constant unbounded;
    ``math.inf`` is returned in that case.
    """
    q = np.asarray(q_values, dtype=float)
    d = np.asarray(distances, dtype=float)
    if q.size < 2:
        raise ParameterError("need at least two state-action pairs")
    iu = np.triu_indices(q.size, k=1)
    dq = np.abs(q[:, None] - q[None, :])[iu]
    dd = d[iu]
    finite = np.isfinite(dd)
    dq, dd = dq[finite], dd[finite]
    zero = dd == 0
    if np.any(zero & (dq > 0)):
        log.warning("coincident state-action pairs with different values: Lipschitz constant is infinite")
        return math.inf
    keep = ~zero
    if not np.any(keep):
        return 0.0
    return float(np.max(dq[keep] / dd[keep]))


@dataclass(frozen=True)
class BoundInputs:
    L: float
    d_m: float
    Q_m: float
    k: int
    N: int
    delta: float
    C: int

    def __post_init__(self):
        if min(self.L, self.d_m, self.Q_m) < 0:
            raise ParameterError("L, d_m and Q_m must be nonnegative")
        if not 0.0 < self.delta < 1.0:
            raise ParameterError("delta must lie in (0, 1)")

    @property
    def epsilon(self):
        return epsilon_bound(self.k, self.N, self.delta, self.Q_m, self.C)


@dataclass(frozen=True)
class BoundReport:
    gap: float
    bound: float
    holds: bool
    epsilon: float


def verify_bound(true_mdp, shaped_rewards, bound_in, tol=1e-9):
    shaped_rewards = np.asarray(shaped_rewards, dtype=float)
    if shaped_rewards.shape != true_mdp.rewards.shape:
        raise ParameterError("shaped rewards must match the true reward shape")
    v_star = value_iteration(true_mdp, tol=1e-12).V
    pi_hat = value_iteration(true_mdp.with_rewards(shaped_rewards), tol=1e-12).policy
    v_pi_hat = policy_evaluation(true_mdp, pi_hat)
    gap = float(np.max(np.abs(v_pi_hat - v_star)))
    eps = bound_in.epsilon
    bound = 2.0 * (bound_in.L * bound_in.d_m + bound_in.Q_m * eps) / (1.0 - true_mdp.gamma)
    return BoundReport(gap, bound, bool(gap <= bound + tol), eps)


# ------------------------------------------------------ coverage experiment


@dataclass(frozen=True)
class BoundInstance:
    mdp: FiniteMDP
    shaped: np.ndarray
    inputs: BoundInputs


def random_mdp(rng, n_states, n_actions, gamma, reward_range=(0.0, 1.0)):
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(*reward_range, size=(n_states, n_actions))
    return FiniteMDP(P, R, gamma)


def planted_bound_instance(seed, n_states=5, n_actions=3, gamma=0.9, k=5, cluster_size=8,
                           within_cluster_noise=0.05, observation_noise=0.2, delta=0.05,
                           metric="euclidean"):
    """Random MDP whose per-state rewards are re-estimated from planted neighbors.

    Every state plays the part of a query user with true reward row ``R[s]``.
    A cluster of ``cluster_size`` logged users per state shares that row up to
    ``within_cluster_noise`` and logs every action once with
    ``observation_noise``. Shaped rewards average the ``k`` nearest logged
    users' observations, found from reward-history features.
    """
    rng = stream(seed, "bound", "instance")
    lo, hi = 0.0, 1.0
    mdp = random_mdp(rng, n_states, n_actions, gamma, (lo, hi))
    R = mdp.rewards
    true_rows = np.clip(np.repeat(R, cluster_size, axis=0)
                        + rng.normal(0.0, within_cluster_noise, (n_states * cluster_size, n_actions)), lo, hi)
    observed = np.clip(true_rows + rng.normal(0.0, observation_noise, true_rows.shape), lo, hi)
    query_feats = np.clip(R + rng.normal(0.0, observation_noise, R.shape), lo, hi)
    feats = np.vstack([observed, query_feats])
    n_train = observed.shape[0]
    queries = np.arange(n_train, n_train + n_states)
    sets = knn_all(feats, queries, k, metric, candidates=np.arange(n_train))
    shaped = np.stack([observed[s.users].mean(axis=0) for s in sets])

    # Lipschitz constant of the true backup of the shaped optimum, over each
    # query and its own neighbors; neighbors share the query's transitions.
    v_hat = value_iteration(mdp.with_rewards(shaped), tol=1e-12).V
    cont = gamma * mdp.transition @ v_hat  # (S, A)
    L = 0.0
    for s, nb in enumerate(sets):
        pts_r = np.concatenate([[R[s]], true_rows[nb.users]])  # (k+1, A)
        pair_d = pairwise_distances(np.vstack([feats[queries[s]], feats[nb.users]]), metric)
        for a in range(n_actions):
            L = max(L, estimate_lipschitz(pts_r[:, a] + cont[s, a], pair_d))
    d_m = float(max(s.distances.max() for s in sets))
    C = len({tuple(s.users.tolist()) for s in sets})
    Q_m = max(abs(lo), abs(hi)) / (1.0 - gamma)
    inputs = BoundInputs(L=L, d_m=d_m, Q_m=Q_m, k=k, N=int(observed.size), delta=delta, C=C)
    return BoundInstance(mdp, shaped, inputs)


def pairwise_distances(X, metric="euclidean"):
    X = np.asarray(X, dtype=float)
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        d = 1.0 - (X @ X.T) / np.outer(norms, norms)
        np.fill_diagonal(d, 0.0)
        return np.maximum(d, 0.0)
    return np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)


def _coverage_row(job):
    j, inst_seed, kwargs = job
    inst = planted_bound_instance(inst_seed, **kwargs)
    rep = verify_bound(inst.mdp, inst.shaped, inst.inputs)
    return {"instance": j, "gap": rep.gap, "bound": rep.bound, "L": inst.inputs.L, "d_m": inst.inputs.d_m,
            "epsilon": rep.epsilon, "holds": rep.holds}


def coverage_experiment(n_instances=100, seed=0, parallel=1, **kwargs):
    jobs = [(j, seed * 100_003 + j, kwargs) for j in range(n_instances)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_coverage_row, jobs, chunksize=8))
    return [_coverage_row(job) for job in jobs]


BOUND_FIELDS = ["instance", "gap", "bound", "L", "d_m", "epsilon", "holds"]


def write_bound_csv(path, rows, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUND_FIELDS)
        for r in rows:
            w.writerow([r["instance"], repr(r["gap"]), repr(r["bound"]), repr(r["L"]), repr(r["d_m"]),
                        repr(r["epsilon"]), int(r["holds"])])
