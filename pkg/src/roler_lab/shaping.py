"""kNN reward shaping, distance-based uncertainty, and the k-order entropy bonus."""

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .datasets import FeedbackMatrix, InteractionLog
from .errors import FeatureError, ParameterError

log = logging.getLogger(__name__)

METRICS = ("cosine", "euclidean")
VARIANTS = (
    "multiplicative",
    "additive_mean",
    "additive_min",
    "additive_max",
    "inverse",
    "gaussian_sample",
    "weighted_average",
)
EPS_D = 1e-6


@dataclass(frozen=True, eq=False)
class NeighborSet:
    query_user: int
    users: np.ndarray
    distances: np.ndarray
    metric: str = "cosine"

    @property
    def k(self):
        return int(self.users.size)

    @property
    def neighbors(self):
        return list(zip(self.users.tolist(), self.distances.tolist()))


@dataclass(frozen=True)
class UncertaintyVariant:
    kind: str = "multiplicative"
    lam: float = 1.0
    eps_d: float = EPS_D

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ParameterError(f"unknown uncertainty variant {self.kind!r}")
        if self.lam < 0:
            raise ParameterError("variant lambda must be >= 0")
        if self.eps_d <= 0:
            raise ParameterError("eps_d must be > 0")


def _check_features(vectors, users, metric):
    if metric not in METRICS:
        raise ParameterError(f"unknown metric {metric!r}")
    if metric == "cosine":
        norms = np.linalg.norm(vectors[users], axis=1)
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise FeatureError(int(users[bad[0]]), "all-zero feature vector under cosine distance")


def knn_all(feats, queries, k, metric="cosine", candidates=None, include_self=False, backend=None):
    """Neighbor sets for many queries in one kernel call."""
    vectors = feats.vectors if hasattr(feats, "vectors") else np.asarray(feats, dtype=float)
    queries = np.atleast_1d(np.asarray(queries, dtype=np.int64))
    if candidates is None:
        candidates = np.arange(vectors.shape[0])
    candidates = np.asarray(candidates, dtype=np.int64)
    if k < 1:
        raise ParameterError("k must be >= 1")
    for q in queries.tolist():
        pool = candidates.size if include_self else candidates.size - int(np.any(candidates == q))
        if k > pool:
            raise ParameterError(f"k={k} exceeds the candidate pool of {pool} users for query {q}")
    _check_features(vectors, np.union1d(queries, candidates), metric)
    idx, dist = kernels.knn_topk(vectors, queries, candidates, k, metric, include_self, backend)
    return [NeighborSet(int(q), idx[j], dist[j], metric) for j, q in enumerate(queries.tolist())]


def knn_neighbors(feats, query, k, metric="cosine", candidates=None, include_self=False, backend=None):
    return knn_all(feats, [query], k, metric, candidates, include_self, backend)[0]


def _as_matrix(source):
    if isinstance(source, InteractionLog):
        return source.to_matrix()
    if isinstance(source, FeedbackMatrix):
        return source
    raise TypeError("source must be a FeedbackMatrix or InteractionLog")


def neighbor_rewards(source, nbrs, item):
    """Neighbors' observed rewards on ``item`` (NaN where unobserved)."""
    fm = _as_matrix(source)
    return fm.values[nbrs.users, item]


def shape_reward(source, nbrs, item, fallback=math.nan):
    """Mean of the neighbors' observed rewards on ``item``.

    Neighbors without an observation are skipped; if none observed the item
    the ``fallback`` (normally the world-model prediction) is returned.
    """
    vals = neighbor_rewards(source, nbrs, item)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        return float(fallback)
    return float(vals.sum() / vals.size)


def knn_uncertainty(nbrs):
    return float(nbrs.distances.sum() / nbrs.distances.size)


def _variant_arrays(r_tilde, distances, v, nbr_vals=None, rng=None):
    """Vectorised variant: ``r_tilde`` (...), ``distances`` (..., k)."""
    r = np.asarray(r_tilde, dtype=float)
    d = np.asarray(distances, dtype=float)
    mean_d = d.mean(axis=-1)
    if v.kind == "multiplicative":
        return r * (1.0 - mean_d)
    if v.kind == "additive_mean":
        return r - v.lam * mean_d
    if v.kind == "additive_min":
        return r - v.lam * d.min(axis=-1)
    if v.kind == "additive_max":
        return r - v.lam * d.max(axis=-1)
    if v.kind == "inverse":
        clamped = np.maximum(mean_d, v.eps_d)
        if np.any(mean_d < v.eps_d):
            log.info("inverse variant: mean distance clamped to eps_d=%g", v.eps_d)
        return r * v.lam / clamped
    if v.kind == "gaussian_sample":
        var = v.lam * mean_d
        if rng is None:
            if np.any(var > 0):
                raise ParameterError("gaussian_sample needs an rng")
            return r * 1.0
        return r + np.sqrt(var) * rng.standard_normal(np.shape(r))
    # weighted_average: similarity-weighted mean over contributing neighbors
    if nbr_vals is None:
        raise ParameterError("weighted_average needs the neighbors' rewards")
    vals = np.asarray(nbr_vals, dtype=float)
    w = np.where(np.isnan(vals), 0.0, 1.0 - d)
    total = w.sum(axis=-1)
    num = np.where(np.isnan(vals), 0.0, vals * w).sum(axis=-1)
    ok = total > 0
    return np.where(ok, num / np.where(ok, total, 1.0), r)


def apply_uncertainty_variant(r_tilde, nbrs, v, rng=None, reward_range=None, nbr_vals=None):
    out = float(_variant_arrays(r_tilde, nbrs.distances, v, nbr_vals, rng))
    if reward_range is not None:
        out = min(max(out, reward_range[0]), reward_range[1])
    return out


def combined_reward(r_tilde, p_u, p_e, lambda_e, variant=UncertaintyVariant(), nbrs=None, rng=None,
                    reward_range=None, nbr_vals=None):
    """Variant-penalised shaped reward plus the (unclipped) entropy bonus."""
    if nbrs is None:
        if variant.kind in ("additive_min", "additive_max", "weighted_average"):
            raise ParameterError(f"variant {variant.kind} needs the neighbor set")
        nbrs = NeighborSet(-1, np.array([-1]), np.array([float(p_u)]))
    penalised = apply_uncertainty_variant(r_tilde, nbrs, variant, rng, reward_range, nbr_vals)
    return penalised + lambda_e * p_e


# ------------------------------------------------------------ entropy bonus


def _pattern(cats):
    return tuple(sorted(int(c) for c in cats))


@dataclass
class EntropyTable:
    """Next-category counts keyed by (order, unordered category pattern)."""

    n_categories: int
    orders: tuple
    counts: dict = field(default_factory=dict)

    def lookup(self, order, pattern, next_category):
        c = self.counts.get((order, _pattern(pattern)))
        return 0 if c is None else c.get(int(next_category), 0)

    def entropy(self, order, pattern):
        c = self.counts.get((order, _pattern(pattern)))
        if not c:
            return math.log(self.n_categories)
        total = sum(c.values())
        h = 0.0
        for n in c.values():
            p = n / total
            h -= p * math.log(p)
        return max(h, 0.0)

    def penalty(self, categories):
        """Summed entropy over orders for the pattern ending at the latest category.

        Histories shorter than an order count as unseen patterns.
        """
        total = 0.0
        for o in self.orders:
            if len(categories) < o:
                total += math.log(self.n_categories)
            else:
                total += self.entropy(o, categories[len(categories) - o:])
        return total

    def max_penalty(self):
        return len(self.orders) * math.log(self.n_categories)

    def rows(self):
        for (order, pattern), c in sorted(self.counts.items()):
            h = self.entropy(order, pattern)
            for cat in sorted(c):
                yield order, " ".join(map(str, pattern)), cat, c[cat], h

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["order", "pattern", "category", "count", "entropy"])
            for row in self.rows():
                w.writerow([row[0], row[1], row[2], row[3], repr(row[4])])


def entropy_penalty(log, cats, orders=(1, 2)):
    orders = tuple(sorted(set(int(o) for o in orders)))
    if not orders or orders[0] < 1:
        raise ParameterError("orders must be a non-empty set of counts >= 1")
    counts = defaultdict(Counter)
    for _, items in log.sequences():
        seq = cats.item_category[items].tolist()
        for o in orders:
            for t in range(o - 1, len(seq) - 1):
                counts[(o, _pattern(seq[t - o + 1:t + 1]))][seq[t + 1]] += 1
    return EntropyTable(cats.n_categories, orders, dict(counts))


# ----------------------------------------------------------- reward tables


class ShapedRewardTable:
    """Training reward source: per-cell penalised reward plus entropy bonus.

    ``r_tilde`` is the feedback the state tracker sees; ``penalised`` is the
    variant-adjusted reward. Every read bumps ``reads`` so tests can prove the
    evaluator never consults a training table.
    """

    def __init__(self, r_tilde, penalised, p_u, reward_range, variant=UncertaintyVariant(), lambda_e=0.0,
                 lambda_u=0.0, entropy=None, gauss_var=None, label="roler"):
        self.r_tilde = _ro(r_tilde)
        self.penalised = _ro(penalised)
        self.p_u = _ro(p_u)
        self.reward_range = tuple(reward_range)
        self.variant = variant
        self.lambda_e = float(lambda_e)
        self.lambda_u = float(lambda_u)
        self.entropy = entropy
        self.gauss_var = None if gauss_var is None else _ro(gauss_var)
        self.label = label
        self.reads = 0

    @property
    def shape(self):
        return self.r_tilde.shape

    def feedback(self, users, items):
        self.reads += 1
        return self.r_tilde[users, items]

    def reward(self, users, items, cat_histories, rng=None):
        """Training reward for recommending ``items``; ``cat_histories`` end with the item's category."""
        self.reads += 1
        out = self.penalised[users, items].astype(float)
        if self.gauss_var is not None and rng is not None:
            sd = np.sqrt(self.gauss_var[users, items])
            out = np.clip(out + sd * rng.standard_normal(out.shape), *self.reward_range)
        if self.entropy is not None and self.lambda_e:
            out = out + self.lambda_e * np.array([self.entropy.penalty(h) for h in cat_histories])
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "item", "r_tilde", "p_u"])
            p = np.broadcast_to(self.p_u.reshape(self.p_u.shape + (1,) * (2 - self.p_u.ndim)), self.shape)
            for u in range(self.shape[0]):
                for i in range(self.shape[1]):
                    w.writerow([u, i, repr(float(self.r_tilde[u, i])), repr(float(p[u, i]))])


def _ro(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def shape_all(source, neighbor_sets, fallback):
    """Dense r_tilde for every query user in ``neighbor_sets`` (rows ordered as given)."""
    fm = _as_matrix(source)
    rows = []
    for nbrs, fb in zip(neighbor_sets, fallback):
        vals = fm.values[nbrs.users]
        observed = ~np.isnan(vals)
        n = observed.sum(axis=0)
        s = np.where(observed, vals, 0.0).sum(axis=0)
        rows.append(np.where(n > 0, s / np.maximum(n, 1), fb))
    return np.array(rows)


def build_shaped_table(source, feats, k, fallback, metric="cosine", variant=UncertaintyVariant(),
                       lambda_e=0.0, entropy=None, candidates=None, include_self=False,
                       use_uncertainty=True, label="roler", backend=None):
    """Precompute r_tilde, P_U and the penalised reward for every user.

    ``fallback`` is the world-model mean matrix used where no neighbor saw an item.
    With ``use_uncertainty=False`` the shaped reward is used unpenalised.
    """
    fm = _as_matrix(source)
    n_users = fm.n_users
    if candidates is None:
        candidates = np.flatnonzero(fm.mask.any(axis=1))
    sets = knn_all(feats, np.arange(n_users), k, metric, candidates, include_self, backend)
    fallback = np.asarray(fallback, dtype=float)
    r_tilde = np.clip(shape_all(fm, sets, fallback), *fm.reward_range)
    dists = np.stack([s.distances for s in sets])
    p_u = dists.mean(axis=1)
    gauss_var = None
    if not use_uncertainty:
        penalised = r_tilde.copy()
    elif variant.kind == "gaussian_sample":
        penalised = r_tilde.copy()
        gauss_var = np.broadcast_to((variant.lam * p_u)[:, None], r_tilde.shape)
    else:
        nbr_vals = np.stack([fm.values[s.users] for s in sets]).transpose(0, 2, 1)  # (U, I, k)
        penalised = _variant_arrays(r_tilde, dists[:, None, :], variant, nbr_vals)
        penalised = np.clip(penalised, *fm.reward_range)
    table = ShapedRewardTable(r_tilde, penalised, p_u, fm.reward_range, variant, lambda_e,
                              variant.lam, entropy, gauss_var, label)
    table.neighbor_sets = sets
    return table


def baseline_table(mean_matrix, reward_range, p_u=None, lambda_u=0.0, lambda_e=0.0, entropy=None,
                   label="baseline"):
    """World-model reward with an optional additive penalty ``mean - lambda_u * p_u``."""
    mean_matrix = np.asarray(mean_matrix, dtype=float)
    if p_u is None:
        p_u = np.zeros(mean_matrix.shape[0])
    p = np.asarray(p_u, dtype=float)
    p_cells = p if p.ndim == 2 else p[:, None]
    penalised = np.clip(mean_matrix - lambda_u * p_cells, *reward_range)
    return ShapedRewardTable(mean_matrix, penalised, p, reward_range,
                             UncertaintyVariant("additive_mean", lambda_u), lambda_e, lambda_u, entropy,
                             label=label)


def shaped_rmse(values, gt):
    diff = np.asarray(values, dtype=float) - gt.values
    return float(np.sqrt(np.mean(diff[gt.mask] ** 2)))
