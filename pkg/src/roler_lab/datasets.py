"""Core data model, synthetic generation and small-file loaders.

All containers are frozen dataclasses over read-only numpy arrays, so they can
be shared between workers without copying.
"""

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._seeding import stream
from .errors import ConfigError, ParseError

FEATURE_SOURCES = ("interaction_history_row", "world_model_embedding", "raw_static_features")


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeedbackMatrix:
    """User x item rewards. Unobserved cells hold NaN and ``mask`` False."""

    values: np.ndarray
    mask: np.ndarray
    reward_range: tuple

    def __post_init__(self):
        values = _frozen(self.values, float)
        mask = _frozen(self.mask, bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise ValueError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        values = np.where(mask, values, np.nan)
        values.setflags(write=False)
        lo, hi = map(float, self.reward_range)
        obs = values[mask]
        if obs.size and (obs.min() < lo or obs.max() > hi):
            raise ValueError(f"observed values outside reward_range [{lo}, {hi}]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "reward_range", (lo, hi))

    @classmethod
    def full(cls, values, reward_range):
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones(values.shape, dtype=bool), reward_range)

    @property
    def n_users(self):
        return self.values.shape[0]

    @property
    def n_items(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def observed_fraction(self):
        return float(self.mask.sum()) / self.mask.size

    def is_fully_observed(self):
        return bool(self.mask.all())

    def __eq__(self, other):
        if not isinstance(other, FeedbackMatrix):
            return NotImplemented
        return (
            self.reward_range == other.reward_range
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class InteractionLog:
    """Offline events sorted by (user, timestep)."""

    users: np.ndarray
    items: np.ndarray
    rewards: np.ndarray
    timesteps: np.ndarray
    n_users: int
    n_items: int
    reward_range: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=float)
        steps = np.asarray(self.timesteps, dtype=np.int64)
        if not (users.shape == items.shape == rewards.shape == steps.shape) or users.ndim != 1:
            raise ValueError("event columns must be 1-D and equally long")
        if users.size:
            if users.min() < 0 or users.max() >= self.n_users:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise ValueError("item index out of range")
            lo, hi = self.reward_range
            if rewards.min() < lo or rewards.max() > hi:
                raise ValueError("reward outside reward_range")
        order = np.lexsort((steps, users))
        users, items, rewards, steps = users[order], items[order], rewards[order], steps[order]
        same_user = users[1:] == users[:-1]
        if np.any(same_user & (steps[1:] <= steps[:-1])):
            raise ValueError("per-user timesteps must be strictly increasing")
        for name, arr in (("users", users), ("items", items), ("rewards", rewards), ("timesteps", steps)):
            object.__setattr__(self, name, _frozen(arr))
        object.__setattr__(self, "reward_range", tuple(map(float, self.reward_range)))

    def __len__(self):
        return int(self.users.size)

    @property
    def events(self):
        return list(zip(self.users.tolist(), self.items.tolist(), self.rewards.tolist(), self.timesteps.tolist()))

    def users_present(self):
        return np.unique(self.users)

    def sequences(self):
        """Yield ``(user, items_in_time_order)`` for every user with events."""
        if not len(self):
            return
        bounds = np.flatnonzero(np.diff(self.users)) + 1
        for chunk_u, chunk_i in zip(np.split(self.users, bounds), np.split(self.items, bounds)):
            yield int(chunk_u[0]), chunk_i

    def to_matrix(self, reward_range=None):
        """Observed feedback as a matrix; the latest event wins on repeats."""
        values = np.full((self.n_users, self.n_items), np.nan)
        values[self.users, self.items] = self.rewards
        return FeedbackMatrix(values, ~np.isnan(values), reward_range or self.reward_range)

    def __eq__(self, other):
        if not isinstance(other, InteractionLog):
            return NotImplemented
        return (
            (self.n_users, self.n_items) == (other.n_users, other.n_items)
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("users", "items", "rewards", "timesteps")
            )
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CategoryMap:
    item_category: np.ndarray
    n_categories: int
    majority_category: int

    def __post_init__(self):
        object.__setattr__(self, "item_category", _frozen(self.item_category, np.int64))
        if self.item_category.size and (
            self.item_category.min() < 0 or self.item_category.max() >= self.n_categories
        ):
            raise ValueError("category index out of range")

    @classmethod
    def from_log(cls, item_category, log, n_categories=None):
        item_category = np.asarray(item_category, dtype=np.int64)
        n_categories = int(n_categories or item_category.max() + 1)
        counts = np.bincount(item_category[log.items], minlength=n_categories)
        # argmax returns the first maximum -> smallest index on ties
        return cls(item_category, n_categories, int(np.argmax(counts)))

    def top_categories(self, log, p):
        counts = np.bincount(self.item_category[log.items], minlength=self.n_categories)
        order = np.lexsort((np.arange(self.n_categories), -counts))
        return order[:p]

    def __eq__(self, other):
        return (
            isinstance(other, CategoryMap)
            and self.n_categories == other.n_categories
            and self.majority_category == other.majority_category
            and np.array_equal(self.item_category, other.item_category)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class UserFeatures:
    vectors: np.ndarray
    source: str = "interaction_history_row"

    def __post_init__(self):
        if self.source not in FEATURE_SOURCES:
            raise ValueError(f"unknown feature source {self.source!r}")
        object.__setattr__(self, "vectors", _frozen(np.atleast_2d(self.vectors), float))

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, UserFeatures)
            and self.source == other.source
            and np.array_equal(self.vectors, other.vectors)
        )

    __hash__ = None


def history_features(log):
    """Each user's row of observed rewards, gaps filled with the user's mean.

    Users without events fall back to the global mean reward.
    """
    sums = np.zeros((log.n_users, log.n_items))
    counts = np.zeros((log.n_users, log.n_items))
    np.add.at(sums, (log.users, log.items), log.rewards)
    np.add.at(counts, (log.users, log.items), 1.0)
    observed = counts > 0
    cell = np.divide(sums, counts, out=np.zeros_like(sums), where=observed)
    global_mean = float(log.rewards.mean()) if len(log) else 0.0
    n_obs = observed.sum(axis=1)
    user_mean = np.divide(cell.sum(axis=1), n_obs, out=np.full(log.n_users, global_mean), where=n_obs > 0)
    return UserFeatures(np.where(observed, cell, user_mean[:, None]), "interaction_history_row")


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 60
    n_items: int = 40
    n_clusters: int = 3
    within_cluster_reward_noise: float = 0.0
    observation_noise: float = 0.0
    log_density: float = 0.5
    seed: int = 0
    reward_range: tuple = (0.0, 1.0)
    n_categories: int = 8

    def validate(self):
        for name in ("n_users", "n_items", "n_clusters", "n_categories"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.n_clusters > self.n_users:
            raise ConfigError("n_clusters", "must not exceed n_users")
        if self.n_categories > self.n_items:
            raise ConfigError("n_categories", "must not exceed n_items")
        if self.within_cluster_reward_noise < 0:
            raise ConfigError("within_cluster_reward_noise", "must be >= 0")
        if self.observation_noise < 0:
            raise ConfigError("observation_noise", "must be >= 0")
        if not 0.0 < self.log_density <= 1.0:
            raise ConfigError("log_density", "must lie in (0, 1]")
        if round(self.log_density * self.n_users * self.n_items) < self.n_users:
            raise ConfigError("log_density", "too low to give every user one event")
        lo, hi = self.reward_range
        if not lo < hi:
            raise ConfigError("reward_range", "min must be < max")
        return self


class SyntheticDataset(NamedTuple):
    gt: FeedbackMatrix
    log: InteractionLog
    cats: CategoryMap
    feats: UserFeatures


def planted_clusters(cfg):
    """Cluster label of every user (balanced sizes, seeded shuffle)."""
    rng = stream(cfg.seed, "synthetic", "clusters")
    return rng.permutation(np.arange(cfg.n_users) % cfg.n_clusters)


def generate_synthetic(cfg):
    cfg.validate()
    lo, hi = cfg.reward_range
    n_users, n_items = cfg.n_users, cfg.n_items
    labels = planted_clusters(cfg)
    prototypes = stream(cfg.seed, "synthetic", "prototypes").uniform(lo, hi, size=(cfg.n_clusters, n_items))
    rows = prototypes[labels]
    if cfg.within_cluster_reward_noise > 0:
        noise = stream(cfg.seed, "synthetic", "cluster_noise").normal(0.0, cfg.within_cluster_reward_noise, rows.shape)
        rows = np.clip(rows + noise, lo, hi)
    gt = FeedbackMatrix.full(rows, (lo, hi))

    rng = stream(cfg.seed, "synthetic", "log")
    n_obs = int(round(cfg.log_density * n_users * n_items))
    # one guaranteed cell per user, the rest uniformly without replacement
    first = rng.integers(0, n_items, size=n_users)
    chosen = np.zeros((n_users, n_items), dtype=bool)
    chosen[np.arange(n_users), first] = True
    rest = np.flatnonzero(~chosen.ravel())
    extra = rng.choice(rest, size=n_obs - n_users, replace=False)
    chosen.ravel()[extra] = True
    users, items = np.nonzero(chosen)
    obs = gt.values[users, items]
    if cfg.observation_noise > 0:
        obs = np.clip(obs + rng.normal(0.0, cfg.observation_noise, obs.shape), lo, hi)
    steps = np.empty_like(users)
    for u in range(n_users):
        idx = np.flatnonzero(users == u)
        steps[idx] = rng.permutation(idx.size)
    log = InteractionLog(users, items, obs, steps, n_users, n_items, (lo, hi))

    cats = CategoryMap.from_log(np.arange(n_items) % cfg.n_categories, log, cfg.n_categories)
    return SyntheticDataset(gt, log, cats, history_features(log))


# ---------------------------------------------------------------- file I/O


def _check_range(path, lineno, value, reward_range):
    lo, hi = reward_range
    if not lo <= value <= hi:
        raise ParseError(path, lineno, f"value {value!r} outside reward range [{lo}, {hi}]")


def load_dense_matrix(path, reward_range, fully_observed=False):
    """Parse a whitespace-separated user x item file.

    Zero marks an unobserved cell unless ``fully_observed`` is set, which is
    how ground-truth matrices whose range contains 0 are stored.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                row = [float(t) for t in tokens]
            except ValueError:
                bad = next(t for t in tokens if not _is_float(t))
                raise ParseError(path, lineno, f"non-numeric token {bad!r}") from None
            if rows and len(row) != len(rows[0][1]):
                raise ParseError(path, lineno, f"expected {len(rows[0][1])} columns, got {len(row)}")
            rows.append((lineno, row))
    if not rows:
        raise ParseError(path, 1, "empty matrix file")
    values = np.array([r for _, r in rows], dtype=float)
    mask = np.ones(values.shape, dtype=bool) if fully_observed else values != 0
    for (lineno, row), m in zip(rows, mask):
        for v, observed in zip(row, m):
            if observed:
                _check_range(path, lineno, v, reward_range)
    return FeedbackMatrix(values, mask, reward_range)


def _is_float(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def write_dense_matrix(path, fm):
    with open(path, "w", newline="\n") as fh:
        for row, m in zip(fm.values, fm.mask):
            fh.write(" ".join(repr(float(v)) if ok else "0" for v, ok in zip(row, m)) + "\n")


LOG_HEADER = ["user", "item", "reward", "timestep"]


def load_interaction_log(path, n_users, n_items, reward_range):
    records = []
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#") or not line.strip():
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                if [h.strip() for h in row] != LOG_HEADER:
                    raise ParseError(path, lineno, f"header must be {','.join(LOG_HEADER)}")
                header_seen = True
                continue
            if len(row) != 4:
                raise ParseError(path, lineno, f"expected 4 fields, got {len(row)}")
            try:
                u, i, t = int(row[0]), int(row[1]), int(row[3])
                r = float(row[2])
            except ValueError:
                raise ParseError(path, lineno, "malformed field") from None
            if not 0 <= u < n_users:
                raise ParseError(path, lineno, f"user {u} out of range")
            if not 0 <= i < n_items:
                raise ParseError(path, lineno, f"item {i} out of range")
            if math.isnan(r):
                raise ParseError(path, lineno, "reward is NaN")
            _check_range(path, lineno, r, reward_range)
            records.append((u, t, lineno, i, r))
    if not header_seen:
        raise ParseError(path, 1, f"header must be {','.join(LOG_HEADER)}")
    records.sort(key=lambda rec: (rec[0], rec[1]))
    for prev, cur in zip(records, records[1:]):
        if prev[0] == cur[0] and prev[1] == cur[1]:
            raise ParseError(path, max(prev[2], cur[2]), f"duplicate timestep {cur[1]} for user {cur[0]}")
    return InteractionLog(
        [rec[0] for rec in records],
        [rec[3] for rec in records],
        [rec[4] for rec in records],
        [rec[1] for rec in records],
        n_users,
        n_items,
        reward_range,
    )


def write_interaction_log(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for u, i, r, t in log.events:
            w.writerow([u, i, repr(r), t])


def write_categories(path, cats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "category"])
        for item, c in enumerate(cats.item_category.tolist()):
            w.writerow([item, c])


def load_categories(path, n_items, log=None, n_categories=None):
    item_category = np.full(n_items, -1, dtype=np.int64)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["item", "category"]:
            raise ParseError(path, 1, "header must be item,category")
        for row in reader:
            if not row:
                continue
            try:
                item, cat = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise ParseError(path, reader.line_num, "malformed row") from None
            if not 0 <= item < n_items or cat < 0:
                raise ParseError(path, reader.line_num, "index out of range")
            if item_category[item] != -1:
                raise ParseError(path, reader.line_num, f"item {item} listed twice")
            item_category[item] = cat
    missing = np.flatnonzero(item_category < 0)
    if missing.size:
        raise ParseError(path, 0, f"item {int(missing[0])} has no category")
    if log is None:
        n = int(n_categories or item_category.max() + 1)
        return CategoryMap(item_category, n, 0)
    return CategoryMap.from_log(item_category, log, n_categories)


def write_features(path, feats):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# source={feats.source}\n")
        for row in feats.vectors:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_features(path):
    source = "raw_static_features"
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("# source="):
                source = line.strip().split("=", 1)[1]
                continue
            if not line.strip():
                continue
            try:
                rows.append([float(t) for t in line.split()])
            except ValueError:
                raise ParseError(path, lineno, "non-numeric token") from None
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(path, lineno, "ragged feature row")
    if not rows:
        raise ParseError(path, 0, "empty feature file")
    return UserFeatures(np.array(rows), source)
