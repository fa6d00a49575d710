"""Interactive evaluation against the ground-truth environment."""

import csv
from dataclasses import dataclass

import numpy as np

from ._seeding import stream
from .policy import rollout
from .simulator import QuitConfig, RecEnv, quit_check

__all__ = ["QuitConfig", "quit_check", "EpisodeResult", "EvalReport", "run_episode", "evaluate",
           "greedy_oracle_rollout"]


@dataclass(frozen=True)
class EpisodeResult:
    user: int
    items: tuple
    rewards: tuple
    categories: tuple
    mcd_hits: int

    @property
    def length(self):
        return len(self.items)

    @property
    def R_tra(self):
        return float(sum(self.rewards))

    @property
    def R_each(self):
        return self.R_tra / self.length if self.length else 0.0


@dataclass(frozen=True)
class EvalReport:
    R_tra: float
    R_tra_std: float
    R_each: float
    length: float
    mcd: float
    n_episodes: int

    FIELDS = ("R_tra", "R_tra_std", "R_each", "length", "MCD", "n_episodes")

    def row(self):
        return [self.R_tra, self.R_tra_std, self.R_each, self.length, self.mcd, self.n_episodes]

    def as_dict(self):
        return dict(zip(self.FIELDS, self.row()))


def _episodes_from_env(env, majority):
    out = []
    for e in range(env.users.size):
        cats = tuple(env.cat_hist[e])
        out.append(
            EpisodeResult(
                int(env.users[e]),
                tuple(env.items[e]),
                tuple(float(r) for r in env.rewards[e]),
                cats,
                int(sum(1 for c in cats if c in majority)),
            )
        )
    return out


def _majority_set(cats, top_categories):
    return {int(cats.majority_category)} if top_categories is None else {int(c) for c in top_categories}


def run_episodes(policy, gt, cats, users, quit=QuitConfig(), seed=0, greedy=False, top_categories=None):
    """Roll out one episode per entry of ``users`` in lockstep on ground truth."""
    env = RecEnv(gt, cats, policy.actions, policy.tracker.window, quit)
    rng = stream(seed, "eval", "actions")
    rollout(policy, env, rng, len(users), greedy=greedy, users=np.asarray(users, dtype=np.int64))
    return _episodes_from_env(env, _majority_set(cats, top_categories))


def run_episode(policy, gt, cats, user, quit=QuitConfig(), seed=0, greedy=False):
    return run_episodes(policy, gt, cats, [user], quit, seed, greedy)[0]


def summarize(episodes):
    r_tra = np.array([e.R_tra for e in episodes])
    lengths = np.array([e.length for e in episodes], dtype=float)
    total_items = lengths.sum()
    hits = sum(e.mcd_hits for e in episodes)
    return EvalReport(
        R_tra=float(r_tra.mean()),
        R_tra_std=float(r_tra.std()),
        R_each=float(np.mean([e.R_each for e in episodes])),
        length=float(lengths.mean()),
        mcd=float(hits / total_items) if total_items else 0.0,
        n_episodes=len(episodes),
    )


def sample_eval_users(users, n_episodes, seed):
    users = np.asarray(users, dtype=np.int64)
    return users[stream(seed, "eval", "users").integers(0, users.size, size=n_episodes)]


def evaluate(policy, gt, cats, users, n_episodes, quit=QuitConfig(), seed=0, greedy=False,
             top_categories=None, return_episodes=False):
    """Average metrics over ``n_episodes`` users resampled uniformly from ``users``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    chosen = sample_eval_users(users, n_episodes, seed)
    episodes = run_episodes(policy, gt, cats, chosen, quit, seed, greedy, top_categories)
    report = summarize(episodes)
    return (report, episodes) if return_episodes else report


def greedy_oracle_rollout(gt, cats, user, quit=QuitConfig()):
    """Reference episode: best remaining ground-truth item that keeps the user.

    Items whose category would trigger the quit rule are skipped while any
    other item remains, so the oracle only stops at ``max_len`` or exhaustion.
    """
    values = gt.values[user]
    order = np.lexsort((np.arange(values.size), -values))
    shown = set()
    recent, items, rewards = [], [], []
    while len(items) < quit.max_len and len(shown) < values.size:
        pick = None
        for i in order.tolist():
            if i in shown:
                continue
            if not quit_check(recent, cats.item_category[i], quit.quit_m, quit.quit_n):
                pick = i
                break
        leaving = pick is None
        if leaving:
            pick = next(i for i in order.tolist() if i not in shown)
        shown.add(pick)
        items.append(pick)
        rewards.append(float(values[pick]))
        recent.append(int(cats.item_category[pick]))
        if leaving:
            break
    majority = {int(cats.majority_category)}
    return EpisodeResult(int(user), tuple(items), tuple(rewards), tuple(recent),
                         sum(1 for c in recent if c in majority))


def write_episodes_csv(path, episodes, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "user", "length", "R_tra", "mcd_hits"])
        for j, e in enumerate(episodes):
            w.writerow([j, e.user, e.length, repr(e.R_tra), e.mcd_hits])
