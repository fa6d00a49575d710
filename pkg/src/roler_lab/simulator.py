"""Batched interactive environments.

``RecEnv`` simulates users receiving one recommendation per step with the
category quit rule; it serves both training (reward from a reward table) and
evaluation (reward from the ground-truth matrix). ``MDPEnv`` wraps a finite
MDP with one-hot observations for checking the learner on known problems.

Environments run many episodes in lockstep: ``reset`` starts them,
``active`` lists the episodes still running, ``observe`` returns their
observations and action masks, and ``step`` advances them.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import FeedbackMatrix
from .tracker import Window


@dataclass(frozen=True)
class QuitConfig:
    quit_m: int = 0
    quit_n: int = 4
    max_len: int = 30

    def __post_init__(self):
        if self.quit_n < 1:
            raise ValueError("quit_n must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.quit_m < 0:
            raise ValueError("quit_m must be >= 0")


def quit_check(recent_categories, next_category, quit_m=0, quit_n=4):
    """True when the incoming item makes the user leave.

    The window is the incoming item plus the ``quit_n - 1`` most recent ones;
    the user leaves once more than ``quit_m`` earlier items in it share the
    incoming item's category.
    """
    recent = list(recent_categories)[-(quit_n - 1):] if quit_n > 1 else []
    return sum(1 for c in recent if c == next_category) > quit_m


class RecEnv:
    def __init__(self, reward_source, cats, actions, window, quit=QuitConfig(), users=None):
        self.source = reward_source
        self.is_ground_truth = isinstance(reward_source, FeedbackMatrix)
        if self.is_ground_truth and not reward_source.is_fully_observed():
            raise ValueError("evaluation needs a fully observed ground-truth matrix")
        self.cats = cats
        self.actions = actions
        self.window = window
        self.quit = quit
        n_users, n_items = reward_source.shape
        self.n_items = n_items
        self.n_actions = n_items
        self.users_pool = np.arange(n_users) if users is None else np.asarray(users, dtype=np.int64)
        self.dim = actions.dim + 1
        self.active = np.zeros(0, dtype=np.int64)

    @property
    def state_dim(self):
        return self.dim

    def reset(self, rng, n, users=None):
        if users is None:
            users = self.users_pool[rng.integers(0, self.users_pool.size, size=n)]
        self.users = np.asarray(users, dtype=np.int64)
        n = self.users.size
        self.hist = np.zeros((n, self.window, self.dim))
        self.valid = np.zeros((n, self.window), dtype=bool)
        self.valid[:, -1] = True  # cold start: one zero action with reward 0
        self.shown = np.zeros((n, self.n_items), dtype=bool)
        self.cat_hist = [[] for _ in range(n)]
        self.items = [[] for _ in range(n)]
        self.rewards = [[] for _ in range(n)]
        self.length = np.zeros(n, dtype=np.int64)
        self.active = np.arange(n)

    def observe(self):
        a = self.active
        return Window(self.hist[a], self.valid[a]), ~self.shown[a]

    def step(self, actions, rng=None):
        a = self.active
        users = self.users[a]
        actions = np.asarray(actions, dtype=np.int64)
        if np.any(self.shown[a, actions]):
            raise RuntimeError("an item was recommended twice within an episode")
        item_cats = self.cats.item_category[actions]
        leaving = np.array(
            [quit_check(self.cat_hist[e], c, self.quit.quit_m, self.quit.quit_n) for e, c in zip(a, item_cats)],
            dtype=bool,
        )
        for e, c in zip(a.tolist(), item_cats.tolist()):
            self.cat_hist[e].append(c)
        if self.is_ground_truth:
            feedback = self.source.values[users, actions]
            reward = feedback
        else:
            feedback = self.source.feedback(users, actions)
            reward = self.source.reward(users, actions, [self.cat_hist[e] for e in a], rng)
        self.shown[a, actions] = True
        self.length[a] += 1
        for e, i, r in zip(a.tolist(), actions.tolist(), reward.tolist()):
            self.items[e].append(i)
            self.rewards[e].append(r)
        self.hist[a, :-1] = self.hist[a, 1:]
        self.valid[a, :-1] = self.valid[a, 1:]
        self.hist[a, -1, :-1] = self.actions.vectors[actions]
        self.hist[a, -1, -1] = feedback
        self.valid[a, -1] = True
        first = self.length[a] == 1
        if np.any(first):
            # the cold-start placeholder is dropped once real history exists
            fa = a[first]
            self.valid[fa, :-1] = False
        done = leaving | (self.length[a] >= self.quit.max_len) | self.shown[a].all(axis=1)
        self.active = a[~done]
        return np.asarray(reward, dtype=float), done


class MDPEnv:
    """Finite MDP with one-hot observations; ``terminal`` states end episodes."""

    def __init__(self, mdp, start_state=0, terminal=(), max_steps=100):
        self.mdp = mdp
        self.start_state = start_state
        self.terminal = set(terminal)
        self.max_steps = max_steps
        self.n_actions = mdp.n_actions
        self.state_dim = mdp.n_states
        self.active = np.zeros(0, dtype=np.int64)

    def reset(self, rng, n, states=None):
        self.state = np.full(n, self.start_state) if states is None else np.asarray(states)
        self.t = np.zeros(n, dtype=np.int64)
        self.active = np.arange(n)

    def observe(self):
        obs = np.eye(self.mdp.n_states)[self.state[self.active]]
        return obs, np.ones((self.active.size, self.n_actions), dtype=bool)

    def step(self, actions, rng):
        a = self.active
        s = self.state[a]
        r = self.mdp.rewards[s, actions]
        nxt = np.array([rng.choice(self.mdp.n_states, p=self.mdp.transition[si, ai]) for si, ai in zip(s, actions)])
        self.state[a] = nxt
        self.t[a] += 1
        done = np.array([x in self.terminal for x in nxt.tolist()], dtype=bool) | (self.t[a] >= self.max_steps)
        self.active = a[~done]
        return r.astype(float), done
