import numpy as np
import pytest

from roler_lab._seeding import stream
from roler_lab.datasets import CategoryMap, FeedbackMatrix
from roler_lab.evaluator import (
    EpisodeResult,
    QuitConfig,
    evaluate,
    greedy_oracle_rollout,
    quit_check,
    run_episode,
    run_episodes,
    sample_eval_users,
    summarize,
    write_episodes_csv,
)
from roler_lab.policy import A2CConfig, Policy, TrackerConfig, a2c_train, init_actions
from roler_lab.shaping import build_shaped_table
from roler_lab.simulator import RecEnv


class Scripted:
    """Minimal policy stand-in: picks items by a rule instead of a network."""

    gamma = 0.9

    def __init__(self, n_items, rule, window=3):
        self.actions = init_actions(None, n_items, 2, seed=0)
        self.tracker = TrackerConfig(window=window).build(3)
        self.rule = rule

    def act(self, obs, masks, rng, greedy=False):
        return np.array([self.rule(m, rng) for m in masks])


def lowest_free(mask, rng):
    return int(np.flatnonzero(mask)[0])


def uniform_free(mask, rng):
    free = np.flatnonzero(mask)
    return int(free[rng.integers(free.size)])


def _env(n_users=3, n_items=40, n_categories=4, seed=0):
    rng = np.random.default_rng(seed)
    gt = FeedbackMatrix.full(rng.random((n_users, n_items)), (0, 1))
    cats = CategoryMap(np.arange(n_items) % n_categories, n_categories, 0)
    return gt, cats


# ------------------------------------------------------------- quit rule


def test_quit_examples():
    assert quit_check([1, 2, 3], 2, 0, 4)
    assert not quit_check([1, 2, 3], 4, 0, 4)
    assert not quit_check([1], 1, quit_m=1, quit_n=2)


def _quit_oracle(recent, nxt, m, n):
    window = (list(recent) + [nxt])[-n:]
    return window.count(nxt) - 1 > m


def test_quit_randomized_windows():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(0, 3))
        recent = rng.integers(0, 4, int(rng.integers(0, 10))).tolist()
        nxt = int(rng.integers(0, 4))
        assert quit_check(recent, nxt, m, n) == _quit_oracle(recent, nxt, m, n)


# --------------------------------------------------------------- episodes


def test_cycling_categories_reach_max_len():
    gt, cats = _env()
    ep = run_episode(Scripted(40, lowest_free), gt, cats, 0, QuitConfig(0, 4, 30))
    assert ep.length == 30


def test_immediate_repeat_stops_at_two():
    gt, cats = _env()
    order = iter([0, 4])
    ep = run_episode(Scripted(40, lambda m, r: next(order)), gt, cats, 0, QuitConfig(0, 4, 30))
    assert ep.length == 2
    assert ep.categories == (0, 0)


def test_exhaustion_ends_cleanly():
    gt, cats = _env(n_items=10, n_categories=10)
    ep = run_episode(Scripted(10, lowest_free), gt, cats, 1, QuitConfig(0, 4, 30))
    assert ep.length == 10
    assert sorted(ep.items) == list(range(10))


@pytest.mark.parametrize("n_items", [8, 40])
def test_window_of_one_never_quits(n_items):
    gt, cats = _env(n_items=n_items, n_categories=2)
    eps = run_episodes(Scripted(n_items, uniform_free), gt, cats, [0, 1, 2] * 5, QuitConfig(0, 1, 30), seed=3)
    assert all(e.length == min(30, n_items) for e in eps)


def test_no_repeats_and_reward_identities():
    gt, cats = _env(n_users=6)
    eps = run_episodes(Scripted(40, uniform_free), gt, cats, list(range(6)) * 10, QuitConfig(), seed=1)
    for e in eps:
        assert len(set(e.items)) == len(e.items)
        assert e.R_tra == sum(e.rewards)
        assert e.R_each * e.length == pytest.approx(e.R_tra, rel=0, abs=1e-12)
        assert list(e.rewards) == [gt.values[e.user, i] for i in e.items]


def test_env_rejects_repeat():
    gt, cats = _env()
    env = RecEnv(gt, cats, init_actions(None, 40, 2), 3)
    env.reset(np.random.default_rng(0), 1, users=[0])
    env.step(np.array([5]))
    with pytest.raises(RuntimeError):
        env.step(np.array([5]))


def test_mcd_and_summary_arithmetic():
    e1 = EpisodeResult(0, tuple(range(10)), (0.5,) * 10, (0, 0, 0, 0, 1, 2, 3, 1, 2, 3), 4)
    assert e1.mcd_hits / e1.length == 0.4
    e2 = EpisodeResult(1, tuple(range(30)), (0.5,) * 30, (1,) * 30, 0)
    assert e2.R_tra == 15.0 and e2.R_each == 0.5
    rep = summarize([e1, e2])
    assert rep.mcd == 4 / 40
    assert rep.R_tra == (5.0 + 15.0) / 2
    assert rep.length == 20.0


def test_mcd_counts_majority_category():
    gt, cats = _env(n_categories=4)
    cats = CategoryMap(cats.item_category, 4, 2)
    eps = run_episodes(Scripted(40, uniform_free), gt, cats, [0, 1, 2] * 4, QuitConfig(), seed=2)
    for e in eps:
        assert e.mcd_hits == sum(1 for c in e.categories if c == 2)
    rep = summarize(eps)
    assert rep.mcd == sum(e.mcd_hits for e in eps) / sum(e.length for e in eps)


def test_replay_oracle_matches_evaluate():
    gt, cats = _env(n_users=5, n_categories=4, seed=9)
    quit = QuitConfig(0, 4, 30)
    seed = 17
    rep, eps = evaluate(Scripted(40, uniform_free), gt, cats, np.arange(5), 12, quit, seed=seed,
                        return_episodes=True)
    # independent re-simulation: same user draw, same lockstep consumption of the action stream
    users = stream(seed, "eval", "users").integers(0, 5, size=12)
    rng = stream(seed, "eval", "actions")
    shown = [set() for _ in users]
    cats_seen = [[] for _ in users]
    rewards = [[] for _ in users]
    active = list(range(len(users)))
    while active:
        picks = []
        for e in active:
            free = [i for i in range(40) if i not in shown[e]]
            picks.append(free[rng.integers(len(free))])
        still = []
        for e, i in zip(active, picks):
            c = int(cats.item_category[i])
            leave = _quit_oracle(cats_seen[e], c, quit.quit_m, quit.quit_n)
            cats_seen[e].append(c)
            shown[e].add(i)
            rewards[e].append(gt.values[users[e], i])
            if not (leave or len(rewards[e]) >= quit.max_len or len(shown[e]) == 40):
                still.append(e)
        active = still
    assert [e.user for e in eps] == users.tolist()
    assert [list(e.rewards) for e in eps] == rewards
    assert rep.R_tra == pytest.approx(np.mean([sum(r) for r in rewards]), abs=1e-12)


def test_evaluation_never_reads_training_table(small_synth):
    gt, log, cats, feats = small_synth
    table = build_shaped_table(log, feats, 3, np.full(gt.shape, 0.5))
    actions = init_actions(None, gt.n_items, 4, seed=0)
    pol = Policy(5, gt.n_items, TrackerConfig().build(5), hidden=8, seed=0, actions=actions)
    env = RecEnv(table, cats, actions, 3)
    a2c_train(env, pol, A2CConfig(epochs=2, trajectories_per_epoch=4, batch_size=4))
    before = table.reads
    assert before > 0
    evaluate(pol, gt, cats, np.arange(gt.n_users), 20, seed=0)
    assert table.reads == before


def test_eval_user_resampling_is_seeded():
    a = sample_eval_users(np.arange(10), 100, 5)
    assert np.array_equal(a, sample_eval_users(np.arange(10), 100, 5))
    assert set(a.tolist()) <= set(range(10))


def test_greedy_oracle_respects_quit_and_repeat():
    gt, cats = _env(n_items=40, n_categories=8)
    ep = greedy_oracle_rollout(gt, cats, 0, QuitConfig())
    assert ep.length == 30
    assert len(set(ep.items)) == 30
    for t in range(1, ep.length):
        assert not quit_check(ep.categories[:t], ep.categories[t])


def test_episode_csv(tmp_path):
    gt, cats = _env()
    eps = run_episodes(Scripted(40, lowest_free), gt, cats, [0, 1], QuitConfig())
    write_episodes_csv(tmp_path / "e.csv", eps, ["seed=0"])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[:2] == ["# seed=0", "episode,user,length,R_tra,mcd_hits"]
    assert len(lines) == 4


def test_evaluate_rejects_zero_episodes():
    gt, cats = _env()
    with pytest.raises(ValueError):
        evaluate(Scripted(40, lowest_free), gt, cats, [0], 0)
