import numpy as np
import pytest

from roler_lab.tracker import (
    AttentionTracker,
    AverageTracker,
    Window,
    track_state_attention,
    track_state_average,
    window_from_history,
)


def test_average_examples():
    hist = [(np.array([1.0, 0.0]), 0.5), (np.array([0.0, 1.0]), 1.0)]
    np.testing.assert_allclose(track_state_average(hist, 2), [0.5, 0.5, 0.75])
    np.testing.assert_allclose(track_state_average(hist, 1), [0.0, 1.0, 1.0])


def test_average_loop_oracle():
    rng = np.random.default_rng(0)
    for n in (1, 3, 5, 9):
        hist = [(rng.normal(size=4), float(rng.random())) for _ in range(n)]
        recent = hist[-5:]
        acc = np.zeros(5)
        for a, r in recent:
            acc += np.concatenate([a, [r]])
        np.testing.assert_allclose(track_state_average(hist, 5), acc / len(recent), atol=1e-12)


def test_attention_zero_projection_is_average():
    rng = np.random.default_rng(1)
    hist = [(rng.normal(size=3), float(rng.random())) for _ in range(4)]
    params = {"Wq": np.zeros((4, 2)), "Wk": np.zeros((4, 2))}
    np.testing.assert_allclose(track_state_attention(hist, 3, params), track_state_average(hist, 3), atol=1e-15)


def test_attention_is_order_sensitive():
    rng = np.random.default_rng(2)
    params = {"Wq": rng.normal(size=(3, 4)), "Wk": rng.normal(size=(3, 4))}
    a = (np.array([1.0, 0.0]), 0.2)
    b = (np.array([0.0, 2.0]), 0.9)
    assert not np.allclose(track_state_attention([a, b], 2, params), track_state_attention([b, a], 2, params))


def test_attention_single_element():
    rng = np.random.default_rng(3)
    params = {"Wq": rng.normal(size=(3, 4)), "Wk": rng.normal(size=(3, 4))}
    h = [(np.array([0.3, -0.7]), 0.4)]
    np.testing.assert_allclose(track_state_attention(h, 4, params), [0.3, -0.7, 0.4], atol=1e-15)


def test_window_padding_is_left():
    w = window_from_history([(np.array([1.0]), 2.0)], 3)
    assert w.valid.tolist() == [[False, False, True]]
    assert w.values[0, 2].tolist() == [1.0, 2.0]


def test_attention_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    tr = AttentionTracker(4, 5, 3, rng=rng, init_scale=0.5)
    X = rng.normal(size=(6, 4, 5))
    valid = np.ones((6, 4), dtype=bool)
    valid[0, :2] = False
    valid[1, :3] = False
    win = Window(X, valid)
    G = rng.normal(size=(6, 5))

    def f():
        return float((tr.forward(win)[0] * G).sum())

    _, cache = tr.forward(win)
    grads = tr.backward(cache, G)
    h = 1e-5
    for name, W in tr.params.items():
        num = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + h
            fp = f()
            W[idx] = old - h
            fm = f()
            W[idx] = old
            num[idx] = (fp - fm) / (2 * h)
        rel = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(grads[name]) + np.linalg.norm(num), 1e-12)
        assert rel < 1e-3, name


def test_average_rejects_bad_window():
    with pytest.raises(ValueError):
        AverageTracker(0)
