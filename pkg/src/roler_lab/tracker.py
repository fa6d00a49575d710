"""State trackers mapping a window of (action vector, reward) pairs to a state.

A window is a ``Window`` of right-aligned history: ``values`` has shape
``(n, w, D)`` and ``valid`` marks real entries (padding sits on the left).
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class Window:
    values: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return self.values.shape[0]

    def take(self, idx):
        return Window(self.values[idx], self.valid[idx])

    @staticmethod
    def concat(windows):
        return Window(np.concatenate([w.values for w in windows]), np.concatenate([w.valid for w in windows]))


def window_from_history(history, w):
    """Build a one-row window from ``[(action_vector, reward), ...]`` (oldest first)."""
    if not history:
        raise ValueError("history must be non-empty")
    recent = history[-w:]
    dim = len(recent[0][0]) + 1
    values = np.zeros((1, w, dim))
    valid = np.zeros((1, w), dtype=bool)
    for j, (a, r) in enumerate(recent):
        slot = w - len(recent) + j
        values[0, slot, :-1] = a
        values[0, slot, -1] = r
        valid[0, slot] = True
    return Window(values, valid)


def track_state_average(history, w):
    """Mean of the last ``min(w, len(history))`` concatenations ``[a ⊕ r]``."""
    return AverageTracker(w).forward(window_from_history(history, w))[0][0]


def track_state_attention(history, w, params):
    tracker = AttentionTracker(w, len(history[0][0]) + 1, params["Wq"].shape[1])
    tracker.params = {"Wq": np.asarray(params["Wq"], float), "Wk": np.asarray(params["Wk"], float)}
    return tracker.forward(window_from_history(history, w))[0][0]


class IdentityTracker:
    """For environments whose observation already is the state vector."""

    kind = "identity"
    params = {}

    def forward(self, obs):
        return np.asarray(obs, dtype=float), None

    def backward(self, cache, dstates):
        return {}


class AverageTracker:
    kind = "average"
    params = {}

    def __init__(self, window):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window

    def forward(self, win):
        valid = win.valid[..., None]
        n = win.valid.sum(axis=1, keepdims=True)
        return (win.values * valid).sum(axis=1) / n, None

    def backward(self, cache, dstates):
        return {}


def sinusoidal_positions(w, dim):
    pos = np.arange(w)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class AttentionTracker:
    """Single-head scaled dot-product self-attention, mean-pooled over valid rows.

    Queries and keys see the history plus sinusoidal positions; values are the
    raw history, so zero projections reduce exactly to ``AverageTracker``.
    """

    kind = "attention"

    def __init__(self, window, dim, key_dim=8, rng=None, init_scale=0.1):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.dim = dim
        self.key_dim = key_dim
        self.pos = sinusoidal_positions(window, dim)
        if rng is None:
            self.params = {"Wq": np.zeros((dim, key_dim)), "Wk": np.zeros((dim, key_dim))}
        else:
            self.params = {
                "Wq": rng.normal(0.0, init_scale, (dim, key_dim)),
                "Wk": rng.normal(0.0, init_scale, (dim, key_dim)),
            }

    def forward(self, win):
        X = win.values
        valid = win.valid
        Z = X + self.pos[None]
        Q = Z @ self.params["Wq"]
        K = Z @ self.params["Wk"]
        scale = 1.0 / np.sqrt(self.key_dim)
        S = (Q @ K.transpose(0, 2, 1)) * scale
        S = np.where(valid[:, None, :], S, -np.inf)
        S = S - S.max(axis=-1, keepdims=True)
        A = np.exp(S)
        A /= A.sum(axis=-1, keepdims=True)
        O = A @ X
        n_valid = valid.sum(axis=1)
        states = (O * valid[..., None]).sum(axis=1) / n_valid[:, None]
        return states, (X, Z, Q, K, A, valid, n_valid, scale)

    def backward(self, cache, dstates):
        X, Z, Q, K, A, valid, n_valid, scale = cache
        dO = (dstates / n_valid[:, None])[:, None, :] * valid[..., None]
        dA = dO @ X.transpose(0, 2, 1)
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale
        dQ = dS @ K
        dK = dS.transpose(0, 2, 1) @ Q
        return {
            "Wq": np.einsum("nwd,nwh->dh", Z, dQ),
            "Wk": np.einsum("nwd,nwh->dh", Z, dK),
        }
