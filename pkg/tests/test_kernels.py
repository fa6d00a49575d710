import numpy as np
import pytest

from roler_lab import kernels

BACKENDS = kernels.available_backends()


def _brute_knn(X, q, candidates, k, metric, include_self):
    rows = []
    for c in candidates:
        if c == q and not include_self:
            continue
        if metric == "cosine":
            d = 1.0 - X[q] @ X[c] / (np.linalg.norm(X[q]) * np.linalg.norm(X[c]))
            d = 0.0 if c == q else max(d, 0.0)
        else:
            d = float(np.sqrt(((X[q] - X[c]) ** 2).sum()))
        rows.append((np.floor(d * 1e12 + 0.5) / 1e12, c))
    rows.sort()
    return [c for _, c in rows[:k]], [d for d, _ in rows[:k]]


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("metric", ["cosine", "euclidean"])
@pytest.mark.parametrize("include_self", [False, True])
def test_knn_matches_brute_force(backend, metric, include_self):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 8))
    X[7] = X[3]  # exact tie
    cands = np.arange(50)
    idx, dist = kernels.knn_topk(X, np.arange(50), cands, 10, metric, include_self, backend)
    for q in range(50):
        ei, ed = _brute_knn(X, q, cands, 10, metric, include_self)
        assert idx[q].tolist() == ei
        np.testing.assert_allclose(dist[q], ed, rtol=0, atol=1e-12)


def test_backends_agree_on_knn():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(2)
    X = rng.integers(0, 3, size=(40, 5)).astype(float) + 0.1  # many ties
    a = kernels.knn_topk(X, np.arange(40), np.arange(40), 6, "cosine", False, "cython")
    b = kernels.knn_topk(X, np.arange(40), np.arange(40), 6, "cosine", False, "python")
    assert np.array_equal(a[0], b[0])
    np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-12)


def test_backends_agree_on_sgd_epoch():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(3)
    n = 200
    users = rng.integers(0, 10, n)
    items = rng.integers(0, 12, n)
    rewards = rng.random(n)
    order = rng.permutation(n)
    out = []
    for backend in ("cython", "python"):
        P = np.full((10, 4), 0.1)
        Q = np.full((12, 4), -0.05)
        bu, bi = np.zeros(10), np.zeros(12)
        sse = kernels.mf_sgd_epoch(users, items, rewards, order, P, Q, bu, bi, 0.5, 0.05, 0.01, backend)
        out.append((sse, P, Q, bu, bi))
    assert out[0][0] == pytest.approx(out[1][0], abs=1e-12)
    for a, b in zip(out[0][1:], out[1][1:]):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
