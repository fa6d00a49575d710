"""Pure-Python/numpy versions of the compiled kernels."""

import numpy as np


def mf_sgd_epoch(users, items, rewards, order, P, Q, bu, bi, gb, lr, l2):
    # plain floats and lists keep the per-event loop tolerable and give the
    # same IEEE operation order as the compiled kernel
    Pl = P.tolist()
    Ql = Q.tolist()
    bul = bu.tolist()
    bil = bi.tolist()
    ul = users.tolist()
    il = items.tolist()
    rl = rewards.tolist()
    d = P.shape[1]
    rng_f = range(d)
    sse = 0.0
    for e in order.tolist():
        u = ul[e]
        i = il[e]
        pu_row = Pl[u]
        qi_row = Ql[i]
        pred = gb + bul[u] + bil[i]
        for f in rng_f:
            pred = pred + pu_row[f] * qi_row[f]
        err = rl[e] - pred
        sse = sse + err * err
        bul[u] = bul[u] + lr * (err - l2 * bul[u])
        bil[i] = bil[i] + lr * (err - l2 * bil[i])
        for f in rng_f:
            pu = pu_row[f]
            qi = qi_row[f]
            pu_row[f] = pu + lr * (err * qi - l2 * pu)
            qi_row[f] = qi + lr * (err * pu - l2 * qi)
    P[...] = Pl
    Q[...] = Ql
    bu[...] = bul
    bi[...] = bil
    return sse


TIE_GRID = 1e12


def snap(d):
    """Round distances to a 1e-12 grid so ties survive different summation orders."""
    return np.floor(d * TIE_GRID + 0.5) / TIE_GRID


def knn_topk(X, queries, candidates, k, cosine, include_self):
    X = np.asarray(X, dtype=float)
    Xq = X[queries]
    Xc = X[candidates]
    if cosine:
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
        dist = 1.0 - (Xq @ Xc.T) / np.outer(norms[queries], norms[candidates])
    else:
        diff = Xq[:, None, :] - Xc[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dist = snap(np.maximum(dist, 0.0))
    same = queries[:, None] == candidates[None, :]
    dist[same] = 0.0 if include_self else np.inf
    cand = np.broadcast_to(candidates, dist.shape)
    # lexsort: last key is primary -> distance first, then candidate index
    order = np.lexsort((cand, dist), axis=1)[:, :k]
    idx = np.take_along_axis(cand, order, axis=1).astype(np.int64)
    return idx, np.take_along_axis(dist, order, axis=1)
