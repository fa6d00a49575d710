"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py --users 400 --items 300 --repeat 3
"""

import argparse
import timeit

import numpy as np

from roler_lab import kernels


def mf_problem(n_users, n_items, density, dim, seed):
    rng = np.random.default_rng(seed)
    cells = np.flatnonzero(rng.random(n_users * n_items) < density)
    users, items = np.divmod(cells, n_items)
    rewards = rng.random(cells.size)
    order = rng.permutation(cells.size)
    P = rng.normal(0, 0.1, (n_users, dim))
    Q = rng.normal(0, 0.1, (n_items, dim))
    return users.astype(np.int64), items.astype(np.int64), rewards, order.astype(np.int64), P, Q


def bench_mf(args, backend):
    users, items, rewards, order, P, Q = mf_problem(args.users, args.items, args.density, args.dim, 0)

    def once():
        p, q = P.copy(), Q.copy()
        bu, bi = np.zeros(args.users), np.zeros(args.items)
        return kernels.mf_sgd_epoch(users, items, rewards, order, p, q, bu, bi, rewards.mean(), 0.01, 1e-3,
                                    backend=backend)

    return min(timeit.repeat(once, number=1, repeat=args.repeat)), once()


def bench_knn(args, backend):
    rng = np.random.default_rng(1)
    X = rng.random((args.users, args.items))
    queries = np.arange(args.users)

    def once():
        return kernels.knn_topk(X, queries, queries, args.k, "cosine", backend=backend)

    return min(timeit.repeat(once, number=1, repeat=args.repeat)), once()


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--users", type=int, default=400)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    for name, fn in (("mf_sgd_epoch", bench_mf), ("knn_topk", bench_knn)):
        results = {b: fn(args, b) for b in backends}
        line = "  ".join(f"{b} {t * 1e3:9.2f} ms" for b, (t, _) in results.items())
        if "cython" in results:
            line += f"  speedup x{results['python'][0] / results['cython'][0]:.1f}"
            a, b = results["python"][1], results["cython"][1]
            same = np.allclose(a, b) if name == "mf_sgd_epoch" else np.array_equal(a[0], b[0])
            line += "  outputs agree" if same else "  OUTPUTS DIFFER"
        print(f"{name:14s} {line}")


if __name__ == "__main__":
    main()
