"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Prints one line per kernel with the best-of-repeat time for each backend and
the speedup, after checking that both backends return the same result.
"""
import argparse
import time

import numpy as np

from srvnorm.kernels import _fallback
from srvnorm.matgraph import GraphView

try:
    from srvnorm.kernels import _core
except ImportError:
    _core = None


def random_graph(seed, m, prob):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((m, m)) < prob, 1)
    return GraphView.from_adjacency(upper | upper.T)


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(quick):
    scale = 1 if quick else 2
    G = random_graph(0, 200 * scale, 0.03)
    H = random_graph(1, 14 + 2 * scale, 0.35)
    rng = np.random.default_rng(2)
    c = rng.standard_normal(14 + 2 * scale)
    T = rng.standard_normal((8, c.size))
    k = 4 + scale
    return [
        (f"bfs_distances (n={G.n})", lambda m: m.bfs_distances(G.indptr, G.indices, G.n)),
        (f"connected_subsets (n={H.n}, k={k})", lambda m: m.connected_subsets(H.indptr, H.indices, H.n, k, 1 << 40)),
        (f"count_connected_subsets (n={H.n}, k={k})", lambda m: m.count_connected_subsets(H.indptr, H.indices, H.n, k)),
        (f"sign_moment (m={c.size})", lambda m: m.sign_moment(c, 3.0)),
        (f"sign_sup_mean (m={c.size}, |T|={len(T)})", lambda m: m.sign_sup_mean(c, T)),
    ]


def same(a, b):
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return abs(a - b) <= 1e-12 * max(1.0, abs(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled kernels not built; only the fallback is available")
    print(f"{'kernel':45s} {'cython [s]':>11s} {'python [s]':>11s} {'speedup':>8s}")
    for name, fn in cases(args.quick):
        t_py, r_py = best_time(lambda: fn(_fallback), args.repeat)
        if _core is None:
            print(f"{name:45s} {'-':>11s} {t_py:11.4f} {'-':>8s}")
            continue
        t_c, r_c = best_time(lambda: fn(_core), args.repeat)
        if not same(r_c, r_py):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:45s} {t_c:11.4f} {t_py:11.4f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
