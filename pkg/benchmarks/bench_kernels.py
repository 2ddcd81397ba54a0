"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--rows 725 280] [--repeat 5]

Each kernel is first called once to trigger compilation, then timed as the
best of ``--repeat`` calls. Results of both paths are compared bit-for-bit.
"""
import argparse
import time

import numpy as np

from ccatl import kernels as K


def best_of(fn, args, repeat):
    fn(*args)
    t = np.inf
    for _ in range(repeat):
        s = time.perf_counter()
        out = fn(*args)
        t = min(t, time.perf_counter() - s)
    return t, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b, equal_nan=True)


def fixtures(n_source, n_target, d, seed):
    rng = np.random.default_rng(seed)
    is_cat = np.zeros(d, dtype=np.bool_)
    is_cat[: d // 4] = True
    def table(n):
        v = rng.random((n, d))
        v[:, is_cat] = rng.integers(0, 4, (n, int(is_cat.sum())))
        m = rng.random((n, d)) < 0.15
        return np.where(m, np.nan, v), m
    sv, sm = table(n_source)
    tv, tm = table(n_target)
    ranges = np.ones(d)
    dist = K._heom_matrix_np(tv, tm, sv, sm, is_cat, ranges)
    labels = rng.integers(0, 2, n_source).astype(np.int64)
    return dict(sv=sv, sm=sm, tv=tv, tm=tm, is_cat=is_cat, ranges=ranges, dist=dist,
                labels=labels, xs=rng.standard_normal((n_source, d)),
                xt=rng.standard_normal((n_target, d)))


def cases(f):
    return [
        ("heom_matrix", K._heom_matrix_nb, K._heom_matrix_np,
         (f["tv"], f["tm"], f["sv"], f["sm"], f["is_cat"], f["ranges"])),
        ("knn_fill", K._knn_fill_nb, K._knn_fill_np,
         (f["dist"], f["tv"], f["tm"], f["sv"], f["sm"], f["is_cat"], 5)),
        ("euclidean_matrix", K._euclidean_nb, K._euclidean_np, (f["xt"], f["xs"])),
        ("pair_rounds", K._pair_rounds_nb, K._pair_rounds_np, (np.ascontiguousarray(f["dist"].T),)),
        ("knn_vote", K._knn_vote_nb, K._knn_vote_np, (f["dist"], f["labels"], 5)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, nargs=2, default=(725, 280), metavar=("SOURCE", "TARGET"))
    ap.add_argument("--features", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    f = fixtures(*args.rows, args.features, args.seed)
    print(f"rows {args.rows[0]}x{args.rows[1]}, {args.features} features, best of {args.repeat}")
    print(f"{'kernel':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  equal")
    for name, nb, np_, a in cases(f):
        t_nb, o_nb = best_of(nb, a, args.repeat)
        t_np, o_np = best_of(np_, a, args.repeat)
        print(f"{name:<18}{1e3 * t_nb:>10.2f}{1e3 * t_np:>10.2f}{t_np / t_nb:>9.1f}  {same(o_nb, o_np)}")


if __name__ == "__main__":
    main()
