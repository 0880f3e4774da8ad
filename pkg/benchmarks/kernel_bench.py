"""Benchmark the compiled tree kernels against the pure NumPy fallback.

Usage:
    python benchmarks/kernel_bench.py [--n 2000] [--trees 100] [--reps 3]

Grows one regression forest and one effect forest of the requested size
with each backend, runs the out-of-bag prediction passes, verifies the
outputs are bit-identical, and prints a timing table.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import itevar._kernels.pure as pure

try:
    import itevar._kernels._core as core
except ImportError:
    core = None

from itevar.forest import ForestParams, forest_key, tree_seed


def _grow(backend, X, t0, t1, mode, params, n):
    sub = int(params.subsample_fraction * n)
    j1 = int(sub * params.honesty_fraction)
    key = forest_key(params.seed)
    parts = [backend.build_tree(X, t0, t1, mode, sub, j1,
                                params.min_node_size, X.shape[1], -1,
                                tree_seed(key, t))
             for t in range(params.num_trees)]
    return parts


def _concat(parts):
    from itevar.forest import _concat as c
    return c(parts)


def _bench(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n = args.n
    X = np.ascontiguousarray(rng.standard_normal((n, 3)))
    X[:, 0] = rng.integers(0, 2, n)
    y = np.ascontiguousarray(X[:, 1] + rng.standard_normal(n))
    a = (rng.random(n) < 0.15).astype(float)
    at = np.ascontiguousarray(a - 0.15)
    yt = np.ascontiguousarray(y - y.mean())
    V = np.ascontiguousarray(np.column_stack([yt * at, at * at, at]))
    params = ForestParams(num_trees=args.trees, seed=7)

    backends = [("python", pure)]
    if core is not None:
        backends.append(("c", core))
    else:
        print("compiled kernel not built; benchmarking the fallback only")

    rows = []
    outputs = {}
    for name, b in backends:
        t_grow_reg, parts_r = _bench(
            lambda b=b: _grow(b, X, y, y, b.MODE_REG, params, n), args.reps)
        t_grow_eff, parts_e = _bench(
            lambda b=b: _grow(b, X, yt, at, b.MODE_EFF, params, n), args.reps)
        fr, fe = _concat(parts_r), _concat(parts_e)
        t_reg_oob, reg_out = _bench(
            lambda b=b, fr=fr: b.reg_forest_predict_oob(
                fr.feat, fr.thr, fr.left, fr.right, fr.node_off, fr.leaf_val,
                fr.sub_off, fr.sub_rows, X), args.reps)
        t_eff_oob, eff_out = _bench(
            lambda b=b, fe=fe: b.eff_forest_accumulate_oob(
                fe.feat, fe.thr, fe.left, fe.right, fe.node_off, fe.leaf_cnt,
                fe.j2_off, fe.j2_rows, fe.j2_leaf, fe.j1_off, fe.j1_rows,
                X, V), args.reps)
        rows.append((name, t_grow_reg, t_grow_eff, t_reg_oob, t_eff_oob))
        outputs[name] = (fr.thr, fe.thr, reg_out[0], eff_out[0])

    if len(outputs) == 2:
        for i, label in enumerate(("reg trees", "effect trees",
                                   "reg oob", "eff oob")):
            same = np.array_equal(outputs["python"][i], outputs["c"][i])
            print(f"bit-identical {label}: {same}")

    print(f"\n{args.trees} trees, n={n}, best of {args.reps}:")
    print(f"{'backend':8s} {'grow reg':>10s} {'grow eff':>10s} "
          f"{'reg oob':>10s} {'eff oob':>10s}")
    for name, g1, g2, p1, p2 in rows:
        print(f"{name:8s} {g1:>9.3f}s {g2:>9.3f}s {p1:>9.3f}s {p2:>9.3f}s")
    if len(rows) == 2:
        sp = [rows[0][i] / rows[1][i] for i in range(1, 5)]
        print(f"{'speedup':8s} " + " ".join(f"{s:>9.1f}x" for s in sp))


if __name__ == "__main__":
    main()
