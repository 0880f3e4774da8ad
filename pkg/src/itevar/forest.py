"""Honest regression forests.

Each tree draws a subsample without replacement, splits it into a
structure half and an estimation half, grows CART splits on the structure
half only, and averages the target over estimation-half rows that fall in
each leaf. Out-of-bag predictions for a training row use only trees whose
subsample excluded that row.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels

__all__ = [
    "ForestParams",
    "RegressionForest",
    "fit_regression_forest",
    "OOBUndefinedError",
]

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class OOBUndefinedError(RuntimeError):
    """No tree excludes the requested row; raise num_trees to fix."""

    def __init__(self, rows):
        self.rows = np.asarray(rows)
        super().__init__(
            f"out-of-bag prediction undefined for {self.rows.size} row(s) "
            f"(e.g. row {int(self.rows[0])}); increase num_trees"
        )


@dataclass(frozen=True)
class ForestParams:
    """Shared tuning knobs for all forests in a fit."""

    num_trees: int = 2000
    subsample_fraction: float = 0.5
    honesty_fraction: float = 0.5
    mtry: int | None = None
    min_node_size: int = 5
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError(f"num_trees must be >= 1, got {self.num_trees}")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError(
                f"subsample_fraction must be in (0, 1], got {self.subsample_fraction}"
            )
        if not 0.0 < self.honesty_fraction < 1.0:
            raise ValueError(
                f"honesty_fraction must be in (0, 1), got {self.honesty_fraction}"
            )
        if self.mtry is not None and self.mtry < 1:
            raise ValueError(f"mtry must be >= 1, got {self.mtry}")
        if self.min_node_size < 1:
            raise ValueError(f"min_node_size must be >= 1, got {self.min_node_size}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")

    def resolve_mtry(self, d: int) -> int:
        if self.mtry is not None:
            return min(self.mtry, d)
        return min(int(math.ceil(math.sqrt(d))) + 20, d)

    def with_seed(self, seed: int) -> "ForestParams":
        return replace(self, seed=int(seed))


def _mix64_value(state: int) -> int:
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def forest_key(seed: int) -> int:
    return int(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0])


def tree_seed(key: int, index: int) -> int:
    # Counter-style per-tree stream: independent of growth order, so any
    # parallel schedule over trees yields the same forest.
    return _mix64_value((key + (index + 1) * _GOLDEN) & _MASK)


@dataclass
class TreeArrays:
    """Concatenated per-tree node and membership arrays."""

    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    node_off: np.ndarray
    leaf_val: np.ndarray
    leaf_cnt: np.ndarray
    sub_off: np.ndarray
    sub_rows: np.ndarray
    j1_off: np.ndarray
    j1_rows: np.ndarray
    j2_off: np.ndarray
    j2_rows: np.ndarray
    j2_leaf: np.ndarray

    @property
    def num_trees(self) -> int:
        return self.node_off.size - 1

    def tree_slices(self, t: int):
        """View of one tree's node arrays (for inspection/tests)."""
        o0, o1 = self.node_off[t], self.node_off[t + 1]
        return {
            "feat": self.feat[o0:o1],
            "thr": self.thr[o0:o1],
            "left": self.left[o0:o1],
            "right": self.right[o0:o1],
            "leaf_val": self.leaf_val[o0:o1],
            "leaf_cnt": self.leaf_cnt[o0:o1],
            "sub_rows": self.sub_rows[self.sub_off[t]:self.sub_off[t + 1]],
            "j1_rows": self.j1_rows[self.j1_off[t]:self.j1_off[t + 1]],
            "j2_rows": self.j2_rows[self.j2_off[t]:self.j2_off[t + 1]],
            "j2_leaf": self.j2_leaf[self.j2_off[t]:self.j2_off[t + 1]],
        }


def _concat(parts: list[tuple]) -> TreeArrays:
    def off(idx):
        sizes = [p[idx].size for p in parts]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    cat = lambda idx: np.concatenate([p[idx] for p in parts])
    return TreeArrays(
        feat=cat(0), thr=cat(1), left=cat(2), right=cat(3),
        node_off=off(0),
        leaf_val=cat(4), leaf_cnt=cat(5),
        sub_off=off(6), sub_rows=cat(6),
        j1_off=off(7), j1_rows=cat(7),
        j2_off=off(8), j2_rows=cat(8), j2_leaf=cat(9),
    )


def grow_trees(x: np.ndarray, t0: np.ndarray, t1: np.ndarray | None,
               mode: int, params: ForestParams, n_jobs: int = 1) -> TreeArrays:
    """Grow params.num_trees honest trees over (x, targets)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    t0 = np.ascontiguousarray(t0, dtype=np.float64)
    t1 = np.ascontiguousarray(t1 if t1 is not None else t0, dtype=np.float64)
    n, d = x.shape
    if t0.size != n or t1.size != n:
        raise ValueError(f"target length {t0.size} != {n} rows")
    if n < 2 * params.min_node_size:
        raise ValueError(
            f"need at least {2 * params.min_node_size} rows, got {n}"
        )
    sub_size = int(params.subsample_fraction * n)
    j1_size = int(sub_size * params.honesty_fraction)
    if j1_size < 1 or sub_size - j1_size < 1:
        raise ValueError(
            f"subsample of {sub_size} rows cannot be split into non-empty "
            f"structure/estimation halves (n={n})"
        )
    mtry = params.resolve_mtry(d)
    max_depth = -1 if params.max_depth is None else params.max_depth
    key = forest_key(params.seed)

    def one(t: int):
        return _kernels.build_tree(
            x, t0, t1, mode, sub_size, j1_size, params.min_node_size,
            mtry, max_depth, tree_seed(key, t),
        )

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(one, range(params.num_trees)))
    else:
        parts = [one(t) for t in range(params.num_trees)]
    return _concat(parts)


@dataclass
class RegressionForest:
    """Fitted honest regression forest for one target."""

    trees: TreeArrays
    target_name: str
    params: ForestParams
    n: int
    d: int

    def predict(self, x_new: np.ndarray) -> np.ndarray:
        x_new = _as_matrix(x_new, self.d)
        a = self.trees
        psum, used = _kernels.reg_forest_predict(
            a.feat, a.thr, a.left, a.right, a.node_off, a.leaf_val, x_new)
        return psum / used

    def predict_oob(self, x_train: np.ndarray) -> np.ndarray:
        """OOB prediction at every training row; raises if some row is
        in every tree's subsample."""
        x_train = _as_matrix(x_train, self.d)
        if x_train.shape[0] != self.n:
            raise ValueError("x_train must be the matrix the forest was fit on")
        a = self.trees
        psum, used = _kernels.reg_forest_predict_oob(
            a.feat, a.thr, a.left, a.right, a.node_off, a.leaf_val,
            a.sub_off, a.sub_rows, x_train)
        if (used == 0).any():
            raise OOBUndefinedError(np.nonzero(used == 0)[0])
        return psum / used


def _as_matrix(x, d: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected feature matrix with {d} columns")
    return x


def fit_regression_forest(x: np.ndarray, target: np.ndarray,
                          params: ForestParams, target_name: str = "y",
                          n_jobs: int = 1) -> RegressionForest:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    trees = grow_trees(x, np.asarray(target, dtype=np.float64), None,
                       _kernels.MODE_REG, params, n_jobs=n_jobs)
    return RegressionForest(trees=trees, target_name=target_name,
                            params=params, n=x.shape[0], d=x.shape[1])
