"""Causal random forest: orthogonalized residuals, honest effect trees,
similarity weights, local treatment-effect estimates and the doubly
robust average effect.

The outcome and treatment are first residualized against out-of-bag
nuisance predictions from two honest regression forests. Effect trees
are then grown on the residual pair with a gradient-style criterion: at
each node the residuals are re-centered, a local slope is computed, and
the split maximizing the squared sums of the resulting pseudo-outcomes
across children is taken. A fitted forest turns a query point into
similarity weights over the honest rows of each tree, and local effects
are weighted ratio statistics of the residuals.

Two denominator conventions for the weighted ratio are supported:
"squared" (the local estimating-equation solution, the default) and
"plain" (the raw residual-treatment sum). The plain form can cross zero
and is kept only for fidelity experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import ObservedData
from .forest import (ForestParams, OOBUndefinedError, RegressionForest,
                     TreeArrays, fit_regression_forest, grow_trees)

__all__ = [
    "CenteredData",
    "CausalForest",
    "SimilarityWeights",
    "AipwEstimate",
    "NonIdentifiedError",
    "orthogonalize",
    "fit_effect_forest",
    "fit_causal_forest",
    "predict_cate",
    "estimate_ate_aipw",
    "similarity_weights",
    "save_causal_forest",
    "load_causal_forest",
]

PROPENSITY_CLAMP = (0.01, 0.99)
DENOMINATORS = ("squared", "plain")
_DENOM_EPS = 1e-12

_FORMAT_VERSION = 1


class NonIdentifiedError(RuntimeError):
    """Weighted ratio denominator vanished at some query points."""

    def __init__(self, rows):
        self.rows = np.asarray(rows)
        super().__init__(
            f"effect not identified at {self.rows.size} query point(s) "
            f"(denominator below {_DENOM_EPS:g}); first: {int(self.rows[0])}"
        )


@dataclass
class CenteredData:
    """Residualized outcome/treatment plus the nuisance OOB predictions
    they came from. With orthogonalization disabled both nuisance
    vectors are identically zero and the residuals are the raw data."""

    y_tilde: np.ndarray
    a_tilde: np.ndarray
    m_hat_oob: np.ndarray
    e_hat_oob: np.ndarray
    orthogonalized: bool = True


@dataclass
class SimilarityWeights:
    weights: np.ndarray
    used_trees: int
    oob: bool


@dataclass(frozen=True)
class AipwEstimate:
    ate: float
    se: float


def _nuisance_params(params: ForestParams, key_index: int) -> ForestParams:
    kids = np.random.SeedSequence(params.seed).spawn(4)
    return params.with_seed(int(kids[key_index].generate_state(1, np.uint64)[0]))


def orthogonalize(data: ObservedData, params: ForestParams,
                  n_jobs: int = 1) -> CenteredData:
    """Fit the outcome and propensity forests and return the residuals
    based on their out-of-bag predictions (propensity clamped away from
    0 and 1 before any use)."""
    centered, _, _ = _fit_nuisances(data, params, n_jobs)
    return centered


def _fit_nuisances(data: ObservedData, params: ForestParams, n_jobs: int):
    m_forest = fit_regression_forest(
        data.x, data.y, _nuisance_params(params, 0), target_name="y",
        n_jobs=n_jobs)
    e_forest = fit_regression_forest(
        data.x, data.a, _nuisance_params(params, 1), target_name="a",
        n_jobs=n_jobs)
    m_hat = m_forest.predict_oob(data.x)
    e_hat = np.clip(e_forest.predict_oob(data.x), *PROPENSITY_CLAMP)
    centered = CenteredData(
        y_tilde=data.y - m_hat,
        a_tilde=data.a - e_hat,
        m_hat_oob=m_hat,
        e_hat_oob=e_hat,
        orthogonalized=True,
    )
    return centered, m_forest, e_forest


def fit_effect_forest(centered: CenteredData, x: np.ndarray,
                      params: ForestParams, n_jobs: int = 1) -> TreeArrays:
    """Grow the honest effect trees on the residual pair."""
    return grow_trees(x, centered.y_tilde, centered.a_tilde,
                      _kernels.MODE_EFF, params, n_jobs=n_jobs)


@dataclass
class CausalForest:
    centered: CenteredData
    effect_trees: TreeArrays
    nuisance_m: RegressionForest | None
    nuisance_e: RegressionForest | None
    params: ForestParams
    orthogonalized: bool
    denominator: str
    data: ObservedData
    h_seed: int
    _tau_oob: np.ndarray | None = field(default=None, repr=False)
    _aipw: AipwEstimate | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.data.n

    def base_value_columns(self) -> np.ndarray:
        """Per-row values whose weighted sums define the local effect."""
        c = self.centered
        if self.orthogonalized:
            cols = [c.y_tilde * c.a_tilde, c.a_tilde * c.a_tilde, c.a_tilde]
        else:
            a, y = self.data.a, self.data.y
            cols = [y * a, a, y * (1.0 - a), 1.0 - a]
        return np.ascontiguousarray(np.column_stack(cols))

    def _ratio(self, sums: np.ndarray, used: np.ndarray) -> np.ndarray:
        if (used == 0).any():
            raise OOBUndefinedError(np.nonzero(used == 0)[0])
        if self.orthogonalized:
            den = sums[:, 1] if self.denominator == "squared" else sums[:, 2]
            bad = np.abs(den) < _DENOM_EPS * used
            if bad.any():
                raise NonIdentifiedError(np.nonzero(bad)[0])
            return sums[:, 0] / den
        bad = (np.abs(sums[:, 1]) < _DENOM_EPS * used) | \
            (np.abs(sums[:, 3]) < _DENOM_EPS * used)
        if bad.any():
            raise NonIdentifiedError(np.nonzero(bad)[0])
        return sums[:, 0] / sums[:, 1] - sums[:, 2] / sums[:, 3]

    def accumulate_oob(self, value_columns: np.ndarray):
        """Forest-weighted leaf sums of the value columns at every
        training row, under the out-of-bag rules (trees whose structure
        half holds the row are skipped; the row's own contribution is
        removed)."""
        a = self.effect_trees
        return _kernels.eff_forest_accumulate_oob(
            a.feat, a.thr, a.left, a.right, a.node_off, a.leaf_cnt,
            a.j2_off, a.j2_rows, a.j2_leaf, a.j1_off, a.j1_rows,
            self.data.x, np.ascontiguousarray(value_columns))

    def accumulate(self, x_new: np.ndarray, value_columns: np.ndarray):
        a = self.effect_trees
        return _kernels.eff_forest_accumulate(
            a.feat, a.thr, a.left, a.right, a.node_off, a.leaf_cnt,
            a.j2_off, a.j2_rows, a.j2_leaf,
            np.ascontiguousarray(x_new, dtype=np.float64),
            np.ascontiguousarray(value_columns))

    def cate_oob(self) -> np.ndarray:
        """Out-of-bag local effect estimate at every training row."""
        if self._tau_oob is None:
            sums, used = self.accumulate_oob(self.base_value_columns())
            self._tau_oob = self._ratio(sums, used)
        return self._tau_oob

    def predict_cate(self, x_new: np.ndarray) -> np.ndarray:
        x_new = np.ascontiguousarray(x_new, dtype=np.float64)
        if x_new.ndim == 1:
            x_new = x_new.reshape(1, -1)
        sums, used = self.accumulate(x_new, self.base_value_columns())
        return self._ratio(sums, used)

    def ate_aipw(self) -> AipwEstimate:
        """Doubly robust average effect. With orthogonalization disabled
        there are no nuisance estimates to debias with, so this reduces
        to the mean of the out-of-bag local effects."""
        if self._aipw is not None:
            return self._aipw
        tau = self.cate_oob()
        n = tau.size
        if n < 2:
            raise ValueError("need at least 2 rows for the average effect")
        if not self.orthogonalized:
            scores = tau
        else:
            c = self.centered
            a, y = self.data.a, self.data.y
            e = c.e_hat_oob
            mu1 = c.m_hat_oob + (1.0 - e) * tau
            mu0 = c.m_hat_oob - e * tau
            scores = tau + a * (y - mu1) / e - (1.0 - a) * (y - mu0) / (1.0 - e)
        ate = float(scores.mean())
        se = float(scores.std(ddof=1) / np.sqrt(n))
        self._aipw = AipwEstimate(ate=ate, se=se)
        return self._aipw

    def similarity_weights(self, x: np.ndarray | None = None,
                           row: int | None = None) -> SimilarityWeights:
        """Materialize the forest-averaged similarity weight vector for a
        fresh query point x, or for training row index `row` under the
        out-of-bag rules. Weights sum to one whenever any tree
        contributes."""
        if (x is None) == (row is None):
            raise ValueError("pass exactly one of x= or row=")
        trees = self.effect_trees
        n = self.n
        oob = row is not None
        if oob:
            if not 0 <= row < n:
                raise ValueError(f"row must be in [0, {n}), got {row}")
            query = self.data.x[row]
        else:
            query = np.asarray(x, dtype=np.float64).reshape(-1)
        w = np.zeros(n)
        used = 0
        for t in range(trees.num_trees):
            s = trees.tree_slices(t)
            if oob and np.isin(row, s["j1_rows"]):
                continue
            cur = 0
            feat, thr, left, right = s["feat"], s["thr"], s["left"], s["right"]
            while feat[cur] >= 0:
                cur = left[cur] if query[feat[cur]] <= thr[cur] else right[cur]
            members = s["j2_rows"][s["j2_leaf"] == cur]
            if oob:
                members = members[members != row]
            if members.size == 0:
                continue
            w[members] += 1.0 / members.size
            used += 1
        if used == 0:
            raise OOBUndefinedError([row if oob else -1])
        return SimilarityWeights(weights=w / used, used_trees=used, oob=oob)


def fit_causal_forest(data: ObservedData, params: ForestParams,
                      orthogonalized: bool = True,
                      denominator: str = "squared",
                      n_jobs: int = 1) -> CausalForest:
    """Fit the full pipeline: nuisance forests (unless disabled), then
    the honest effect forest on the residuals."""
    if denominator not in DENOMINATORS:
        raise ValueError(f"denominator must be one of {DENOMINATORS}")
    if orthogonalized:
        centered, m_forest, e_forest = _fit_nuisances(data, params, n_jobs)
    else:
        zero = np.zeros(data.n)
        centered = CenteredData(
            y_tilde=data.y.copy(), a_tilde=data.a.copy(),
            m_hat_oob=zero, e_hat_oob=zero.copy(), orthogonalized=False)
        m_forest = e_forest = None
    kids = np.random.SeedSequence(params.seed).spawn(4)
    effect_params = params.with_seed(int(kids[2].generate_state(1, np.uint64)[0]))
    h_seed = int(kids[3].generate_state(1, np.uint64)[0])
    effect_trees = fit_effect_forest(centered, data.x, effect_params,
                                     n_jobs=n_jobs)
    return CausalForest(
        centered=centered, effect_trees=effect_trees,
        nuisance_m=m_forest, nuisance_e=e_forest,
        params=params, orthogonalized=orthogonalized,
        denominator=denominator, data=data, h_seed=h_seed)


def predict_cate(forest: CausalForest, query: np.ndarray) -> np.ndarray:
    return forest.predict_cate(query)


def estimate_ate_aipw(forest: CausalForest) -> AipwEstimate:
    return forest.ate_aipw()


def similarity_weights(forest: CausalForest, x=None, row=None) -> SimilarityWeights:
    return forest.similarity_weights(x=x, row=row)


def _trees_to_npz(prefix: str, trees: TreeArrays, out: dict) -> None:
    for name in ("feat", "thr", "left", "right", "node_off", "leaf_val",
                 "leaf_cnt", "sub_off", "sub_rows", "j1_off", "j1_rows",
                 "j2_off", "j2_rows", "j2_leaf"):
        out[f"{prefix}{name}"] = getattr(trees, name)


def _trees_from_npz(prefix: str, archive) -> TreeArrays:
    kw = {name: archive[f"{prefix}{name}"]
          for name in ("feat", "thr", "left", "right", "node_off", "leaf_val",
                       "leaf_cnt", "sub_off", "sub_rows", "j1_off", "j1_rows",
                       "j2_off", "j2_rows", "j2_leaf")}
    return TreeArrays(**kw)


def save_causal_forest(forest: CausalForest, path) -> None:
    """Persist a fitted forest (versioned header + node arrays)."""
    header = {
        "version": _FORMAT_VERSION,
        "n": forest.n,
        "params": {
            "num_trees": forest.params.num_trees,
            "subsample_fraction": forest.params.subsample_fraction,
            "honesty_fraction": forest.params.honesty_fraction,
            "mtry": forest.params.mtry,
            "min_node_size": forest.params.min_node_size,
            "max_depth": forest.params.max_depth,
            "seed": forest.params.seed,
        },
        "orthogonalized": forest.orthogonalized,
        "denominator": forest.denominator,
        "h_seed": forest.h_seed,
    }
    out = {
        "header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
        "x": forest.data.x, "a": forest.data.a, "y": forest.data.y,
        "y_tilde": forest.centered.y_tilde,
        "a_tilde": forest.centered.a_tilde,
        "m_hat_oob": forest.centered.m_hat_oob,
        "e_hat_oob": forest.centered.e_hat_oob,
    }
    _trees_to_npz("eff_", forest.effect_trees, out)
    if forest.nuisance_m is not None:
        _trees_to_npz("m_", forest.nuisance_m.trees, out)
        _trees_to_npz("e_", forest.nuisance_e.trees, out)
    np.savez_compressed(path, **out)


def load_causal_forest(path) -> CausalForest:
    with np.load(path) as archive:
        header = json.loads(bytes(archive["header"]).decode())
        if header["version"] != _FORMAT_VERSION:
            raise ValueError(
                f"unsupported forest file version {header['version']}")
        params = ForestParams(**header["params"])
        data = ObservedData(x=np.ascontiguousarray(archive["x"]),
                            a=archive["a"], y=archive["y"])
        centered = CenteredData(
            y_tilde=archive["y_tilde"], a_tilde=archive["a_tilde"],
            m_hat_oob=archive["m_hat_oob"], e_hat_oob=archive["e_hat_oob"],
            orthogonalized=header["orthogonalized"])
        effect_trees = _trees_from_npz("eff_", archive)
        m_forest = e_forest = None
        if "m_feat" in archive:
            m_forest = RegressionForest(
                trees=_trees_from_npz("m_", archive), target_name="y",
                params=params, n=data.n, d=data.x.shape[1])
            e_forest = RegressionForest(
                trees=_trees_from_npz("e_", archive), target_name="a",
                params=params, n=data.n, d=data.x.shape[1])
    return CausalForest(
        centered=centered, effect_trees=effect_trees,
        nuisance_m=m_forest, nuisance_e=e_forest, params=params,
        orthogonalized=header["orthogonalized"],
        denominator=header["denominator"], data=data,
        h_seed=header["h_seed"])
