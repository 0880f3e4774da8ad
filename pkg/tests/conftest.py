import numpy as np
import pytest

from itevar.causal import CausalForest, CenteredData
from itevar.data import ObservedData
from itevar.forest import ForestParams, TreeArrays


def make_trees(tree_specs, n_rows):
    """Hand-build a TreeArrays from per-tree specs.

    Each spec is a dict with keys:
      nodes: list of (feat, thr) with feat=-1 for leaves
      left/right: child indices aligned with nodes (-1 for leaves)
      j2: list of (row, leaf_node) pairs
      j1: row list (default empty)
      leaf_val: optional {node: value}
    """
    parts = []
    for spec in tree_specs:
        nodes = spec["nodes"]
        nn = len(nodes)
        feat = np.array([f for f, _ in nodes], dtype=np.int32)
        thr = np.array([t for _, t in nodes], dtype=np.float64)
        left = np.array(spec.get("left", [-1] * nn), dtype=np.int32)
        right = np.array(spec.get("right", [-1] * nn), dtype=np.int32)
        j2 = sorted(spec["j2"])
        j2_rows = np.array([r for r, _ in j2], dtype=np.int32)
        j2_leaf = np.array([l for _, l in j2], dtype=np.int32)
        leaf_cnt = np.bincount(j2_leaf, minlength=nn).astype(np.int32)
        leaf_val = np.zeros(nn)
        for node, val in spec.get("leaf_val", {}).items():
            leaf_val[node] = val
        j1 = np.sort(np.array(spec.get("j1", []), dtype=np.int32))
        sub = np.sort(np.concatenate([j1, j2_rows]).astype(np.int32))
        parts.append((feat, thr, left, right, leaf_val, leaf_cnt,
                      sub, j1, j2_rows, j2_leaf))

    def off(idx):
        sizes = [p[idx].size for p in parts]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    cat = lambda idx: np.concatenate([p[idx] for p in parts])
    return TreeArrays(
        feat=cat(0), thr=cat(1), left=cat(2), right=cat(3), node_off=off(0),
        leaf_val=cat(4), leaf_cnt=cat(5), sub_off=off(6), sub_rows=cat(6),
        j1_off=off(7), j1_rows=cat(7), j2_off=off(8), j2_rows=cat(8),
        j2_leaf=cat(9))


def make_causal_forest(x, a, y, trees, y_tilde=None, a_tilde=None,
                       m_hat=None, e_hat=None, orthogonalized=True,
                       denominator="squared"):
    """CausalForest with hand-chosen residuals/nuisances and trees."""
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if x.shape[0] == 1 and len(a) > 1:
        x = x.T
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = a.size
    data = ObservedData(x=x, a=a, y=y, feature_names=tuple(
        f"f{i}" for i in range(x.shape[1])))
    zero = np.zeros(n)
    centered = CenteredData(
        y_tilde=y.copy() if y_tilde is None else np.asarray(y_tilde, float),
        a_tilde=a.copy() if a_tilde is None else np.asarray(a_tilde, float),
        m_hat_oob=zero.copy() if m_hat is None else np.asarray(m_hat, float),
        e_hat_oob=zero.copy() if e_hat is None else np.asarray(e_hat, float),
        orthogonalized=orthogonalized)
    return CausalForest(
        centered=centered, effect_trees=trees, nuisance_m=None,
        nuisance_e=None, params=ForestParams(num_trees=trees.num_trees,
                                             seed=0),
        orthogonalized=orthogonalized, denominator=denominator,
        data=data, h_seed=0)


@pytest.fixture(scope="session")
def baseline_obs():
    from itevar.scenarios import generate_dataset, scenario_config
    cfg = scenario_config("baseline", 2000, seed=424242, rho=0.0)
    return generate_dataset(cfg)
