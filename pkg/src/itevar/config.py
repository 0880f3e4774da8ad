"""Experiment specification files.

INI-style, human-writable, one scenario section per table row:

    [experiment]
    replications = 200
    bootstrap = 100
    seed = 20240809
    estimators = crf, extended

    [forest]
    trees = 500
    min_node_size = 5

    [scenario rho0]
    kind = baseline
    n = 2000
    rho = 0.0

Unknown keys are hard errors so a typo in a parameter name cannot
silently fall back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .forest import ForestParams
from .scenarios import ScenarioConfig, scenario_config

ESTIMATOR_NAMES = ("crf", "extended", "crf_no_orth")

_EXPERIMENT_KEYS = {
    "replications": int,
    "bootstrap": int,
    "seed": int,
    "estimators": str,
    "grid_points": int,
    "denominator": str,
}

_FOREST_KEYS = {
    "trees": int,
    "subsample_fraction": float,
    "honesty_fraction": float,
    "mtry": int,
    "min_node_size": int,
    "max_depth": int,
}

_SCENARIO_KEYS = {
    "kind": str,
    "n": int,
    "rho": float,
    "kappa": float,
    "strong": bool,
    "delta": float,
    "p_sex": float,
    "alpha0": float, "alpha_sex": float, "alpha_sbp": float,
    "beta0": float, "beta_sex": float, "beta_sbp": float,
    "tau0": float, "tau_sex": float, "tau_sbp": float,
    "sigma0": float, "sigma1": float,
}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    scenarios: tuple[tuple[str, ScenarioConfig], ...]
    estimators: tuple[str, ...]
    params: ForestParams
    replications: int = 200
    bootstrap_b: int = 100
    master_seed: int = 0
    grid_points: int = 512
    denominator: str = "squared"

    def resolved(self) -> dict:
        return {
            "scenarios": {
                sid: cfg.resolved() for sid, cfg in self.scenarios
            },
            "estimators": list(self.estimators),
            "forest": {
                "num_trees": self.params.num_trees,
                "subsample_fraction": self.params.subsample_fraction,
                "honesty_fraction": self.params.honesty_fraction,
                "mtry": self.params.mtry,
                "min_node_size": self.params.min_node_size,
                "max_depth": self.params.max_depth,
            },
            "replications": self.replications,
            "bootstrap_b": self.bootstrap_b,
            "master_seed": self.master_seed,
            "grid_points": self.grid_points,
            "denominator": self.denominator,
        }


def _typed(section: str, key: str, raw: str, typ):
    try:
        if typ is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise SpecError(
            f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}"
        ) from None


def _read_section(parser, section: str, schema: dict) -> dict:
    out = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise SpecError(f"[{section}] unknown key {key!r}")
        out[key] = _typed(section, key, raw, schema[key])
    return out


def parse_experiment_file(path) -> ExperimentSpec:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise SpecError(f"cannot read experiment file {path}")

    if "experiment" not in parser:
        raise SpecError("missing [experiment] section")
    exp = _read_section(parser, "experiment", _EXPERIMENT_KEYS)
    if "seed" not in exp:
        raise SpecError("[experiment] seed is mandatory")

    forest_kw = {}
    if "forest" in parser:
        raw = _read_section(parser, "forest", _FOREST_KEYS)
        if "trees" in raw:
            forest_kw["num_trees"] = raw.pop("trees")
        forest_kw.update(raw)
    forest_kw.setdefault("num_trees", 500)
    params = ForestParams(**forest_kw)

    estimators = tuple(
        e.strip() for e in exp.get("estimators", "crf,extended").split(",")
        if e.strip())
    for e in estimators:
        if e not in ESTIMATOR_NAMES:
            raise SpecError(
                f"[experiment] unknown estimator {e!r}; "
                f"choose from {ESTIMATOR_NAMES}")
    if not estimators:
        raise SpecError("[experiment] estimators is empty")

    denominator = exp.get("denominator", "squared")
    if denominator not in ("squared", "plain"):
        raise SpecError(f"[experiment] unknown denominator {denominator!r}")

    scenarios = []
    for section in parser.sections():
        if section in ("experiment", "forest"):
            continue
        if not section.startswith("scenario"):
            raise SpecError(f"unknown section [{section}]")
        sid = section[len("scenario"):].strip() or f"s{len(scenarios)}"
        raw = _read_section(parser, section, _SCENARIO_KEYS)
        if "kind" not in raw or "n" not in raw:
            raise SpecError(f"[{section}] needs at least kind and n")
        kind = raw.pop("kind")
        n = raw.pop("n")
        try:
            cfg = scenario_config(kind, n, seed=0, **raw)
        except Exception as exc:
            raise SpecError(f"[{section}] {exc}") from None
        scenarios.append((sid, cfg))
    if not scenarios:
        raise SpecError("no [scenario ...] sections found")

    return ExperimentSpec(
        scenarios=tuple(scenarios),
        estimators=estimators,
        params=params,
        replications=exp.get("replications", 200),
        bootstrap_b=exp.get("bootstrap", 100),
        master_seed=exp["seed"],
        grid_points=exp.get("grid_points", 512),
        denominator=denominator,
    )
