"""Monte Carlo study runner: replications, bootstrap confidence
intervals, bias/MSE/coverage aggregation and pointwise density bands.

Every replication is a pure function of (master seed, scenario index,
replication index), so single replications can be reproduced in
isolation and the worker count never changes results. Bootstrap
intervals refit the entire pipeline (nuisances included) on each row
resample; percentile intervals and the density-band quantiles both use
the linear-interpolation empirical quantile.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .causal import fit_causal_forest
from .config import ESTIMATOR_NAMES, ExperimentSpec
from .data import ObservedData, fingerprint_of
from .extended import (extend_causal_forest, ite_density, pep_cate_only,
                       pep_gaussian, population_sd, sd_cate_only)
from .forest import ForestParams
from .scenarios import ScenarioConfig, TrueTargets, true_targets, with_seed
from .scenarios import generate_dataset

__all__ = [
    "EstimatorStats",
    "ReplicationResult",
    "AggregateRow",
    "run_replication",
    "aggregate",
    "density_band",
    "run_experiment",
]

DENSITY_SPAN_SDS = 4.5


@dataclass(frozen=True)
class EstimatorStats:
    ate: float
    sd: float
    pep: float
    ci_ate: tuple[float, float] | None = None
    ci_sd: tuple[float, float] | None = None
    ci_pep: tuple[float, float] | None = None


@dataclass
class ReplicationResult:
    scenario_id: str
    rep_index: int
    stats: dict = field(default_factory=dict)
    densities: dict = field(default_factory=dict)
    error: str | None = None


def _seed_of(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def _fit_point(obs: ObservedData, estimators, params: ForestParams,
               main_seed: int, no_orth_seed: int, denominator: str,
               grid: np.ndarray | None):
    """Point estimates (+ densities when a grid is given) for one
    dataset. The plain and extended estimators share one fitted causal
    forest; the no-orthogonalization ablation is a separate fit."""
    stats: dict = {}
    densities: dict = {}
    if "crf" in estimators or "extended" in estimators:
        cf = fit_causal_forest(obs, params.with_seed(main_seed),
                               denominator=denominator)
        ext = None
        if "extended" in estimators:
            ext = extend_causal_forest(cf)
        tau = cf.cate_oob()
        aipw = cf.ate_aipw()
        if "crf" in estimators:
            stats["crf"] = EstimatorStats(
                ate=aipw.ate, sd=sd_cate_only(tau), pep=pep_cate_only(tau))
            if grid is not None:
                densities["crf"] = ite_density(tau, "kde", grid=grid).density
        if ext is not None:
            stats["extended"] = EstimatorStats(
                ate=ext.ate, sd=population_sd(ext), pep=pep_gaussian(ext))
            if grid is not None:
                densities["extended"] = ite_density(
                    ext.tau_hat, "mixture", sigma1_sq=ext.sigma1_sq_hat,
                    grid=grid).density
    if "crf_no_orth" in estimators:
        cf2 = fit_causal_forest(obs, params.with_seed(no_orth_seed),
                                orthogonalized=False, denominator=denominator)
        tau2 = cf2.cate_oob()
        stats["crf_no_orth"] = EstimatorStats(
            ate=cf2.ate_aipw().ate, sd=sd_cate_only(tau2),
            pep=pep_cate_only(tau2))
        if grid is not None:
            densities["crf_no_orth"] = ite_density(
                tau2, "kde", grid=grid).density
    return stats, densities


def run_replication(scenario: ScenarioConfig, estimators, params: ForestParams,
                    bootstrap_b: int, seed, density_grid=None,
                    scenario_id: str = "scenario", rep_index: int = 0,
                    denominator: str = "squared") -> ReplicationResult:
    """One simulated dataset, all requested estimators, optional
    percentile bootstrap. `seed` may be an int or a SeedSequence; the
    dataset seed, fit seeds and bootstrap streams all derive from it, and
    the point estimates do not depend on bootstrap_b."""
    for e in estimators:
        if e not in ESTIMATOR_NAMES:
            raise ValueError(f"unknown estimator {e!r}")
    if bootstrap_b < 0:
        raise ValueError("bootstrap_b must be >= 0")
    root = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    c_data, c_main, c_no, c_boot = root.spawn(4)

    ds = generate_dataset(with_seed(scenario, _seed_of(c_data)))
    obs = ds.observed()
    stats, densities = _fit_point(
        obs, estimators, params, _seed_of(c_main), _seed_of(c_no),
        denominator, density_grid)

    if bootstrap_b > 0:
        boot: dict[str, dict[str, list[float]]] = {
            e: {"ate": [], "sd": [], "pep": []} for e in stats}
        for cb in c_boot.spawn(bootstrap_b):
            cb_idx, cb_main, cb_no = cb.spawn(3)
            rng = np.random.Generator(np.random.Philox(cb_idx))
            rows = rng.integers(0, obs.n, size=obs.n)
            bstats, _ = _fit_point(
                obs.subset(rows), estimators, params, _seed_of(cb_main),
                _seed_of(cb_no), denominator, None)
            for e, s in bstats.items():
                boot[e]["ate"].append(s.ate)
                boot[e]["sd"].append(s.sd)
                boot[e]["pep"].append(s.pep)

        def ci(vals):
            lo, hi = np.quantile(np.asarray(vals), [0.025, 0.975])
            return (float(lo), float(hi))

        stats = {
            e: EstimatorStats(
                ate=s.ate, sd=s.sd, pep=s.pep,
                ci_ate=ci(boot[e]["ate"]), ci_sd=ci(boot[e]["sd"]),
                ci_pep=ci(boot[e]["pep"]))
            for e, s in stats.items()
        }
    return ReplicationResult(scenario_id=scenario_id, rep_index=rep_index,
                             stats=stats, densities=densities)


@dataclass(frozen=True)
class AggregateRow:
    scenario_id: str
    rho_or_kappa: float
    n: int
    estimator: str
    n_reps: int
    bias_ate: float
    bias_sd: float
    bias_pep: float
    mse_ate: float
    mse_sd: float
    mse_pep: float
    cov_ate: float | None
    cov_sd: float | None
    cov_pep: float | None


def _bias_mse_cov(values, cis, truth):
    values = np.asarray(values, dtype=np.float64)
    bias = float(values.mean() - truth)
    mse = float(np.mean((values - truth) ** 2))
    cov = None
    if all(c is not None for c in cis):
        cov = float(np.mean([c[0] <= truth <= c[1] for c in cis]))
    return bias, mse, cov


def aggregate(results, truths: TrueTargets, scenario: ScenarioConfig | None = None,
              scenario_id: str | None = None) -> list[AggregateRow]:
    """Bias, MSE and CI coverage against the scenario truth, per
    estimator, over the successful replications."""
    ok = [r for r in results if r.error is None]
    if len(ok) < 2:
        raise ValueError("need at least 2 successful replications")
    estimators = sorted({e for r in ok for e in r.stats},
                        key=ESTIMATOR_NAMES.index)
    rows = []
    sid = scenario_id if scenario_id is not None else ok[0].scenario_id
    rk = 0.0
    n = 0
    if scenario is not None:
        rk = scenario.kappa if scenario.kind == "dependent" else scenario.rho
        n = scenario.n
    for e in estimators:
        per = [r.stats[e] for r in ok if e in r.stats]
        b_ate, m_ate, c_ate = _bias_mse_cov(
            [s.ate for s in per], [s.ci_ate for s in per], truths.ate)
        b_sd, m_sd, c_sd = _bias_mse_cov(
            [s.sd for s in per], [s.ci_sd for s in per], truths.sd)
        b_pep, m_pep, c_pep = _bias_mse_cov(
            [s.pep for s in per], [s.ci_pep for s in per], truths.pep)
        rows.append(AggregateRow(
            scenario_id=sid, rho_or_kappa=float(rk), n=n, estimator=e,
            n_reps=len(per),
            bias_ate=b_ate, bias_sd=b_sd, bias_pep=b_pep,
            mse_ate=m_ate, mse_sd=m_sd, mse_pep=m_pep,
            cov_ate=c_ate, cov_sd=c_sd, cov_pep=c_pep))
    return rows


def density_band(results, estimator: str, grid: np.ndarray) -> dict:
    """Pointwise mean and 2.5%/97.5% quantiles of the per-replication
    densities evaluated on the shared grid."""
    grid = np.asarray(grid)
    mats = []
    for r in results:
        if r.error is not None or estimator not in r.densities:
            continue
        d = np.asarray(r.densities[estimator])
        if d.size != grid.size:
            raise ValueError(
                f"replication {r.rep_index}: density length {d.size} does "
                f"not match grid length {grid.size}")
        mats.append(d)
    if not mats:
        raise ValueError(f"no densities recorded for estimator {estimator!r}")
    mat = np.vstack(mats)
    q025, q975 = np.quantile(mat, [0.025, 0.975], axis=0)
    return {"grid": grid, "mean": mat.mean(axis=0),
            "q025": q025, "q975": q975}


def _run_task(args):
    (master_seed, scen_idx, rep_idx, scenario, scenario_id, estimators,
     params, bootstrap_b, grid, denominator) = args
    ss = np.random.SeedSequence([master_seed, scen_idx, rep_idx])
    try:
        return run_replication(
            scenario, estimators, params, bootstrap_b, ss,
            density_grid=grid, scenario_id=scenario_id, rep_index=rep_idx,
            denominator=denominator)
    except Exception as exc:  # recorded, not fatal to the batch
        return ReplicationResult(scenario_id=scenario_id, rep_index=rep_idx,
                                 error=f"{type(exc).__name__}: {exc}")


def run_experiment(spec: ExperimentSpec, out_dir, workers: int = 1,
                   mc_n: int = 1_000_000):
    """Run every scenario block, write the results directory, and return
    (aggregate rows, failures)."""
    os.makedirs(out_dir, exist_ok=True)
    fp = fingerprint_of(spec.resolved())

    truths = {}
    grids = {}
    for sid, cfg in spec.scenarios:
        t = true_targets(cfg, mc_n=mc_n)
        truths[sid] = t
        grids[sid] = np.linspace(t.ate - DENSITY_SPAN_SDS * t.sd,
                                 t.ate + DENSITY_SPAN_SDS * t.sd,
                                 spec.grid_points)

    tasks = []
    for scen_idx, (sid, cfg) in enumerate(spec.scenarios):
        for rep_idx in range(spec.replications):
            tasks.append((spec.master_seed, scen_idx, rep_idx, cfg, sid,
                          spec.estimators, spec.params, spec.bootstrap_b,
                          grids[sid], spec.denominator))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        results = [_run_task(t) for t in tasks]

    by_scenario: dict[str, list[ReplicationResult]] = {}
    for r in results:
        by_scenario.setdefault(r.scenario_id, []).append(r)

    failures = [(r.scenario_id, r.rep_index, r.error)
                for r in results if r.error is not None]

    all_rows = []
    for sid, cfg in spec.scenarios:
        n_ok = sum(1 for r in by_scenario[sid] if r.error is None)
        if n_ok < 2:
            continue  # failures are reported; nothing to aggregate
        rows = aggregate(by_scenario[sid], truths[sid], scenario=cfg,
                         scenario_id=sid)
        all_rows.extend(rows)

    _write_replications_csv(os.path.join(out_dir, "replications.csv"),
                            results, fp)
    _write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), all_rows, fp)
    for est in spec.estimators:
        per_est = {}
        for sid, cfg in spec.scenarios:
            try:
                per_est[sid] = density_band(by_scenario[sid], est, grids[sid])
            except ValueError:
                continue
        if per_est:
            _write_density_csv(
                os.path.join(out_dir, f"density_{est}.csv"), per_est, fp)

    return all_rows, failures


def _fmt(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".17g")


def _write_replications_csv(path, results, fingerprint: str) -> None:
    cols = ("scenario,rep,estimator,ate,sd,pep,ci_ate_lo,ci_ate_hi,"
            "ci_sd_lo,ci_sd_hi,ci_pep_lo,ci_pep_hi,error")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fingerprint={fingerprint}\n")
        fh.write(cols + "\n")
        for r in sorted(results, key=lambda r: (r.scenario_id, r.rep_index)):
            if r.error is not None:
                fh.write(f"{r.scenario_id},{r.rep_index},,,,,,,,,,,"
                         f"\"{r.error}\"\n")
                continue
            for est, s in r.stats.items():
                ci = []
                for pair in (s.ci_ate, s.ci_sd, s.ci_pep):
                    ci += ["", ""] if pair is None else [_fmt(pair[0]),
                                                         _fmt(pair[1])]
                fh.write(",".join([r.scenario_id, str(r.rep_index), est,
                                   _fmt(s.ate), _fmt(s.sd), _fmt(s.pep),
                                   *ci, ""]) + "\n")


def _write_aggregate_csv(path, rows, fingerprint: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fingerprint={fingerprint}\n")
        fh.write("scenario,rho_or_kappa,n,estimator,n_reps,"
                 "bias_ate,bias_sd,bias_pep,mse_ate,mse_sd,mse_pep,"
                 "cov_ate,cov_sd,cov_pep\n")
        for r in rows:
            fh.write(",".join([
                r.scenario_id, _fmt(r.rho_or_kappa), str(r.n), r.estimator,
                str(r.n_reps),
                _fmt(r.bias_ate), _fmt(r.bias_sd), _fmt(r.bias_pep),
                _fmt(r.mse_ate), _fmt(r.mse_sd), _fmt(r.mse_pep),
                _fmt(r.cov_ate), _fmt(r.cov_sd), _fmt(r.cov_pep)]) + "\n")


def _write_density_csv(path, per_scenario: dict, fingerprint: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fingerprint={fingerprint}\n")
        fh.write("scenario,y,mean,q025,q975\n")
        for sid, band in per_scenario.items():
            for i in range(band["grid"].size):
                fh.write(",".join([
                    sid, _fmt(band["grid"][i]), _fmt(band["mean"][i]),
                    _fmt(band["q025"][i]), _fmt(band["q975"][i])]) + "\n")
