import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itevar.config import ExperimentSpec, parse_experiment_file
from itevar.forest import ForestParams
from itevar.harness import (AggregateRow, EstimatorStats, ReplicationResult,
                            aggregate, density_band, run_experiment,
                            run_replication)
from itevar.scenarios import (TrueTargets, generate_dataset, scenario_config,
                              true_targets)

PARAMS = ForestParams(num_trees=40, seed=0)
BASE = scenario_config("baseline", 300, seed=0)


def _res(values, truth_like=None, cis=None):
    out = []
    for i, v in enumerate(values):
        ci = None if cis is None else cis[i]
        out.append(ReplicationResult(
            scenario_id="s", rep_index=i,
            stats={"crf": EstimatorStats(ate=v, sd=v, pep=v, ci_ate=ci,
                                         ci_sd=ci, ci_pep=ci)}))
    return out


def test_replication_is_pure_function_of_seed():
    a = run_replication(BASE, ("crf",), PARAMS, 0, 12345)
    b = run_replication(BASE, ("crf",), PARAMS, 0, 12345)
    assert a.stats == b.stats
    c = run_replication(BASE, ("crf",), PARAMS, 0, 12346)
    assert c.stats != a.stats


def test_bootstrap_does_not_perturb_point_estimates():
    a = run_replication(BASE, ("crf",), PARAMS, 0, 7)
    b = run_replication(BASE, ("crf",), PARAMS, 3, 7)
    sa, sb = a.stats["crf"], b.stats["crf"]
    assert (sa.ate, sa.sd, sa.pep) == (sb.ate, sb.sd, sb.pep)
    assert sa.ci_ate is None
    assert sb.ci_ate is not None
    assert sb.ci_ate[0] <= sb.ci_ate[1]
    assert sb.ci_sd[0] <= sb.ci_sd[1]


def test_crf_and_extended_share_ate():
    r = run_replication(BASE, ("crf", "extended"), PARAMS, 0, 11)
    assert r.stats["crf"].ate == r.stats["extended"].ate


def test_unknown_estimator_rejected():
    with pytest.raises(ValueError, match="estimator"):
        run_replication(BASE, ("crf", "magic"), PARAMS, 0, 1)


def test_aggregate_fixtures():
    truth = TrueTargets(ate=0.5, sd=0.5, pep=0.5)
    rows = aggregate(_res([0.5, 0.5, 0.5]), truth)
    assert rows[0].bias_ate == 0.0 and rows[0].mse_ate == 0.0
    rows = aggregate(_res([0.4, 0.6]), truth)
    assert abs(rows[0].bias_ate) < 1e-15
    assert np.isclose(rows[0].mse_ate, 0.01, rtol=1e-12)
    assert rows[0].cov_ate is None  # no intervals recorded


def test_aggregate_coverage():
    truth = TrueTargets(ate=0.5, sd=0.5, pep=0.5)
    cis = [(0.4, 0.6), (0.6, 0.7), (0.45, 0.52), (0.0, 0.1)]
    rows = aggregate(_res([0.5] * 4, cis=cis), truth)
    assert rows[0].cov_ate == 0.5


def test_aggregate_needs_two_reps():
    with pytest.raises(ValueError, match="2"):
        aggregate(_res([0.5]), TrueTargets(0.5, 0.5, 0.5))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30),
       st.floats(-5, 5))
def test_mse_dominates_squared_bias(values, truth):
    rows = aggregate(_res(values), TrueTargets(truth, truth, truth))
    r = rows[0]
    assert r.mse_ate >= r.bias_ate**2 - 1e-12


def test_oracle_estimator_is_unbiased():
    # feeding the hidden effects straight into the summaries must be
    # unbiased for every scenario family
    cases = [
        scenario_config("baseline", 2000, 0, rho=0.5),
        scenario_config("dependent", 2000, 0, kappa=-0.5),
        scenario_config("lognormal", 2000, 0, rho=0.25),
        scenario_config("nonlinear", 2000, 0),
        scenario_config("confounder", 2000, 0, strong=True, rho=1.0),
        scenario_config("randomized", 2000, 0),
    ]
    reps = 60
    for cfg in cases:
        truth = true_targets(cfg)
        results = []
        per = {"ate": [], "sd": [], "pep": []}
        for r in range(reps):
            ds = generate_dataset(scenario_config(
                cfg.kind, cfg.n, 5000 + r, **{
                    k: getattr(cfg, k) for k in
                    ("rho", "kappa", "strong") if getattr(cfg, k)}))
            ite = ds.hidden.ite
            per["ate"].append(ite.mean())
            per["sd"].append(ite.std(ddof=1))
            per["pep"].append((ite > 0).mean())
        for key, truth_v in (("ate", truth.ate), ("sd", truth.sd),
                             ("pep", truth.pep)):
            vals = np.asarray(per[key])
            bias = vals.mean() - truth_v
            se = vals.std(ddof=1) / np.sqrt(reps)
            # the Monte Carlo truth itself carries error, noticeable for
            # the heavy-tailed scenarios' SD; allow for it additively
            assert abs(bias) < 3 * se + 0.008, (cfg.kind, key, bias, se)


def test_density_band_fixtures():
    grid = np.array([0.0, 1.0])
    res = []
    for i, level in enumerate((1.0, 2.0, 3.0)):
        res.append(ReplicationResult(
            scenario_id="s", rep_index=i, stats={},
            densities={"crf": np.full(2, level)}))
    band = density_band(res, "crf", grid)
    assert np.allclose(band["mean"], 2.0)
    # linear-interpolation empirical quantiles
    assert np.allclose(band["q025"], 1.05)
    assert np.allclose(band["q975"], 2.95)

    same = [ReplicationResult(scenario_id="s", rep_index=i, stats={},
                              densities={"crf": np.array([1.0, 2.0])})
            for i in range(5)]
    band = density_band(same, "crf", grid)
    assert np.allclose(band["q975"] - band["q025"], 0.0)

    with pytest.raises(ValueError, match="grid"):
        density_band(res, "crf", np.zeros(3))
    with pytest.raises(ValueError, match="densities"):
        density_band(res, "extended", grid)


def _write_spec(path, reps=2, n=250, bootstrap=0, trees=30,
                estimators="crf,extended"):
    path.write_text(f"""
[experiment]
replications = {reps}
bootstrap = {bootstrap}
seed = 99
estimators = {estimators}
grid_points = 64

[forest]
trees = {trees}
min_node_size = 5

[scenario rho0]
kind = baseline
n = {n}
rho = 0.0
""")


def test_run_experiment_outputs(tmp_path):
    spec_file = tmp_path / "exp.ini"
    _write_spec(spec_file)
    spec = parse_experiment_file(spec_file)
    out = tmp_path / "results"
    rows, failures = run_experiment(spec, out, workers=1, mc_n=100_000)
    assert not failures
    assert {r.estimator for r in rows} == {"crf", "extended"}
    for name in ("replications.csv", "aggregate.csv", "density_crf.csv",
                 "density_extended.csv"):
        text = (out / name).read_text().splitlines()
        assert text[0].startswith("# fingerprint=")
    agg = (out / "aggregate.csv").read_text().splitlines()
    assert agg[1].startswith("scenario,")
    assert len(agg) == 4  # comment, header, 2 estimator rows


def test_worker_count_does_not_change_results(tmp_path):
    spec_file = tmp_path / "exp.ini"
    _write_spec(spec_file, reps=3)
    spec = parse_experiment_file(spec_file)
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    run_experiment(spec, out1, workers=1, mc_n=100_000)
    run_experiment(spec, out2, workers=3, mc_n=100_000)
    for name in ("replications.csv", "aggregate.csv", "density_crf.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_isolated_replication_matches_batch(tmp_path):
    spec_file = tmp_path / "exp.ini"
    _write_spec(spec_file, reps=3)
    spec = parse_experiment_file(spec_file)
    sid, cfg = spec.scenarios[0]
    batch = [run_replication(cfg, spec.estimators, spec.params,
                             spec.bootstrap_b,
                             np.random.SeedSequence([99, 0, r]),
                             scenario_id=sid, rep_index=r)
             for r in range(3)]
    redo = run_replication(cfg, spec.estimators, spec.params,
                           spec.bootstrap_b,
                           np.random.SeedSequence([99, 0, 1]),
                           scenario_id=sid, rep_index=1)
    assert redo.stats == batch[1].stats


def test_failures_recorded_not_fatal(tmp_path):
    spec_file = tmp_path / "exp.ini"
    # n too small for the forest preconditions -> every replication fails
    spec_file.write_text("""
[experiment]
replications = 2
bootstrap = 0
seed = 5
estimators = crf

[forest]
trees = 5
min_node_size = 20

[scenario tiny]
kind = baseline
n = 30
""")
    spec = parse_experiment_file(spec_file)
    rows, failures = run_experiment(spec, tmp_path / "r", workers=1,
                                    mc_n=100_000)
    assert rows == []
    assert len(failures) == 2
    assert all("ValueError" in err for _, _, err in failures)
    text = (tmp_path / "r" / "replications.csv").read_text()
    assert "ValueError" in text


def test_spec_parsing_errors(tmp_path):
    from itevar.config import SpecError
    f = tmp_path / "bad.ini"
    f.write_text("[experiment]\nreplications = 2\n\n[scenario a]\nkind = baseline\nn = 100\n")
    with pytest.raises(SpecError, match="seed"):
        parse_experiment_file(f)
    f.write_text("[experiment]\nseed = 1\ntypo_key = 3\n\n[scenario a]\nkind = baseline\nn = 100\n")
    with pytest.raises(SpecError, match="typo_key"):
        parse_experiment_file(f)
    f.write_text("[experiment]\nseed = 1\n\n[scenario a]\nkind = baseline\nn = 100\nkappa = 0.5\n")
    with pytest.raises(SpecError, match="kappa"):
        parse_experiment_file(f)
    f.write_text("[experiment]\nseed = 1\nestimators = crf, nope\n\n[scenario a]\nkind = baseline\nn = 100\n")
    with pytest.raises(SpecError, match="nope"):
        parse_experiment_file(f)
    f.write_text("[experiment]\nseed = 1\n")
    with pytest.raises(SpecError, match="scenario"):
        parse_experiment_file(f)
