import json

import numpy as np
import pytest

from itevar.cli import main
from itevar.data import read_dataset_csv, write_dataset_csv
from itevar.scenarios import generate_dataset, scenario_config


def test_simulate_schema_and_determinism(tmp_path, capsys):
    out1 = tmp_path / "d1.csv"
    out2 = tmp_path / "d2.csv"
    args = ["simulate", "--scenario", "baseline", "--n", "100", "--rho", "0",
            "--seed", "1"]
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().splitlines()
    assert lines[0].startswith("# fingerprint=")
    assert lines[1].startswith("# config=")
    assert lines[2] == "x_sex,x_sbp,x0,a,y"
    assert len(lines) == 3 + 100
    assert all(len(l.split(",")) == 5 for l in lines[3:])


def test_simulate_oracle_columns(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["simulate", "--scenario", "baseline", "--n", "10", "--rho",
                 "0.5", "--seed", "2", "--out", str(out), "--oracle"]) == 0
    lines = out.read_text().splitlines()
    assert lines[2] == "x_sex,x_sbp,x0,a,y,y0,y1,ite"


def test_simulate_flag_conflicts(tmp_path, capsys):
    rc = main(["simulate", "--scenario", "baseline", "--n", "10", "--rho",
               "0", "--kappa", "-0.5", "--seed", "1",
               "--out", str(tmp_path / "x.csv")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "--kappa" in err and "--scenario" in err
    rc = main(["simulate", "--scenario", "dependent", "--n", "10", "--rho",
               "0", "--seed", "1", "--out", str(tmp_path / "x.csv")])
    assert rc == 1  # dependent requires kappa
    rc = main(["simulate", "--scenario", "baseline", "--n", "10",
               "--strong", "--seed", "1", "--out", str(tmp_path / "x.csv")])
    assert rc == 1
    assert "--strong" in capsys.readouterr().err


def test_simulate_dependent_metadata(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["simulate", "--scenario", "dependent", "--kappa", "-0.5",
                 "--n", "10", "--rho", "0", "--seed", "3",
                 "--out", str(out)]) == 0
    config_line = out.read_text().splitlines()[1]
    meta = json.loads(config_line.split("config=", 1)[1])
    assert abs(meta["sigma1_effective"] - 2.4125) < 1e-4


def test_dataset_csv_round_trip(tmp_path):
    ds = generate_dataset(scenario_config("baseline", 50, seed=4))
    obs = ds.observed()
    path = tmp_path / "d.csv"
    write_dataset_csv(path, obs)
    back, _ = read_dataset_csv(path)
    assert np.array_equal(back.x, obs.x)
    assert np.array_equal(back.a, obs.a)
    assert np.array_equal(back.y, obs.y)


def test_fit_outputs_and_round_trip(tmp_path):
    data_csv = tmp_path / "d.csv"
    assert main(["simulate", "--scenario", "baseline", "--n", "300", "--rho",
                 "0", "--seed", "8", "--out", str(data_csv)]) == 0
    out1 = tmp_path / "fit1"
    assert main(["fit", "--input", str(data_csv), "--estimator", "crf",
                 "--trees", "40", "--seed", "5", "--out", str(out1)]) == 0
    summary = json.loads((out1 / "summary.json").read_text())
    assert set(summary) >= {"estimator", "ate", "sd", "pep", "fingerprint"}
    lines = (out1 / "fit.csv").read_text().splitlines()
    assert lines[0].startswith("# fingerprint=")
    assert "i,tau_hat" in lines[:3][-1]

    # fitting the written CSV equals fitting the in-memory dataset
    from itevar.causal import fit_causal_forest
    from itevar.forest import ForestParams
    ds = generate_dataset(scenario_config("baseline", 300, seed=8))
    cf = fit_causal_forest(ds.observed(), ForestParams(num_trees=40, seed=5))
    assert summary["ate"] == cf.ate_aipw().ate

    out2 = tmp_path / "fit2"
    assert main(["fit", "--input", str(data_csv), "--estimator", "extended",
                 "--trees", "40", "--seed", "5", "--out", str(out2)]) == 0
    lines = (out2 / "fit.csv").read_text().splitlines()
    assert lines[2] == "i,tau_hat,theta0_hat,delta_hat,sigma1_sq_hat"
    s2 = json.loads((out2 / "summary.json").read_text())
    assert s2["ate"] == summary["ate"]  # shared pipeline seed derivation

    out3 = tmp_path / "fit3"
    assert main(["fit", "--input", str(data_csv), "--estimator",
                 "crf_no_orth", "--trees", "40", "--seed", "5",
                 "--out", str(out3)]) == 0
    s3 = json.loads((out3 / "summary.json").read_text())
    assert s3["estimator"] == "crf_no_orth"


def test_fit_denominator_flag(tmp_path):
    data_csv = tmp_path / "d.csv"
    main(["simulate", "--scenario", "baseline", "--n", "300", "--rho", "0",
          "--seed", "9", "--out", str(data_csv)])
    outs = []
    for flag in ([], ["--paper-literal-denominator"]):
        out = tmp_path / f"fit{len(flag)}"
        assert main(["fit", "--input", str(data_csv), "--estimator", "crf",
                     "--trees", "30", "--seed", "2", "--out", str(out)]
                    + flag) == 0
        outs.append(json.loads((out / "summary.json").read_text()))
    assert outs[0]["config"]["denominator"] == "squared"
    assert outs[1]["config"]["denominator"] == "plain"
    assert outs[0]["sd"] != outs[1]["sd"]


def test_fit_noiseless_constant_effect(tmp_path):
    cfg = scenario_config("baseline", 400, seed=10, sigma0=0.0, sigma1=0.0,
                          tau_sex=0.0, tau_sbp=0.0)
    ds = generate_dataset(cfg)
    path = tmp_path / "d.csv"
    write_dataset_csv(path, ds.observed())
    out = tmp_path / "fit"
    assert main(["fit", "--input", str(path), "--estimator", "crf",
                 "--trees", "100", "--seed", "3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["ate"] - 0.45) < 0.05


def test_fit_bad_input(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("w,x,y,z\n1,2,3,4\n")
    rc = main(["fit", "--input", str(bad), "--estimator", "crf",
               "--seed", "1", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "expected columns" in capsys.readouterr().err
    rc = main(["fit", "--input", str(bad), "--estimator", "nope",
               "--seed", "1", "--out", str(tmp_path / "o")])
    assert rc == 1  # argparse choice rejection


def test_experiment_smoke_and_workers(tmp_path):
    spec = tmp_path / "exp.ini"
    spec.write_text("""
[experiment]
replications = 2
bootstrap = 2
seed = 31
estimators = crf
grid_points = 32

[forest]
trees = 25

[scenario smoke]
kind = baseline
n = 250
rho = 0.0
""")
    out1 = tmp_path / "r1"
    assert main(["experiment", "--config", str(spec), "--out",
                 str(out1)]) == 0
    for name in ("replications.csv", "aggregate.csv", "density_crf.csv"):
        assert (out1 / name).exists()
    out2 = tmp_path / "r2"
    assert main(["experiment", "--config", str(spec), "--out", str(out2),
                 "--workers", "8"]) == 0
    for name in ("replications.csv", "aggregate.csv", "density_crf.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_experiment_failure_exit_code(tmp_path, capsys):
    spec = tmp_path / "exp.ini"
    spec.write_text("""
[experiment]
replications = 3
bootstrap = 0
seed = 31
estimators = crf

[forest]
trees = 5
min_node_size = 40

[scenario broken]
kind = baseline
n = 60
""")
    rc = main(["experiment", "--config", str(spec), "--out",
               str(tmp_path / "r")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "FAILED" in err and "replication=0" in err


def test_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--scenario", "unknown", "--n", "5",
                 "--seed", "1", "--out", "x"]) == 1
    assert main(["experiment", "--config", str(tmp_path / "missing.ini"),
                 "--out", str(tmp_path / "o")]) == 1
    assert main([]) == 1
