import json
import os

import numpy as np
import pytest

from grsr import io as gio
from grsr.bench import GRSR, ExperimentConfig, run_experiment
from grsr.cli import EXIT_ACCEPT, EXIT_CONFIG, EXIT_OK, main
from grsr.simulate import GqnConfig, simulate_dataset


@pytest.fixture(scope="module")
def sim():
    return simulate_dataset(GqnConfig(n=60), 5)


def test_dataset_round_trip(tmp_path, sim):
    data, _ = sim
    p = tmp_path / "d.csv"
    gio.write_dataset_csv(p, data)
    back = gio.read_dataset_csv(p)
    for f in ("y_obs", "X_obs", "obs_sites", "miss_sites", "X_miss"):
        np.testing.assert_array_equal(getattr(back, f), getattr(data, f))


def test_truth_round_trip(tmp_path, sim):
    _, truth = sim
    p = tmp_path / "t.json"
    gio.write_truth_json(p, truth)
    back = gio.read_truth_json(p)
    np.testing.assert_array_equal(back.delta_true, truth.delta_true)
    np.testing.assert_array_equal(back.missing_mask, truth.missing_mask)
    assert back.sigma2_true == truth.sigma2_true


def test_draws_round_trip(tmp_path, sim):
    from grsr.covariance import CovarianceModel
    from grsr.model import HyperGrid, PriorSpec
    from grsr.sampler import run_grsr

    data, _ = sim
    res = run_grsr(data, CovarianceModel.bspline(6), PriorSpec(HyperGrid.uniform(K=20)), B=25, rng=1)
    gio.write_draws_csv(tmp_path / "d.csv", res.draws)
    gio.write_g_csv(tmp_path / "g.csv", res.draws.g)
    back = gio.read_draws_csv(tmp_path / "d.csv", tmp_path / "g.csv")
    for f in ("delta", "beta", "g", "sigma2", "tau2", "y_miss"):
        np.testing.assert_array_equal(getattr(back, f), getattr(res.draws, f))
    assert back.gamma == res.draws.gamma


def test_report_round_trip(tmp_path):
    rep = run_experiment(ExperimentConfig(n_reps=2, methods=(GRSR,), B=20, K=10,
                                          sim_overrides={"n": 30}), seed=2)
    paths = gio.write_report(tmp_path, rep)
    assert all(os.path.exists(p) for p in paths)
    back = gio.read_report_csv(paths[0])
    mean, se = rep.summary()[GRSR]["rmse_delta"]
    assert back[GRSR]["rmse_delta_mean"] == mean and back[GRSR]["rmse_delta_se"] == se


def test_dataset_parse_errors(tmp_path):
    from grsr.errors import ShapeMismatch

    p = tmp_path / "bad.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ShapeMismatch):
        gio.read_dataset_csv(p)
    p.write_text("")
    with pytest.raises(ShapeMismatch):
        gio.read_dataset_csv(p)


def write_cfg(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_cli_simulate_defaults(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--seed", "1"]) == EXIT_OK
    lines = (out / "dataset.csv").read_text().splitlines()
    assert len(lines) == 201
    assert sum(line.split(",")[1] == "" for line in lines[1:]) == 20
    assert set(json.loads((out / "truth.json").read_text())) >= {"beta_true", "delta_true", "sigma2_true", "mask"}


def test_cli_simulate_no_missing(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", {"missing_frac": 0.0, "n": 50})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s"), "--seed", "1"]) == EXIT_OK
    rows = (tmp_path / "s" / "dataset.csv").read_text().splitlines()[1:]
    assert all(r.split(",")[1] != "" for r in rows)


def test_cli_bad_key_names_key(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "c.json", {"snrr": 2})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == EXIT_CONFIG
    assert "snrr" in capsys.readouterr().err


def test_cli_bad_json_and_missing_files(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p)]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "f")]) == EXIT_CONFIG


def test_cli_unknown_method_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--method", "lasso"])
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def dataset_path(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["simulate", "--out", str(d), "--seed", "3"]) == EXIT_OK
    return str(d / "dataset.csv")


def test_cli_fit_grsr_and_gibbs(tmp_path, dataset_path):
    cfg = write_cfg(tmp_path, "f.json", {"B": 100, "grid": {"K": 50}, "gibbs": {"iters": 300, "burn": 100, "thin": 2}})
    for method in ("grsr", "gibbs"):
        out = tmp_path / method
        assert main(["fit", "--config", cfg, "--data", dataset_path, "--method", method,
                     "--out", str(out), "--seed", "4", "--threads", "2", "--emit-g"]) == EXIT_OK
        draws = gio.read_draws_csv(out / "draws.csv", out / "g_draws.csv")
        assert len(draws) == 100 and draws.g.shape == (100, 180)
        summ = json.loads((out / "summary.json").read_text())
        assert summ["method"] == method and summ["test"]["decision"] in ("AcceptNull", "RejectNull")


def test_cli_fit_byte_identical(tmp_path, dataset_path):
    outs = []
    for i, threads in enumerate(("1", "3")):
        out = tmp_path / f"r{i}"
        assert main(["fit", "--data", dataset_path, "--out", str(out), "--seed", "8", "--threads", threads]) == 0
        outs.append((out / "draws.csv").read_bytes())
    assert outs[0] == outs[1]


def test_cli_bench_smoke_and_assertion_failure(tmp_path, capsys):
    base = {"n_reps": 2, "methods": ["GRSR", "TRSR"], "B": 20, "grid": {"K": 10}, "sim": {"n": 30}}
    cfg = write_cfg(tmp_path, "b.json", base)
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "1"]) == EXIT_OK
    assert (tmp_path / "b" / "report.csv").exists()
    bad = dict(base, assertions=[{"kind": "metric_range", "name": "impossible-mspe", "method": "GRSR",
                                  "metric": "mspe", "max": -1.0}])
    cfg = write_cfg(tmp_path, "b2.json", bad)
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "b2"), "--seed", "1"]) == EXIT_ACCEPT
    assert "impossible-mspe" in capsys.readouterr().err
