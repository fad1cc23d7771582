import subprocess
import sys

import numpy as np
import pytest

from twoscale.harness import (AggregateSeries, ExperimentConfig, HarnessError,
                              UsageError, aggregate, parse_config,
                              parse_schedule_spec, read_csv, render_csv,
                              run_experiment, write_csv)
from twoscale.solver import Trace


def small_config(**overrides):
    base = dict(experiment="synthetic-sc", algo="fast", iters=2000, runs=3,
                seed=5, stride=200)
    base.update(overrides)
    return ExperimentConfig(**base)


# --- config parsing --------------------------------------------------------------

def test_parse_config_defaults_and_out_path():
    cfg = parse_config({"experiment": "tdc"})
    assert cfg.algo == "fast"
    assert cfg.iters == 200000 and cfg.runs == 20
    assert cfg.out_path().endswith("results/tdc-fast-1.csv")


def test_parse_config_file_and_cli_precedence(tmp_path):
    f = tmp_path / "cfg.txt"
    f.write_text("experiment=synthetic-sc\niters=1234\nruns=4\n")
    cfg = parse_config({"runs": 9}, config_file=str(f))
    assert cfg.experiment == "synthetic-sc"
    assert cfg.iters == 1234      # from file
    assert cfg.runs == 9          # CLI override


def test_parse_config_rejects_unknown_key(tmp_path):
    f = tmp_path / "cfg.txt"
    f.write_text("experiment=tdc\nbogus=1\n")
    with pytest.raises(UsageError, match="bogus"):
        parse_config({}, config_file=str(f))


def test_parse_config_rejects_malformed_value(tmp_path):
    f = tmp_path / "cfg.txt"
    f.write_text("experiment=tdc\niters=abc\n")
    with pytest.raises(UsageError, match="abc"):
        parse_config({}, config_file=str(f))


def test_td0_only_valid_with_tdc():
    with pytest.raises(UsageError):
        ExperimentConfig(experiment="lqr", algo="td0")


def test_schedule_spec_reference_constants():
    s = parse_schedule_spec("appendixD")
    assert s.alpha(0) == 5e-4 and s.alpha(99999) == 5e-4
    assert s.beta(12) == 2e-3
    assert s.lam(0) == pytest.approx(0.08, abs=1e-15)
    assert s.lam(40) == pytest.approx(0.016, abs=1e-15)


def test_schedule_spec_poly_and_sqrt():
    s = parse_schedule_spec("poly:0.8,0.0005,0.002,9")
    assert s.kind == "polynomial"
    assert s.params["c_lambda"] == 0.8 and s.params["tau"] == 9.0
    s2 = parse_schedule_spec("sqrt:0.01,0.02")
    assert s2.kind == "sqrt"
    with pytest.raises(UsageError):
        parse_schedule_spec("poly:1,2")
    with pytest.raises(UsageError):
        parse_schedule_spec("mystery:1")


# --- aggregation -------------------------------------------------------------------

def _toy_trace(values, flagged=False):
    ks = np.arange(len(values)) * 10
    return Trace(ks=ks, metrics={"m": np.asarray(values, float)},
                 flagged=flagged, abort_k=None)


def test_aggregate_mean_and_stderr():
    traces = [_toy_trace([1.0, 2.0]), _toy_trace([3.0, 4.0])]
    agg = aggregate(traces)
    assert np.allclose(agg.means["m"], [2.0, 3.0])
    expected = np.std([1.0, 3.0], ddof=1) / np.sqrt(2)
    assert np.allclose(agg.stderrs["m"], [expected, expected])


def test_aggregate_excludes_and_counts_flagged():
    traces = [_toy_trace([1.0, 2.0]), _toy_trace([9.0], flagged=True)]
    agg = aggregate(traces)
    assert agg.n_flagged == 1
    assert np.allclose(agg.means["m"], [1.0, 2.0])


def test_aggregate_all_flagged_raises():
    with pytest.raises(HarnessError):
        aggregate([_toy_trace([1.0], flagged=True)])


def test_aggregate_permutation_invariance():
    traces = [_toy_trace([float(i), float(2 * i)]) for i in range(1, 6)]
    a1 = aggregate(traces)
    a2 = aggregate(traces[::-1])
    assert np.array_equal(a1.means["m"], a2.means["m"])
    assert np.array_equal(a1.stderrs["m"], a2.stderrs["m"])


# --- experiments -------------------------------------------------------------------

def test_single_run_reduces_to_trace():
    cfg = small_config(runs=1)
    result = run_experiment(cfg)
    assert result.series.n_runs == 1
    assert np.all(result.series.stderrs["z"] == 0.0)


def test_run_experiment_deterministic_bytes():
    cfg = small_config()
    r1 = run_experiment(cfg)
    r2 = run_experiment(cfg)
    assert render_csv(r1) == render_csv(r2)


def test_doubling_runs_shrinks_stderr():
    r8 = run_experiment(small_config(runs=8, iters=4000))
    r16 = run_experiment(small_config(runs=16, iters=4000))
    s8 = r8.series.stderrs["z"][1:]
    s16 = r16.series.stderrs["z"][1:]
    ratio = np.median(s8 / s16)
    assert np.sqrt(2.0) * 0.7 < ratio < np.sqrt(2.0) * 1.3


def test_rate_report_contents():
    result = run_experiment(small_config(iters=20000, runs=4, stride=500))
    rate = result.rate
    assert rate["metric"] == "z"
    assert rate["theory_exponent"] == -1.0
    assert rate["window"] == 0.5
    assert np.isfinite(rate["slope"]) and np.isfinite(rate["r2"])


def test_csv_round_trip(tmp_path):
    result = run_experiment(small_config())
    path = tmp_path / "out.csv"
    write_csv(result, path)
    ks, cols, header = read_csv(path)
    assert np.array_equal(ks, result.series.ks)
    for name, mean in result.series.means.items():
        assert np.array_equal(cols[f"{name}_mean"], mean)
        assert np.array_equal(cols[f"{name}_stderr"],
                              result.series.stderrs[name])
    assert any("flagged_runs=0" in line for line in header)


def test_empty_series_header_only(tmp_path):
    cfg = small_config()
    series = AggregateSeries(ks=np.array([], np.int64), means={}, stderrs={},
                             n_runs=0, n_flagged=0)
    from twoscale.harness import ExperimentResult
    from twoscale.solver import make_polynomial_schedule
    result = ExperimentResult(config=cfg, series=series,
                              schedule=make_polynomial_schedule(1, 1, 1, 1),
                              rate=None)
    path = tmp_path / "empty.csv"
    write_csv(result, path)
    text = path.read_text()
    lines = text.splitlines()
    assert lines[-1].startswith("k,") or lines[-1].startswith("k")
    ks, cols, header = read_csv(path)
    assert ks.size == 0


def test_all_replicas_flagged_is_numerical_failure():
    # absurdly large constant steps blow up the quadratic immediately
    cfg = small_config(iters=2000, runs=2, schedule="poly:200,800,800,800",
                       stride=50)
    with pytest.raises(HarnessError):
        run_experiment(cfg)


def test_arm_shares_instance_across_algos():
    r_fast = run_experiment(small_config(runs=2))
    r_std = run_experiment(small_config(runs=2, algo="standard"))
    # same seed => same instance => identical initial error
    assert r_fast.series.means["z"][0] == r_std.series.means["z"][0]


# --- CLI ----------------------------------------------------------------------------

def _cli(*args):
    return subprocess.run([sys.executable, "-m", "twoscale", *args],
                          capture_output=True, text=True)


def test_cli_run_twice_byte_identical(tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    args = ("run", "synthetic-sc", "--iters", "1500", "--runs", "2",
            "--seed", "3", "--stride", "300")
    r1 = _cli(*args, "--out", str(out1))
    r2 = _cli(*args, "--out", str(out2))
    assert r1.returncode == 0, r1.stderr
    assert r2.returncode == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_cli_usage_error_exit_code():
    r = _cli("run", "not-an-experiment")
    assert r.returncode == 1
    r = _cli("run", "tdc", "--schedule", "garbage:1")
    assert r.returncode == 1
    r = _cli("run", "lqr", "--algo", "td0")
    assert r.returncode == 1


def test_cli_numerical_failure_exit_code(tmp_path):
    r = _cli("run", "synthetic-sc", "--iters", "2000", "--runs", "2",
             "--schedule", "poly:200,800,800,800", "--stride", "50",
             "--out", str(tmp_path / "x.csv"))
    assert r.returncode == 2


def test_cli_check_schedule_and_dump_instance(tmp_path):
    r = _cli("check-schedule", "--schedule", "appendixD", "--regime", "sc",
             "--horizon", "1000", "--L", "2", "--mu-g", "1", "--mu-h", "1")
    assert r.returncode == 0
    assert "condition" in r.stdout and "c_alpha>=8/mu_h" in r.stdout
    out = tmp_path / "inst.txt"
    r = _cli("dump-instance", "--states", "4", "--actions", "3", "--dim", "2",
             "--gamma", "0.5", "--seed", "9", "--out", str(out))
    assert r.returncode == 0
    head = out.read_text().splitlines()[0].split()
    assert head[:4] == ["tdc", "4", "3", "2"]
