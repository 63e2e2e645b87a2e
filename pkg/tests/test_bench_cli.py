import csv
import io
import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppsdoa.bench import (
    ConfigError,
    ScenarioConfig,
    associate_estimates,
    format_config,
    load_config,
    parse_config,
    resolution_scenario,
    rmse,
    run_monte_carlo,
    snr_to_noise_power,
    four_source_scenario,
    time_estimators,
)
from ppsdoa.cli import main, parse_range
from ppsdoa.crb import compute_crb
from ppsdoa.estimators import EstimationReport, RansacOptions
from ppsdoa.mlcost import EstimateSet
from ppsdoa.model import ArrayConfig, SourceParams

from conftest import WC

CONFIG = "configs/four_source.cfg"


@pytest.fixture(scope="module")
def one_source():
    # a cheap single-source scenario for harness checks
    array = ArrayConfig(M=8, d=1.5, c=1500.0, delta=0.01, N=128, omega_c=WC)
    src = SourceParams(math.radians(-8), (WC, 150.0), 1.0)
    return ScenarioConfig(array, (src,), snr_db=(10.0,), runs=4, ransac=RansacOptions(lam=60))


# --- scenario -------------------------------------------------------------


def test_snr_to_noise_power():
    assert snr_to_noise_power(10) == pytest.approx(0.1)
    assert snr_to_noise_power(0) == 1.0


def test_scenario_validation(four_src):
    with pytest.raises(ConfigError):
        four_src.with_(runs=0)
    with pytest.raises(ConfigError):
        four_src.with_(sweep="angle")
    with pytest.raises(ConfigError):
        four_src.with_(estimator="alg9")


def test_sweep_points(four_src):
    sc = resolution_scenario("delta_theta", 0.0).with_(sweep="delta_theta", sweep_values=(4.0, 10.0))
    point, snr = sc.at(10.0)
    assert snr == 20.0
    assert math.degrees(point.sources[1].theta - point.sources[0].theta) == pytest.approx(10.0)
    sc2 = sc.with_(sweep="delta_phi2")
    point, _ = sc2.at(30.0)
    assert point.sources[1].phi[1] - point.sources[0].phi[1] == pytest.approx(30.0)
    sens, _ = four_src.with_(sweep="sensors", sweep_values=(4,)).at(4)
    assert sens.array.M == 4


def test_config_round_trip(four_src):
    assert parse_config(format_config(four_src)) == four_src
    cfgfile = load_config(CONFIG)
    assert cfgfile.array == four_src.array and cfgfile.ransac == four_src.ransac
    for a, b in zip(cfgfile.sources, four_src.sources):
        npt.assert_allclose(a.phi, b.phi, rtol=1e-15)
        assert a.amplitude == b.amplitude


@pytest.mark.parametrize(
    "text",
    [
        "sensors = 8",  # missing keys
        format_config(four_source_scenario()) + "bogus = 1\n",
        format_config(four_source_scenario()).replace("sensors = 8", "sensors = eight"),
        format_config(four_source_scenario()).replace("sensors = 8", "sensors = 1"),
        "no equals sign",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


# --- association and RMSE -------------------------------------------------


def test_association(four_src):
    truth = EstimateSet.from_sources(four_src.sources)
    crb = compute_crb(four_src.array, four_src.sources, 0.1)
    assert associate_estimates(truth, truth, crb) == (0, 1, 2, 3)
    rev = truth.take([3, 2, 1, 0])
    assert associate_estimates(truth, rev, crb) == (3, 2, 1, 0)
    rng = np.random.default_rng(0)
    perm = rng.permutation(4)
    v = truth.to_vector().reshape(4, 5)
    gaps = np.array([math.radians(17), 100.0, 300.0, 175.0, 12.0])
    noisy = EstimateSet.from_vector((v + 0.1 * gaps * rng.uniform(-1, 1, size=v.shape)).ravel(), 4).take(perm)
    got = associate_estimates(truth, noisy, crb)
    assert [perm[j] for j in got] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        associate_estimates(truth, truth.take([0, 1]))


@settings(max_examples=30)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=40))
def test_rmse_closed_form(errs):
    e = np.array(errs).reshape(-1, 1) if len(errs) % 2 else np.array(errs).reshape(-1, 2)
    assert rmse(e**2) == pytest.approx(math.sqrt(np.sum(e**2) / e.size), rel=1e-12, abs=1e-300)
    assert rmse(np.zeros((0, 2))) != rmse(np.zeros((0, 2)))


def test_zero_error_stub_gives_zero_rmse(four_src):
    truth = EstimateSet.from_sources(four_src.sources)

    def stub(x, cfg, K, L, opts):
        return EstimationReport(truth.take([1, 0, 3, 2]))

    table = run_monte_carlo(four_src.with_(runs=3), estimator_fn=stub)
    npt.assert_array_equal(table.rmse_vector(0), 0.0)
    assert table.rows[0]["failures"] == 0


def test_failures_excluded(four_src):
    truth = EstimateSet.from_sources(four_src.sources)
    calls = []

    def flaky(x, cfg, K, L, opts):
        calls.append(1)
        rep = EstimationReport(truth)
        rep.failed = len(calls) % 2 == 0
        return rep

    table = run_monte_carlo(four_src.with_(runs=4), estimator_fn=flaky)
    row = table.rows[0]
    assert row["failures"] == 2 and row["runs"] == 4 and row["rmse_theta_deg"] == 0.0


def test_noiseless_monte_carlo(four_src):
    for name in ("alg1", "alg2"):
        table = run_monte_carlo(four_src.with_(runs=3, estimator=name, snr_db=(400.0,)))
        assert table.rows[0]["failures"] == 0
        assert table.rows[0]["rmse_theta_deg"] <= 1e-3


def test_csv_columns(one_source):
    table = run_monte_carlo(one_source.with_(runs=2, snr_db=(10.0, 20.0)))
    text = table.to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["snr_db", "rmse_theta_deg", "rmse_phi1_rad_s", "rmse_phi2_rad_s2", "crb_theta_deg",
                       "crb_phi1_rad_s", "crb_phi2_rad_s2", "failures", "runs"]
    assert len(rows) == 3
    assert "mean_time_s" in table.to_csv(timing=True).splitlines()[0]
    assert all(float(v) >= 0 for v in rows[1][1:])


def test_csv_byte_deterministic(one_source):
    a = run_monte_carlo(one_source).to_csv()
    b = run_monte_carlo(one_source).to_csv()
    c = run_monte_carlo(one_source, workers=2).to_csv()
    assert a == b == c
    assert run_monte_carlo(one_source.with_(seed=1)).to_csv() != a


def test_timing_monotone_in_lambda(one_source):
    def median_time(lam):
        sc = one_source.with_(ransac=RansacOptions(lam=lam, screen_candidates=1))
        return np.median(time_estimators(sc, ["alg1-no-refine"], 10.0, 3)["alg1-no-refine"])

    assert median_time(500) >= median_time(50)


# --- CLI ------------------------------------------------------------------


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_range():
    assert parse_range("-20:5:20") == [-20.0 + 5 * i for i in range(9)]
    assert parse_range("1,2.5") == [1.0, 2.5]
    with pytest.raises(ConfigError):
        parse_range("1:0:3")
    with pytest.raises(ConfigError):
        parse_range("a:b")


def test_cli_crb_shape(capsys):
    code, out, _ = _run(capsys, "crb", "--config", CONFIG, "--snr", "10")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert len(rows) == 2 and len(rows[1]) == 1 + 4 * 5


def test_cli_beampattern(capsys):
    code, out, _ = _run(capsys, "beampattern", "--sensors", "4", "--omega-ratio", "0.9")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["theta_deg", "gain_b0"]
    assert all(len(r) == 2 for r in rows)
    vals = {float(r[0]): float(r[1]) for r in rows[1:]}
    assert vals[0.0] == pytest.approx(1.0)
    code, out, _ = _run(capsys, "beampattern", "--mainlobe", "--sensors", "4", "--points", "5")
    assert code == 0 and out.splitlines()[0].startswith("omega_ratio,theta_b0_deg")


def test_cli_simulate_estimate_round_trip(capsys, tmp_path):
    blk = tmp_path / "blk.csv"
    assert main(["simulate", "--config", CONFIG, "--snr", "30", "--seed", "1", "--out", str(blk)]) == 0
    code, out, _ = _run(capsys, "estimate", "--config", CONFIG, "--input", str(blk), "--estimator", "alg2")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 4
    got = sorted(float(r["theta_deg"]) for r in rows)
    npt.assert_allclose(got, [-25, -8, 8, 25], atol=0.2)


def test_cli_estimation_failure_exit_code(capsys, tmp_path):
    blk = tmp_path / "zeros.csv"
    lines = ["snapshot,sensor,re,im"] + [f"{n},{m},0.0,0.0" for n in range(128) for m in range(8)]
    blk.write_text("\n".join(lines) + "\n")
    code, _, err = _run(capsys, "estimate", "--config", CONFIG, "--input", str(blk))
    assert code == 2 and "failed" in err


def test_cli_support(capsys):
    code, out, _ = _run(capsys, "support", "--sensors", "4", "--snr", "30", "--seed", "2")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and rows
    assert {int(r["beam"]) for r in rows} <= set(range(4))


def test_cli_mc(capsys, tmp_path):
    cfgfile = tmp_path / "one.cfg"
    cfgfile.write_text(
        "sensors = 8\nspacing_m = 1.5\nspeed_m_s = 1500\ndelta_s = 0.01\nsnapshots = 128\ncarrier_hz = 450\n"
        "order = 2\nransac.lambda = 40\nsource.1.theta_deg = -8\nsource.1.phi2 = 150\n"
    )
    out = tmp_path / "mc.csv"
    args = ["mc", "--config", str(cfgfile), "--snr", "0:10:20", "--runs", "2", "--estimator", "alg2",
            "--out", str(out), "--timing"]
    assert main(args) == 0
    first = out.read_text()
    rows = list(csv.reader(io.StringIO(first)))
    assert len(rows) == 4 and "mean_time_s" in rows[0]
    # identical flags (timing excluded) produce identical bytes
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    base = ["mc", "--config", str(cfgfile), "--snr", "10", "--runs", "2", "--estimator", "alg2"]
    assert main(base + ["--out", str(a)]) == 0 and main(base + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["mc", "--nope"],
        [],
        ["crb", "--config", "missing.cfg"],
        ["mc", "--config", CONFIG, "--sweep", "delta_theta"],
        ["mc", "--config", CONFIG, "--snr", "1:0:2"],
        ["beampattern", "--sensors", "1"],
    ],
)
def test_cli_config_errors_exit_1(capsys, argv):
    code, _, err = _run(capsys, *argv)
    assert code == 1 and err
