"""
Tests for cli.py
----------------
Each subcommand run through main() against a temporary output directory.
"""

import json
import math

import numpy as np
import pytest

from bloch_dynamics import g2_resonant
from cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main
from config_manager import OUTPUT_DIR_ENV
from data_io import write_correlation_csv
from emitter_types import CorrelationCurve, EmitterParams
from linewidth_models import LogisticLinewidthModel, boltzmann_curve, ftl_crossing_temperature, logistic_curve

GAMMA_HZ = 109e6


@pytest.fixture(autouse=True)
def no_env_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


def run(tmp_path, *argv):
    return main([*argv, "--output-dir", str(tmp_path), "-q"])


def envelope(tmp_path, command):
    return json.loads((tmp_path / f"{command}.json").read_text())


def power_series_csv(path, slope, offset_hz=0.5 * GAMMA_HZ):
    rows = ["power_w,rabi_hz,rabi_sigma_hz,gamma_perp_hz,gamma_perp_sigma_hz"]
    for i, rabi in enumerate([100e6, 200e6, 300e6, 400e6], start=1):
        rows.append(f"{i * 1e-6},{rabi},{5e6},{offset_hz + slope * rabi},{2e6}")
    path.write_text("\n".join(rows) + "\n")
    return path


# ============================================================
# SCALAR COMMANDS
# ============================================================

def test_diffusion_rate(tmp_path):
    assert run(tmp_path, "diffusion-rate", "--ul", "890e6", "--ftl", "109e6", "--single", "112e6") == EXIT_OK
    data = envelope(tmp_path, "diffusion-rate")
    assert data["result"]["diffusion_rate_hz"] == pytest.approx(8.39, abs=0.01)
    assert data["artifacts"] == ["diffusion-rate.json"]
    assert data["inputs"]["ul"] == 890e6


def test_output_is_byte_identical_across_runs(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    args = ("simulate-g2", "--omega-hz", "300e6", "--gamma-c-hz", "20e6", "--sigma-fwhm-hz", "100e6", "--points", "41")
    assert run(first, *args) == EXIT_OK
    assert run(second, *args) == EXIT_OK
    for name in ("simulate-g2.json", "simulate-g2.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_invalid_input_exits_with_one(tmp_path):
    assert run(tmp_path, "diffusion-rate", "--ul", "890e6", "--ftl", "0", "--single", "112e6") == EXIT_INVALID


def test_usage_error_returns_one(capsys):
    assert main(["diffusion-rate", "--ul", "1"]) == EXIT_INVALID
    assert "usage:" in capsys.readouterr().err


def test_unknown_command_returns_one():
    assert main(["no-such-command"]) == EXIT_INVALID


def test_help_returns_zero(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "diffusion-rate" in capsys.readouterr().out


def test_numerical_failure_exits_with_two(tmp_path):
    histogram = tmp_path / "empty.csv"
    histogram.write_text("tau_s,counts\n" + "\n".join(f"{i}e-9,0" for i in range(-5, 6)) + "\n")
    assert run(tmp_path / "out", "fit-g2", str(histogram)) == EXIT_NUMERICAL


# ============================================================
# SIMULATION COMMANDS
# ============================================================

def test_simulate_g2_writes_curve_and_svg(tmp_path):
    code = run(tmp_path, "simulate-g2", "--omega-hz", "300e6", "--gamma-c-hz", "20e6", "--points", "101", "--svg")
    assert code == EXIT_OK
    result = envelope(tmp_path, "simulate-g2")["result"]
    assert result["regime"] == "oscillatory"
    assert abs(result["g2_at_zero"]) < 1e-9
    assert result["contrast_reduction"] == 1.0
    assert (tmp_path / "simulate-g2.svg").exists()
    assert len((tmp_path / "simulate-g2.csv").read_text().splitlines()) == 102


def test_simulate_pulse_with_trajectories(tmp_path):
    code = run(tmp_path, "simulate-pulse", "--omega-hz", "200e6", "--period-s", "100e-9",
               "--bin-width-s", "1e-9", "--trajectories", "200", "--points", "21", "--seed", "4")
    assert code == EXIT_OK
    result = envelope(tmp_path, "simulate-pulse")["result"]
    assert result["pi_pulse_s"] == pytest.approx(math.pi / (2.0 * math.pi * 200e6))
    assert result["trajectories"]["seed"] == 4
    assert (tmp_path / "simulate-pulse-trajectories.csv").exists()


def test_stochastic_commands_need_a_seed(tmp_path):
    assert run(tmp_path, "simulate-stream", "--omega-hz", "200e6", "--duration-s", "1e-6") == EXIT_INVALID


def test_simulate_stream_then_correlate(tmp_path):
    assert run(tmp_path, "simulate-stream", "--omega-hz", "200e6", "--duration-s", "1e-5", "--seed", "7") == EXIT_OK
    stream = envelope(tmp_path, "simulate-stream")["result"]["stream"]
    assert stream["photons"] > 100

    tags = tmp_path / "simulate-stream.tags"
    assert run(tmp_path, "correlate", str(tags), "--total-duration-s", "1e-5") == EXIT_OK
    result = envelope(tmp_path, "correlate")["result"]
    assert result["g2_at_zero"] < 0.3
    assert (tmp_path / "correlate-histogram.csv").exists()


# ============================================================
# FITTING COMMANDS
# ============================================================

def test_fit_g2_recovers_simulated_parameters(tmp_path):
    params = EmitterParams.from_hz(GAMMA_HZ, 20e6, 300e6)
    tau = np.arange(-125, 126) * 160e-12
    counts = 1000.0 * g2_resonant(params, tau)
    histogram = write_correlation_csv(
        CorrelationCurve(tau_bins=tau, counts=counts, bin_width=160e-12, normalization=1e-3), tmp_path / "g2.csv"
    )
    code = run(tmp_path / "out", "fit-g2", str(histogram), "--guess-omega-hz", "280e6", "--guess-gamma-c-hz", "25e6")
    assert code == EXIT_OK
    result = envelope(tmp_path / "out", "fit-g2")["result"]
    assert result["omega_hz"] == pytest.approx(300e6, rel=1e-3)
    assert result["gamma_perp_hz"] == pytest.approx(0.5 * GAMMA_HZ + 20e6, rel=1e-3)


def test_fit_linewidth_logistic_crossing(tmp_path):
    truth = LogisticLinewidthModel(A=50e6, D=500e6, B=5.0, C=math.log(40.0), E=1.0)
    T = np.linspace(5.0, 300.0, 60)
    y = logistic_curve(T, truth.A, truth.D, truth.B, truth.C, truth.E)
    data = tmp_path / "single.csv"
    data.write_text("temperature_k,linewidth_hz\n" + "\n".join(f"{t!r},{w!r}" for t, w in zip(T, y)) + "\n")

    code = run(tmp_path / "out", "fit-linewidth", str(data), "--model", "logistic", "--crossing-hz", "109e6")
    assert code == EXIT_OK
    result = envelope(tmp_path / "out", "fit-linewidth")["result"]
    expected = ftl_crossing_temperature(truth, 109e6)
    assert result["crossing_temperature_k"] == pytest.approx(expected, rel=1e-3)


def test_fit_linewidth_ple_needs_a_shape(tmp_path):
    scans = tmp_path / "ple.csv"
    scans.write_text("scan_id,freq_hz,counts\n1,0,5\n1,1e6,50\n1,2e6,5\n")
    assert run(tmp_path, "fit-linewidth", str(scans), "--ple") == EXIT_INVALID


def test_fit_saturation(tmp_path):
    P = [0.5e-6, 1e-6, 2e-6, 4e-6, 8e-6, 16e-6, 32e-6]
    data = tmp_path / "saturation.csv"
    data.write_text("power_w,counts_per_s\n" + "\n".join(f"{p},{2e6 * p / (p + 3e-6)}" for p in P) + "\n")
    assert run(tmp_path, "fit-saturation", str(data)) == EXIT_OK
    result = envelope(tmp_path, "fit-saturation")["result"]
    assert result["P_sat_w"] == pytest.approx(3e-6, rel=1e-4)
    assert result["saturation_intensity"] == pytest.approx(1e6, rel=1e-4)


def test_gap_closing_writes_both_bands(tmp_path):
    rng = np.random.default_rng(5)
    T = np.arange(5.0, 301.0, 15.0)
    k_B = 1.380649e-23
    down = boltzmann_curve(T, 2.42e12, -6e12, 300.0 * k_B) + rng.normal(0.0, 2e10, T.size)
    up = boltzmann_curve(T, 1e11, 3e12, 250.0 * k_B) + rng.normal(0.0, 2e10, T.size)
    for name, values in (("gap.csv", down), ("halfwidth.csv", up)):
        (tmp_path / name).write_text("T,hz\n" + "\n".join(f"{t},{v!r}" for t, v in zip(T, values)) + "\n")

    code = run(tmp_path / "out", "gap-closing", "--down", str(tmp_path / "gap.csv"), "--up", str(tmp_path / "halfwidth.csv"))
    assert code == EXIT_OK
    result = envelope(tmp_path / "out", "gap-closing")["result"]
    assert "range" in result
    assert (tmp_path / "out" / "gap-closing-down.csv").exists()
    assert (tmp_path / "out" / "gap-closing-up.csv").exists()


# ============================================================
# CLASSIFICATION AND REPORT
# ============================================================

def test_classify_reference_slopes(tmp_path):
    files = [power_series_csv(tmp_path / f"p{T}K.csv", m) for T, m in ((5, 0.0), (20, 0.55), (30, 2.3))]
    code = run(tmp_path / "out", "classify", *map(str, files), "--temperature", "5", "20", "30")
    assert code == EXIT_OK
    result = envelope(tmp_path / "out", "classify")["result"]
    assert [r["regime"] for r in result["reports"]] == [
        "fully_coherent_pi_capable", "coherent_pi2_only", "overdamped",
    ]
    assert all(r["offset_consistent_with_gamma_over_2"] for r in result["reports"])
    assert result["bracket"]["warmest_coherent_k"] == 20.0
    assert result["bracket"]["coldest_incoherent_k"] == 30.0
    assert (tmp_path / "out" / "classify-20K.csv").exists()


def test_classify_needs_matching_temperatures(tmp_path):
    series = power_series_csv(tmp_path / "p.csv", 0.2)
    assert run(tmp_path, "classify", str(series), "--temperature", "5", "20") == EXIT_INVALID


def test_report_collects_envelopes(tmp_path):
    assert run(tmp_path, "diffusion-rate", "--ul", "890e6", "--ftl", "109e6", "--single", "112e6") == EXIT_OK
    series = power_series_csv(tmp_path / "p.csv", 0.55)
    assert run(tmp_path, "classify", str(series), "--temperature", "20") == EXIT_OK

    code = run(tmp_path / "report", "report", str(tmp_path / "classify.json"), str(tmp_path / "diffusion-rate.json"))
    assert code == EXIT_OK
    assert (tmp_path / "report" / "report.pdf").read_bytes().startswith(b"%PDF")
    markdown = (tmp_path / "report" / "report.md").read_text()
    assert markdown.index("classify") < markdown.index("diffusion-rate")
    assert envelope(tmp_path / "report", "report")["result"]["commands"] == ["classify", "diffusion-rate"]


def test_report_rejects_foreign_json(tmp_path):
    foreign = tmp_path / "other.json"
    foreign.write_text('{"hello": 1}')
    assert run(tmp_path / "out", "report", str(foreign)) == EXIT_INVALID
