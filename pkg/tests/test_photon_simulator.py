"""
Tests for photon_simulator.py
-----------------------------
Seeded photon streams, coincidence histograms, the quasi-static Monte Carlo
average and quantum-jump trajectories.
"""

import numpy as np
import pytest
from scipy.integrate import trapezoid

from bloch_dynamics import emission_rate, evolve_pulse, g2_resonant
from emitter_types import DetuningDistribution, EmitterParams, InvalidParameterError, plateau_mask
from photon_simulator import (
    DiffusionKind,
    DiffusionProcess,
    PhotonStream,
    binned_model,
    correlate,
    poisson_chi_square,
    quasi_static_average,
    simulate_stream,
    simulate_trajectories,
    waiting_time_table,
)
from spectral_diffusion import g2_diffused

PARAMS = EmitterParams(gamma=1.0, gamma_c=0.25, omega=2.0)
DURATION = 2e4


@pytest.fixture(scope="module")
def resonant_stream():
    return simulate_stream(PARAMS, DiffusionProcess(seed=11), DURATION)


# ============================================================
# WAITING TIMES
# ============================================================

def test_waiting_time_cdf_is_monotone_from_zero():
    table = waiting_time_table(PARAMS.gamma, PARAMS.gamma_perp, PARAMS.omega, 0.0)
    assert table.cdf[0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diff(table.cdf) >= 0)
    assert 0.0 <= table.tail_survival < 1e-6


def test_mean_waiting_time_matches_steady_state_rate():
    table = waiting_time_table(PARAMS.gamma, PARAMS.gamma_perp, PARAMS.omega, 0.3)
    mean_wait = trapezoid(1.0 - table.cdf, table.times) + table.tail_survival / table.tail_rate
    expected = 1.0 / (PARAMS.gamma * emission_rate(PARAMS.with_detuning(0.3)))
    assert mean_wait == pytest.approx(expected, rel=1e-3)


def test_waiting_time_samples_are_non_negative():
    table = waiting_time_table(PARAMS.gamma, PARAMS.gamma_perp, PARAMS.omega, 0.0)
    waits = table.sample(np.random.default_rng(3), 50_000)
    assert np.all(waits >= 0)
    assert waits.mean() == pytest.approx(1.0 / emission_rate(PARAMS), rel=0.03)


def test_waiting_time_needs_drive():
    with pytest.raises(InvalidParameterError):
        waiting_time_table(1.0, 0.75, 0.0, 0.0)


# ============================================================
# STREAMS
# ============================================================

def test_stream_is_deterministic_for_a_seed():
    first = simulate_stream(PARAMS, DiffusionProcess(seed=5), 2e3)
    second = simulate_stream(PARAMS, DiffusionProcess(seed=5), 2e3)
    other = simulate_stream(PARAMS, DiffusionProcess(seed=6), 2e3)
    np.testing.assert_array_equal(first.arrival_times, second.arrival_times)
    assert len(first) != len(other) or not np.array_equal(first.arrival_times, other.arrival_times)


def test_stream_rate_matches_emission_rate(resonant_stream):
    expected = PARAMS.gamma * emission_rate(PARAMS)
    assert abs(resonant_stream.mean_rate - expected) < 5 * resonant_stream.rate_stderr
    assert np.all(np.diff(resonant_stream.arrival_times) > 0)
    assert resonant_stream.arrival_times[-1] <= DURATION


def test_detection_efficiency_thins_the_stream():
    stream = simulate_stream(PARAMS, DiffusionProcess(seed=11), DURATION, detection_efficiency=0.5)
    expected = 0.5 * PARAMS.gamma * emission_rate(PARAMS)
    assert abs(stream.mean_rate - expected) < 5 * stream.rate_stderr


def test_background_only_stream():
    stream = simulate_stream(PARAMS.with_omega(0.0), DiffusionProcess(seed=2), 1e3, background_rate=2.0)
    assert abs(len(stream) - 2000) < 5 * np.sqrt(2000)


def test_jump_process_stream_rate():
    proc = DiffusionProcess(kind=DiffusionKind.JUMP_PROCESS, sigma=1.0, jump_rate=0.05, seed=9)
    stream = simulate_stream(PARAMS, proc, DURATION)
    deltas = np.random.default_rng(0).standard_normal(20_000)
    expected = PARAMS.gamma * np.mean([emission_rate(PARAMS.with_detuning(d)) for d in deltas])
    # epochs are long but finite, so allow for detuning sampling noise
    assert stream.mean_rate == pytest.approx(expected, rel=0.1)


def test_stream_to_dict():
    stream = simulate_stream(PARAMS, DiffusionProcess(seed=4), 100.0)
    data = stream.to_dict()
    assert data["photons"] == len(stream)
    assert data["seed"] == 4


@pytest.mark.parametrize("kwargs", [
    {"seed": -1},
    {"seed": 2 ** 64},
    {"sigma": -1.0},
    {"jump_rate": float("inf")},
    {"epoch_duration": 0.0},
    {"kind": "brownian"},
])
def test_diffusion_process_validation(kwargs):
    with pytest.raises((InvalidParameterError, ValueError)):
        DiffusionProcess(**kwargs)


@pytest.mark.parametrize("kwargs", [
    {"duration": 0.0},
    {"duration": 10.0, "detection_efficiency": 0.0},
    {"duration": 10.0, "background_rate": -1.0},
])
def test_simulate_stream_validation(kwargs):
    with pytest.raises(InvalidParameterError):
        simulate_stream(PARAMS, DiffusionProcess(), **kwargs)


def test_photon_stream_rejects_unsorted_times():
    with pytest.raises(InvalidParameterError):
        PhotonStream(arrival_times=np.array([2.0, 1.0]), total_duration=3.0)


# ============================================================
# CORRELATION
# ============================================================

def test_correlate_counts_all_pairs():
    stream = PhotonStream(arrival_times=np.array([0.0, 1.0, 2.5]), total_duration=3.0)
    curve = correlate(stream, bin_width=1.0, max_tau=3.0)
    np.testing.assert_array_equal(curve.tau_bins, np.arange(-3.0, 4.0))
    np.testing.assert_array_equal(curve.counts, [1, 1, 1, 0, 1, 1, 1])
    assert curve.normalization == pytest.approx(1.0)


def test_correlate_validation(resonant_stream):
    with pytest.raises(InvalidParameterError):
        correlate(resonant_stream, bin_width=0.0, max_tau=1.0)
    with pytest.raises(InvalidParameterError):
        correlate(resonant_stream, bin_width=1.0, max_tau=0.5)
    with pytest.raises(InvalidParameterError):
        correlate(PhotonStream(arrival_times=np.array([1.0]), total_duration=2.0), 0.1, 1.0)


def test_simulated_histogram_shows_antibunching(resonant_stream):
    curve = correlate(resonant_stream, bin_width=0.05, max_tau=10.0)
    center = curve.counts.size // 2
    np.testing.assert_array_equal(curve.counts, curve.counts[::-1])
    assert curve.g2[center] < 0.1
    assert np.mean(curve.g2[plateau_mask(curve.tau_bins)]) == pytest.approx(1.0)


def test_simulated_histogram_fits_the_closed_form(resonant_stream):
    curve = correlate(resonant_stream, bin_width=0.05, max_tau=10.0)
    model = binned_model(lambda tau: g2_resonant(PARAMS, tau), curve)
    goodness = poisson_chi_square(curve, model)
    assert goodness.dof == curve.counts.size - 1
    assert 0.5 < goodness.reduced < 2.0


def test_poisson_chi_square_shape_mismatch():
    stream = PhotonStream(arrival_times=np.array([0.0, 1.0, 2.5]), total_duration=3.0)
    curve = correlate(stream, bin_width=1.0, max_tau=3.0)
    with pytest.raises(InvalidParameterError):
        poisson_chi_square(curve, np.ones(3))


# ============================================================
# QUASI-STATIC AVERAGE
# ============================================================

def test_quasi_static_average_agrees_with_quadrature():
    dist = DetuningDistribution(sigma=1.5)
    tau = np.linspace(0.0, 12.0, 25)
    estimate = quasi_static_average(PARAMS, dist, tau, n_samples=20_000, seed=21)
    reference = g2_diffused(PARAMS, dist, tau)
    assert np.all(np.abs(estimate.g2 - reference) <= 4 * estimate.stderr + 1e-9)
    assert estimate.n_samples == 20_000


def test_quasi_static_average_is_deterministic():
    dist = DetuningDistribution(sigma=1.0)
    first = quasi_static_average(PARAMS, dist, [0.5, 1.0], 500, seed=3)
    second = quasi_static_average(PARAMS, dist, [0.5, 1.0], 500, seed=3)
    np.testing.assert_array_equal(first.g2, second.g2)


def test_quasi_static_without_diffusion_is_exact():
    estimate = quasi_static_average(PARAMS, DetuningDistribution(sigma=0.0), [0.0, 1.0], 100, seed=0)
    np.testing.assert_allclose(estimate.g2, g2_resonant(PARAMS, np.array([0.0, 1.0])))
    np.testing.assert_array_equal(estimate.stderr, 0.0)


def test_quasi_static_validation():
    with pytest.raises(InvalidParameterError):
        quasi_static_average(PARAMS, DetuningDistribution(sigma=1.0), [0.0], 99, seed=0)
    with pytest.raises(InvalidParameterError):
        quasi_static_average(PARAMS.with_omega(0.0), DetuningDistribution(sigma=1.0), [0.0], 100, seed=0)


# ============================================================
# QUANTUM-JUMP TRAJECTORIES
# ============================================================

def test_trajectories_match_bloch_equations():
    t_grid = np.linspace(0.0, 5.0, 11)
    ensemble = simulate_trajectories(PARAMS, None, t_grid, 4000, seed=1)
    reference = evolve_pulse(PARAMS, None, t_grid).rho_ee
    assert ensemble.rho_ee[0] == 0.0
    # jumps are resolved on the substep grid, hence the small absolute allowance
    assert np.all(np.abs(ensemble.rho_ee - reference) <= 4 * ensemble.stderr + 0.02)


def test_trajectories_do_not_depend_on_workers():
    t_grid = np.linspace(0.0, 3.0, 7)
    serial = simulate_trajectories(PARAMS, None, t_grid, 1200, seed=8, chunk_size=500)
    threaded = simulate_trajectories(PARAMS, None, t_grid, 1200, seed=8, chunk_size=500, workers=3)
    np.testing.assert_array_equal(serial.rho_ee, threaded.rho_ee)
    np.testing.assert_array_equal(serial.stderr, threaded.stderr)


@pytest.mark.parametrize("kwargs", [
    {"t_grid": [0.5, 1.0]},
    {"t_grid": [0.0, 1.0, 1.0]},
    {"n_trajectories": 1},
    {"workers": 0},
    {"seed": -3},
])
def test_trajectory_validation(kwargs):
    arguments = {"t_grid": [0.0, 1.0], "n_trajectories": 10, "seed": 0}
    arguments.update(kwargs)
    workers = arguments.pop("workers", 1)
    with pytest.raises(InvalidParameterError):
        simulate_trajectories(PARAMS, None, arguments["t_grid"], arguments["n_trajectories"],
                              arguments["seed"], workers=workers)
