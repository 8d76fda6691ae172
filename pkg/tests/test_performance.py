"""
Acceptance checks at full statistics
------------------------------------
Large streams, seeded recovery sweeps and dense grids. These take minutes;
deselect them with ``-m "not slow"``.
"""

import numpy as np
import pytest

from bloch_dynamics import emission_rate, evolve_pulse, g2_resonant
from emitter_types import CorrelationCurve, DetuningDistribution, EmitterParams, plateau_mask
from fit_engine import fit_g2
from photon_simulator import (
    DiffusionProcess,
    binned_model,
    correlate,
    poisson_chi_square,
    quasi_static_average,
    simulate_stream,
)
from spectral_diffusion import g2_diffused

pytestmark = pytest.mark.slow

PARAMS = EmitterParams(gamma=1.0, gamma_c=0.25, omega=2.0)
BIN_WIDTH = 0.02
MAX_TAU = 10.0


# ============================================================
# STREAM ORACLES
# ============================================================

def test_million_photon_stream_matches_closed_form():
    """A resonant stream reproduces the closed-form g² bin by bin."""
    stream = simulate_stream(PARAMS, DiffusionProcess(seed=2024), 2.5e6)
    assert len(stream) >= 1_000_000

    curve = correlate(stream, BIN_WIDTH, MAX_TAU)
    goodness = poisson_chi_square(curve, binned_model(lambda tau: g2_resonant(PARAMS, tau), curve))
    assert 0.7 <= goodness.reduced <= 1.3


def test_frozen_gaussian_streams_match_diffused_average():
    """Coincidences pooled over frozen Gaussian detunings follow the quadrature average."""
    dist = DetuningDistribution(sigma=0.5)
    duration = 2_000.0
    counts = None
    for seed in range(2_000):
        stream = simulate_stream(PARAMS, DiffusionProcess(sigma=dist.sigma, seed=seed), duration)
        histogram = correlate(stream, BIN_WIDTH, MAX_TAU)
        counts = histogram.counts if counts is None else counts + histogram.counts
    curve = CorrelationCurve.from_counts(histogram.tau_bins, counts, BIN_WIDTH)

    # pairs at lag τ come from a window of length duration - |τ|
    window = 1.0 - np.abs(curve.tau_bins) / duration
    shape = binned_model(lambda tau: g2_diffused(PARAMS, dist, tau, kernel="bloch"), curve) * window
    model = shape / np.mean(shape[plateau_mask(curve.tau_bins)])

    goodness = poisson_chi_square(curve, model)
    assert 0.7 <= goodness.reduced <= 1.3


# ============================================================
# QUADRATURE AGAINST MONTE CARLO
# ============================================================

@pytest.mark.parametrize("omega, gamma_c, sigma", [
    (2.0, 0.25, 0.5),
    (4.0, 0.25, 1.0),
    (2.0, 1.0, 1.0),
    (0.5, 2.5, 0.5),
    (1.0, 3.0, 1.0),
])
def test_quadrature_agrees_with_monte_carlo(omega, gamma_c, sigma):
    params = EmitterParams(gamma=1.0, gamma_c=gamma_c, omega=omega)
    dist = DetuningDistribution(sigma=sigma)
    tau = np.linspace(0.0, 12.0, 50)

    estimate = quasi_static_average(params, dist, tau, n_samples=100_000, seed=31)
    quadrature = g2_diffused(params, dist, tau)
    positive = tau > 0
    deviation = np.abs(quadrature - estimate.g2)[positive]
    assert np.all(deviation <= 3.0 * estimate.stderr[positive] + 1e-9)


def test_quadrature_agrees_with_monte_carlo_for_a_measured_emitter():
    """109 MHz line, 300 MHz drive, 1.01 GHz spread: a line far narrower than the spread."""
    params = EmitterParams.from_hz(109e6, 0.0, 300e6)
    dist = DetuningDistribution(sigma=2.0 * np.pi * 1.01e9)
    tau = np.linspace(0.0, 10e-9, 51)

    estimate = quasi_static_average(params, dist, tau, n_samples=100_000, seed=7)
    quadrature = g2_diffused(params, dist, tau)
    positive = tau > 0
    deviation = np.abs(quadrature - estimate.g2)[positive]
    assert np.all(deviation <= 3.0 * estimate.stderr[positive] + 1e-9)


# ============================================================
# FIT RECOVERY
# ============================================================

def test_fit_recovers_parameters_across_seeds():
    """Poisson-noised diffusion-averaged curves give (Ω, Γ⊥) within 2σ in at least 90 of 100 trials."""
    truth = EmitterParams(gamma=1.0, gamma_c=0.3, omega=2.0)
    dist = DetuningDistribution(sigma=0.5)
    tau = np.arange(-250, 251) * 0.05
    expected = 10_000.0 * g2_diffused(truth, dist, tau)

    omega_hits = gamma_perp_hits = 0
    for seed in range(100):
        counts = np.random.default_rng(seed).poisson(expected)
        curve = CorrelationCurve.from_counts(tau, counts, 0.05)
        result = fit_g2(curve, {"gamma": 1.0, "sigma": dist.sigma}, {"omega": 2.1, "gamma_c": 0.35})
        omega_hits += abs(result.omega - truth.omega) <= 2.0 * result.omega_sigma
        gamma_perp_hits += abs(result.gamma_perp - truth.gamma_perp) <= 2.0 * result.gamma_perp_sigma

    assert omega_hits >= 90
    assert gamma_perp_hits >= 90


# ============================================================
# STEADY STATE
# ============================================================

def test_steady_state_over_parameter_grid():
    """Integrated populations settle on the closed-form emission rate everywhere on the grid."""
    for omega in (0.3, 0.8, 1.5, 3.0, 6.0):
        for delta in (-3.0, -0.5, 0.0, 1.0, 4.0):
            for gamma_c in (0.0, 0.2, 1.0, 3.0):
                params = EmitterParams(gamma=1.0, gamma_c=gamma_c, omega=omega, delta=delta)
                trajectory = evolve_pulse(params, None, [0.0, 100.0])
                assert trajectory.rho_ee[-1] == pytest.approx(emission_rate(params), abs=1e-6)
