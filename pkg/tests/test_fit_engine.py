"""
Tests for fit_engine.py
-----------------------
Least-squares fits over the model registry, correlation-curve fits and
PLE line-scan analysis.
"""

import math

import numpy as np
import pytest

from bloch_dynamics import DampingRegime
from emitter_types import (
    PHYSICAL_CONSTANTS,
    CorrelationCurve,
    DetuningDistribution,
    EmitterParams,
    InvalidParameterError,
    PleScan,
    RankDeficiencyError,
)
from fit_engine import (
    MODEL_REGISTRY,
    FitProblem,
    ModelSpec,
    fit,
    fit_g2,
    fit_line,
    fit_model,
    get_model,
    histogram_line_fit,
    select_line_shape,
    voigt_fwhm,
)
from linewidth_models import boltzmann_curve, cubic_curve, saturation_curve
from spectral_diffusion import g2_diffused

FREQUENCIES = np.linspace(-1e9, 1e9, 401)


def lorentzian_counts(center, fwhm=112e6, amplitude=500.0, offset=10.0):
    half = 0.5 * fwhm
    return offset + amplitude * half ** 2 / ((FREQUENCIES - center) ** 2 + half ** 2)


def synthetic_curve(params, dist=None, scale=1000.0):
    tau = np.round(np.arange(-150, 151) * 0.1, 10)
    g2 = g2_diffused(params, dist or DetuningDistribution(sigma=0.0), tau)
    return CorrelationCurve(tau_bins=tau, counts=scale * np.asarray(g2), bin_width=0.1, normalization=1.0 / scale)


# ============================================================
# REGISTRY AND CORE FIT
# ============================================================

def test_registry_lists_builtin_models():
    for name in ("line", "lorentzian", "gaussian", "boltzmann", "cubic", "logistic", "saturation", "g2"):
        assert name in MODEL_REGISTRY


def test_unknown_model_name():
    with pytest.raises(InvalidParameterError, match="Unsupported model"):
        get_model("sinc")


def test_lorentzian_recovers_width():
    result = fit_model("lorentzian", FREQUENCIES, lorentzian_counts(5e6))
    assert result.value("fwhm") == pytest.approx(112e6, rel=1e-6)
    assert result.value("center") == pytest.approx(5e6, rel=1e-5)
    assert result.converged


def test_gaussian_recovers_width():
    sigma = 200e6 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    y = 3.0 + 400.0 * np.exp(-0.5 * (FREQUENCIES / sigma) ** 2)
    result = fit_model("gaussian", FREQUENCIES, y)
    assert result.value("fwhm") == pytest.approx(200e6, rel=1e-6)


def test_boltzmann_recovers_gap_parameters():
    T = np.arange(5.0, 301.0, 5.0)
    truth = {"A": 2.42e12, "B": -5e12, "C": 150.0 * PHYSICAL_CONSTANTS.k_B}
    result = fit_model("boltzmann", T, boltzmann_curve(T, **truth))
    for name, value in truth.items():
        assert result.value(name) == pytest.approx(value, rel=1e-4)


def test_cubic_and_saturation_recovery():
    T = np.linspace(4.0, 60.0, 15)
    cubic = fit_model("cubic", T, cubic_curve(T, 100e6, 2e3))
    assert cubic.value("B") == pytest.approx(2e3, rel=1e-5)

    P = np.array([0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    saturation = fit_model("saturation", P, saturation_curve(P, 2e6, 3.0))
    assert saturation.value("P_sat") == pytest.approx(3.0, rel=1e-5)
    assert saturation.value("I_inf") == pytest.approx(2e6, rel=1e-5)


def test_fixed_parameters_are_reported_but_not_fitted():
    x = np.linspace(0.0, 1.0, 5)
    result = fit_model("line", x, 2.0 * x + 1.0, fixed={"intercept": 1.0})
    assert result.param_names == ("slope",)
    assert result.params == {"intercept": 1.0, "slope": pytest.approx(2.0)}
    assert result.error("intercept") == 0.0


def test_rank_deficiency_names_the_combination():
    product = ModelSpec("product", lambda x, a, b: a * b * x, ("a", "b"))
    x = np.linspace(1.0, 2.0, 6)
    problem = FitProblem(model=product, x=x, y=3.0 * x, initial_guess={"a": 1.0, "b": 2.0})
    with pytest.raises(RankDeficiencyError) as excinfo:
        fit(problem)
    assert "a" in excinfo.value.combination and "b" in excinfo.value.combination


@pytest.mark.parametrize("kwargs", [
    {"fixed_params": {"width": 1.0}},
    {"y_sigma": np.zeros(3)},
    {"x": np.array([0.0, 1.0])},
    {"max_iter": 0},
])
def test_fit_problem_validation(kwargs):
    arguments = {"model": "line", "x": np.array([0.0, 1.0, 2.0]), "y": np.array([1.0, 2.0, 3.0])}
    arguments.update(kwargs)
    with pytest.raises(InvalidParameterError):
        FitProblem(**arguments)


def test_fit_needs_positive_dof():
    with pytest.raises(InvalidParameterError, match="dof"):
        fit_model("lorentzian", [0.0, 1.0, 2.0], [1.0, 3.0, 1.0])


# ============================================================
# STRAIGHT LINE
# ============================================================

def test_line_fit_exact_with_absolute_sigma():
    result = fit_line([0.0, 1.0, 2.0], [1.0, 3.0, 5.0], y_sigma=1.0)
    assert result.value("slope") == pytest.approx(2.0)
    assert result.value("intercept") == pytest.approx(1.0)
    assert result.error("slope") == pytest.approx(math.sqrt(0.5))
    y, lo, hi = result.band([1.0])
    assert hi[0] - y[0] == pytest.approx(2.0 * math.sqrt(1.0 / 3.0), rel=1e-6)


def test_line_fit_two_points_with_sigma():
    result = fit_line([0.0, 1.0], [0.0, 1.0], y_sigma=[0.1, 0.1])
    assert result.dof == 0
    assert math.isnan(result.reduced_chi_square)


def test_line_fit_validation():
    with pytest.raises(InvalidParameterError):
        fit_line([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(InvalidParameterError, match="degenerate"):
        fit_line([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])


# ============================================================
# CORRELATION CURVES
# ============================================================

def test_fit_g2_recovers_drive_and_dephasing():
    truth = EmitterParams(gamma=1.0, gamma_c=0.25, omega=2.0)
    result = fit_g2(synthetic_curve(truth), {"gamma": 1.0}, {"omega": 1.8, "gamma_c": 0.3})
    assert result.omega == pytest.approx(2.0, rel=1e-4)
    assert result.gamma_perp == pytest.approx(0.75, rel=1e-4)
    assert result.regime is DampingRegime.OSCILLATORY
    assert not result.pinned_at_lifetime_limit
    assert result.to_dict()["omega_hz"] == pytest.approx(2.0 / (2.0 * math.pi), rel=1e-4)


def test_fit_g2_with_fixed_diffusion_width():
    truth = EmitterParams(gamma=1.0, gamma_c=0.25, omega=2.0)
    dist = DetuningDistribution(sigma=1.0)
    result = fit_g2(synthetic_curve(truth, dist), {"gamma": 1.0, "sigma": 1.0}, {"omega": 2.2, "gamma_c": 0.2})
    assert result.omega == pytest.approx(2.0, rel=1e-3)
    assert result.fit.fixed["sigma"] == 1.0


def test_fit_g2_needs_gamma():
    curve = synthetic_curve(EmitterParams(gamma=1.0, gamma_c=0.25, omega=2.0))
    with pytest.raises(InvalidParameterError, match="gamma"):
        fit_g2(curve, {})


# ============================================================
# PLE LINE SCANS
# ============================================================

def test_select_line_shape():
    assert select_line_shape(5.0) == "lorentzian"
    assert select_line_shape(50.0) == "lorentzian"
    assert select_line_shape(80.0) == "gaussian"


def test_voigt_width_limits():
    assert voigt_fwhm(100e6, 0.0) == pytest.approx(100e6)
    assert voigt_fwhm(0.0, 100e6) == pytest.approx(100e6, rel=1e-3)
    assert voigt_fwhm(100e6, 100e6) > 100e6


def test_histogram_line_fit():
    centers = [-200e6, -100e6, 0.0, 100e6, 200e6]
    scans = [PleScan(str(i), FREQUENCIES, lorentzian_counts(c)) for i, c in enumerate(centers)]
    scans.append(PleScan("dark", FREQUENCIES, np.full(FREQUENCIES.size, 10.0)))

    summary = histogram_line_fit(scans, shape="lorentzian")

    assert summary.dark_scan_ids == ["dark"]
    assert summary.failed_scan_ids == []
    assert len(summary.scan_fits) == 5
    assert summary.mean_fwhm_hz == pytest.approx(112e6, rel=1e-5)
    assert summary.center_spread_fwhm_hz == pytest.approx(math.sqrt(2.5) * 1e8 * 2.3548200450309493, rel=1e-4)
    assert summary.inhomogeneous_fwhm_hz > 112e6
    assert summary.to_dict()["dark_scans"] == ["dark"]


def test_histogram_line_fit_validation():
    dark = PleScan("0", FREQUENCIES, np.full(FREQUENCIES.size, 10.0))
    with pytest.raises(InvalidParameterError):
        histogram_line_fit([dark])
    with pytest.raises(InvalidParameterError):
        histogram_line_fit([], shape="lorentzian")
    with pytest.raises(InvalidParameterError, match="Unsupported line shape"):
        histogram_line_fit([dark], shape="voigt")
