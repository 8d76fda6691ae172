"""
fit_engine.py — Nonlinear least-squares fitting
------------------------------------------------
Bounded trust-region least squares over a registry of named models,
with rank checks, residual-scaled covariance and first-order confidence
bands. Specialized entry points cover correlation curves, straight lines
and PLE line scans.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import least_squares

from bloch_dynamics import DampingRegime, lambda_pair
from emitter_types import (
    FWHM_PER_SIGMA,
    PHYSICAL_CONSTANTS,
    ArrayLike,
    CorrelationCurve,
    DetuningDistribution,
    EmitterParams,
    FitResult,
    InvalidParameterError,
    NumericalError,
    PleScan,
    RankDeficiencyError,
    to_ordinary,
)
from linewidth_models import boltzmann_curve, cubic_curve, logistic_curve, saturation_curve
from spectral_diffusion import CorrelationKernel, QuadratureSpec, g2_diffused

logger = logging.getLogger("coherence.fit")

# ============================================================
# SOLVER SETTINGS
# ============================================================

DEFAULT_XTOL = 1e-8
DEFAULT_FTOL = 1e-10
DEFAULT_MAX_ITER = 500

# Normalized singular values below this fraction of the largest mark a rank deficiency
RANK_TOLERANCE = 1e-10

BAND_STEP = 1e-6

# PLE analysis: Lorentzian shape up to this temperature (K), Gaussian above
LORENTZIAN_MAX_TEMPERATURE = 50.0


# ============================================================
# MODEL REGISTRY
# ============================================================

ModelFunction = Callable[..., np.ndarray]
GuessFunction = Callable[[np.ndarray, np.ndarray], Dict[str, float]]
ScaleFunction = Callable[[str, np.ndarray, np.ndarray], Optional[float]]


@dataclass(frozen=True)
class ModelSpec:
    """A named parametric model y = function(x, **params)."""

    name: str
    function: ModelFunction
    param_names: Tuple[str, ...]
    lower: Mapping[str, float] = field(default_factory=dict)
    upper: Mapping[str, float] = field(default_factory=dict)
    guess: Optional[GuessFunction] = None
    typical_scale: Optional[ScaleFunction] = None

    def evaluate(self, x: ArrayLike, params: Mapping[str, float]) -> np.ndarray:
        return np.asarray(self.function(np.asarray(x, dtype=float), **params), dtype=float)

    def bounds(self, name: str) -> Tuple[float, float]:
        return self.lower.get(name, -np.inf), self.upper.get(name, np.inf)


MODEL_REGISTRY: Dict[str, ModelSpec] = {}


def register_model(spec: ModelSpec) -> ModelSpec:
    MODEL_REGISTRY[spec.name] = spec
    return spec


def get_model(name: str) -> ModelSpec:
    try:
        return MODEL_REGISTRY[name]
    except KeyError:
        raise InvalidParameterError(
            f"Unsupported model: {name}. Choose from: {', '.join(sorted(MODEL_REGISTRY))}"
        ) from None


def _line(x, slope, intercept):
    return slope * x + intercept


def _lorentzian(x, amplitude, center, fwhm, offset):
    half = 0.5 * fwhm
    return offset + amplitude * half * half / ((x - center) ** 2 + half * half)


def _gaussian(x, amplitude, center, fwhm, offset):
    sigma = fwhm / FWHM_PER_SIGMA
    return offset + amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


def _peak_guess(x: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    offset = float(np.median(y))
    peak = int(np.argmax(y))
    amplitude = float(y[peak]) - offset
    above = x[y >= offset + 0.5 * amplitude]
    step = float(np.median(np.diff(x))) if x.size > 1 else 1.0
    width = float(above.max() - above.min()) + step if above.size else step
    return {"amplitude": amplitude, "center": float(x[peak]), "fwhm": max(width, step), "offset": offset}


def _peak_scale(name: str, x: np.ndarray, y: np.ndarray) -> Optional[float]:
    if name in ("center", "fwhm"):
        return float(np.ptp(x)) or 1.0
    return float(np.max(np.abs(y))) or 1.0


def _line_guess(x: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    slope, intercept = np.polyfit(x, y, 1)
    return {"slope": float(slope), "intercept": float(intercept)}


def _line_scale(name: str, x: np.ndarray, y: np.ndarray) -> Optional[float]:
    y_scale = float(np.max(np.abs(y))) or 1.0
    if name == "slope":
        return y_scale / (float(np.max(np.abs(x))) or 1.0)
    return y_scale


def _boltzmann_guess(T: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    order = np.argsort(T)
    return {
        "A": float(y[order[0]]),
        "B": float(y[order[-1]] - y[order[0]]) * 2.0,
        "C": PHYSICAL_CONSTANTS.k_B * float(np.median(T)),
    }


def _cubic_guess(T: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    A = max(float(np.min(y)), 1e-12)
    return {"A": A, "B": max(float(np.ptp(y)) / float(np.max(T)) ** 3, 1e-30)}


def _logistic_guess(T: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    low, high = float(np.min(y)), float(np.max(y))
    midpoint = float(T[np.argmin(np.abs(y - 0.5 * (low + high)))])
    return {"A": low, "D": high + 1e-6 * abs(high), "B": 5.0, "C": math.log(midpoint), "E": 1.0}


def _saturation_guess(P: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    I_inf = 1.2 * float(np.max(y))
    half = P[np.argmin(np.abs(y - 0.5 * float(np.max(y))))]
    return {"I_inf": I_inf, "P_sat": float(half) if half > 0 else float(np.median(P[P > 0]))}


register_model(ModelSpec("line", _line, ("slope", "intercept"), guess=_line_guess, typical_scale=_line_scale))
register_model(ModelSpec(
    "lorentzian", _lorentzian, ("amplitude", "center", "fwhm", "offset"),
    lower={"fwhm": 0.0}, guess=_peak_guess, typical_scale=_peak_scale,
))
register_model(ModelSpec(
    "gaussian", _gaussian, ("amplitude", "center", "fwhm", "offset"),
    lower={"fwhm": 0.0}, guess=_peak_guess, typical_scale=_peak_scale,
))
register_model(ModelSpec("boltzmann", boltzmann_curve, ("A", "B", "C"), guess=_boltzmann_guess))
register_model(ModelSpec("cubic", cubic_curve, ("A", "B"), lower={"A": 0.0, "B": 0.0}, guess=_cubic_guess))
register_model(ModelSpec(
    "logistic", logistic_curve, ("A", "D", "B", "C", "E"),
    lower={"B": 0.0, "E": 0.0}, guess=_logistic_guess,
))
register_model(ModelSpec(
    "saturation", saturation_curve, ("I_inf", "P_sat"),
    lower={"I_inf": 0.0, "P_sat": 0.0}, guess=_saturation_guess,
))


def g2_model_spec(quad: Optional[QuadratureSpec] = None,
                  kernel: Union[CorrelationKernel, str] = CorrelationKernel.SUBSTITUTION) -> ModelSpec:
    """scale · g²(τ) with free omega/gamma_c; gamma, sigma and delta are fixed inputs."""

    def model(tau, omega, gamma_c, scale, gamma, sigma=0.0, delta=0.0):
        params = EmitterParams(gamma=gamma, gamma_c=gamma_c, omega=omega, delta=delta)
        dist = DetuningDistribution(sigma=sigma)
        return scale * np.asarray(g2_diffused(params, dist, tau, quad, kernel=kernel))

    return ModelSpec(
        "g2", model, ("omega", "gamma_c", "scale", "gamma", "sigma", "delta"),
        lower={"omega": 0.0, "gamma_c": 0.0, "scale": 0.0},
    )


register_model(g2_model_spec())


# ============================================================
# FIT PROBLEM
# ============================================================

@dataclass
class FitProblem:
    model: Union[ModelSpec, str]
    x: np.ndarray
    y: np.ndarray
    y_sigma: Optional[np.ndarray] = None
    initial_guess: Dict[str, float] = field(default_factory=dict)
    fixed_params: Dict[str, float] = field(default_factory=dict)
    sigma_level: float = 2.0
    absolute_sigma: bool = False
    param_scales: Dict[str, float] = field(default_factory=dict)
    xtol: float = DEFAULT_XTOL
    ftol: float = DEFAULT_FTOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if isinstance(self.model, str):
            self.model = get_model(self.model)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise InvalidParameterError("x and y must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise InvalidParameterError("x and y must be finite")
        if self.y_sigma is not None:
            self.y_sigma = np.broadcast_to(np.asarray(self.y_sigma, dtype=float), self.y.shape)
            if np.any(~(self.y_sigma > 0)):
                raise InvalidParameterError("y_sigma must be > 0 everywhere")
        unknown = set(self.fixed_params) - set(self.model.param_names)
        if unknown:
            raise InvalidParameterError(f"unknown fixed parameter(s): {', '.join(sorted(unknown))}")
        if not (self.xtol > 0 and self.ftol > 0 and self.max_iter >= 1):
            raise InvalidParameterError("solver tolerances must be > 0 and max_iter >= 1")

    @property
    def free_names(self) -> Tuple[str, ...]:
        return tuple(n for n in self.model.param_names if n not in self.fixed_params)

    @property
    def dof(self) -> int:
        return self.x.size - len(self.free_names)


# ============================================================
# CORE FIT
# ============================================================

def _start_values(problem: FitProblem) -> Dict[str, float]:
    guess: Dict[str, float] = {}
    missing = [n for n in problem.free_names if n not in problem.initial_guess]
    if missing:
        if problem.model.guess is None:
            raise InvalidParameterError(f"initial guess required for: {', '.join(missing)}")
        guess.update(problem.model.guess(problem.x, problem.y))
    guess.update(problem.initial_guess)
    return {n: float(guess[n]) for n in problem.free_names}


def _scales(problem: FitProblem, start: Dict[str, float]) -> np.ndarray:
    scales = []
    for name in problem.free_names:
        scale = problem.param_scales.get(name)
        if scale is None and start[name] != 0:
            scale = abs(start[name])
        if scale is None and problem.model.typical_scale is not None:
            scale = problem.model.typical_scale(name, problem.x, problem.y)
        scales.append(float(scale) if scale else 1.0)
    return np.array(scales)


def _combination_text(names: Sequence[str], vector: np.ndarray) -> str:
    vector = vector / np.max(np.abs(vector))
    terms = [f"{coef:+.3g}*{name}" for name, coef in zip(names, vector) if abs(coef) >= 1e-3]
    return " ".join(terms).lstrip("+")


def _check_rank(names: Sequence[str], jacobian: np.ndarray) -> np.ndarray:
    """Column norms of the Jacobian; raises when some combination is unidentifiable."""
    norms = np.linalg.norm(jacobian, axis=0)
    for name, norm in zip(names, norms):
        if not norm > 0:
            raise RankDeficiencyError(f"parameter '{name}' does not affect the model", name)
    _, singular, vt = np.linalg.svd(jacobian / norms, full_matrices=False)
    if singular[-1] <= RANK_TOLERANCE * singular[0]:
        combination = _combination_text(names, vt[-1] / norms)
        raise RankDeficiencyError(
            f"normal matrix is singular; unidentifiable combination: {combination}", combination
        )
    return norms


def make_band_function(model: ModelSpec, names: Sequence[str], values: np.ndarray,
                       covariance: np.ndarray, fixed: Mapping[str, float],
                       steps: np.ndarray) -> Callable[[np.ndarray, float], Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """First-order propagation of the parameter covariance to the model curve."""
    names = tuple(names)
    values = np.array(values, dtype=float)
    covariance = np.array(covariance, dtype=float)
    fixed = dict(fixed)

    def at(p: np.ndarray, x: np.ndarray) -> np.ndarray:
        params = dict(fixed)
        params.update(zip(names, p))
        return model.evaluate(x, params)

    def band(x: np.ndarray, level: float):
        x = np.asarray(x, dtype=float)
        y = at(values, x)
        gradient = np.empty((x.size, values.size))
        for i, step in enumerate(steps):
            shift = np.zeros_like(values)
            shift[i] = step
            gradient[:, i] = (at(values + shift, x) - at(values - shift, x)) / (2.0 * step)
        variance = np.einsum("ij,jk,ik->i", gradient, covariance, gradient)
        spread = level * np.sqrt(np.clip(variance, 0.0, None))
        return y, y - spread, y + spread

    return band


def fit(problem: FitProblem) -> FitResult:
    """
    Bounded least-squares fit of ``problem``.

    Returns the best estimate with ``converged=False`` when the iteration
    budget runs out.

    Raises:
        InvalidParameterError: ill-posed problem (dof < 1, guess outside bounds)
        RankDeficiencyError: some parameter combination is not identifiable
    """
    model = problem.model
    names = problem.free_names
    if problem.dof < 1:
        raise InvalidParameterError(f"fit needs more points than free parameters (dof={problem.dof})")

    start = _start_values(problem)
    lower = np.array([model.bounds(n)[0] for n in names])
    upper = np.array([model.bounds(n)[1] for n in names])
    p0 = np.array([start[n] for n in names])
    if np.any(p0 < lower) or np.any(p0 > upper):
        raise InvalidParameterError(f"initial guess outside bounds for model '{model.name}'")
    # a guess sitting on a bound is nudged inside for the interior-point solver
    p0 = np.clip(p0, np.where(np.isfinite(lower), lower + 1e-9 * np.maximum(np.abs(lower), 1.0), lower),
                 np.where(np.isfinite(upper), upper - 1e-9 * np.maximum(np.abs(upper), 1.0), upper))

    scales = _scales(problem, start)
    weights = 1.0 if problem.y_sigma is None else 1.0 / problem.y_sigma

    def residuals(z: np.ndarray) -> np.ndarray:
        params = dict(problem.fixed_params)
        params.update(zip(names, z * scales))
        return (model.evaluate(problem.x, params) - problem.y) * weights

    solution = least_squares(
        residuals, p0 / scales, bounds=(lower / scales, upper / scales), method="trf",
        x_scale="jac", xtol=problem.xtol, ftol=problem.ftol, gtol=1e-15, max_nfev=problem.max_iter,
    )
    converged = solution.status > 0
    values = solution.x * scales
    residual_norm = float(np.sum(solution.fun ** 2))

    norms = _check_rank(names, solution.jac)
    normalized = solution.jac / norms
    inverse = np.linalg.inv(normalized.T @ normalized) / np.outer(norms, norms)
    covariance = inverse * np.outer(scales, scales)
    if not problem.absolute_sigma:
        covariance = covariance * (residual_norm / problem.dof)
    covariance = 0.5 * (covariance + covariance.T)

    at_bounds = tuple(n for n, active in zip(names, solution.active_mask) if active != 0)
    steps = BAND_STEP * np.maximum(np.abs(values), scales)
    band_function = make_band_function(model, names, values, covariance, problem.fixed_params, steps)
    _, lo, hi = band_function(problem.x, problem.sigma_level)

    if not converged:
        logger.warning("fit of '%s' stopped after %d evaluations: %s", model.name, solution.nfev, solution.message)
    else:
        logger.info("fit of '%s' converged in %d evaluations (chi2=%.4g, dof=%d)",
                    model.name, solution.nfev, residual_norm, problem.dof)

    return FitResult(
        model_name=model.name,
        param_names=names,
        values=values,
        covariance=covariance,
        residual_norm=residual_norm,
        dof=problem.dof,
        sigma_level=problem.sigma_level,
        fixed=dict(problem.fixed_params),
        confidence_bands={"x": problem.x.copy(), "lo": lo, "hi": hi},
        converged=converged,
        iterations=int(solution.nfev),
        message=str(solution.message),
        at_bounds=at_bounds,
        band_function=band_function,
    )


def fit_model(name: str, x: ArrayLike, y: ArrayLike, y_sigma: Optional[ArrayLike] = None,
              guess: Optional[Dict[str, float]] = None, fixed: Optional[Dict[str, float]] = None,
              **solver: Any) -> FitResult:
    """Fit a registered model by name with automatic start values."""
    problem = FitProblem(
        model=name, x=np.asarray(x), y=np.asarray(y), y_sigma=None if y_sigma is None else np.asarray(y_sigma),
        initial_guess=dict(guess or {}), fixed_params=dict(fixed or {}), **solver,
    )
    return fit(problem)


# ============================================================
# WEIGHTED STRAIGHT LINE
# ============================================================

def fit_line(x: ArrayLike, y: ArrayLike, y_sigma: Optional[ArrayLike] = None,
             sigma_level: float = 2.0) -> FitResult:
    """
    Closed-form weighted straight-line fit y = slope·x + intercept.

    With ``y_sigma`` the uncertainties are taken as absolute, so two points
    suffice (dof = 0); without it the covariance is scaled by the residual
    variance and at least three points are needed.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InvalidParameterError("fit_line needs two or more (x, y) points")
    if np.ptp(x) == 0:
        raise InvalidParameterError("degenerate x-range: all x values are identical")
    if y_sigma is None:
        if x.size < 3:
            raise InvalidParameterError("an unweighted line fit needs at least three points")
        weights = np.ones_like(y)
    else:
        sigma = np.broadcast_to(np.asarray(y_sigma, dtype=float), y.shape)
        if np.any(~(sigma > 0)):
            raise InvalidParameterError("y_sigma must be > 0 everywhere")
        weights = 1.0 / sigma ** 2

    design = np.column_stack([x, np.ones_like(x)])
    normal = design.T @ (weights[:, None] * design)
    covariance = np.linalg.inv(normal)
    values = covariance @ (design.T @ (weights * y))
    residual_norm = float(np.sum(weights * (y - design @ values) ** 2))
    dof = x.size - 2
    if y_sigma is None:
        covariance = covariance * (residual_norm / dof)
    covariance = 0.5 * (covariance + covariance.T)

    model = get_model("line")
    names = ("slope", "intercept")
    steps = BAND_STEP * np.maximum(np.abs(values), 1.0)
    band_function = make_band_function(model, names, values, covariance, {}, steps)
    _, lo, hi = band_function(x, sigma_level)
    return FitResult(
        model_name="line",
        param_names=names,
        values=values,
        covariance=covariance,
        residual_norm=residual_norm,
        dof=dof,
        sigma_level=sigma_level,
        confidence_bands={"x": x.copy(), "lo": lo, "hi": hi},
        message="closed-form weighted least squares",
        band_function=band_function,
    )


# ============================================================
# CORRELATION CURVES
# ============================================================

def _smooth(values: np.ndarray, width: int = 5) -> np.ndarray:
    if values.size < width:
        return values
    kernel = np.ones(width) / width
    return np.convolve(values, kernel, mode="same")


def auto_guess_g2(curve: CorrelationCurve, gamma: float) -> Dict[str, float]:
    """Start values for omega and gamma_c read off the curve shape.

    Omega comes from the spacing of the first local minima after the
    antibunching dip; the damping from how far the first peak overshoots 1.
    """
    positive = curve.tau_bins > 0
    tau = curve.tau_bins[positive]
    g2 = _smooth(curve.g2[positive])
    if tau.size < 5:
        raise InvalidParameterError("too few positive-delay bins to estimate start values")

    slope = np.diff(g2)
    maxima = np.flatnonzero((slope[:-1] > 0) & (slope[1:] <= 0)) + 1
    minima = np.flatnonzero((slope[:-1] < 0) & (slope[1:] >= 0)) + 1
    minima = minima[minima > maxima[0]] if maxima.size else minima

    if maxima.size and minima.size and g2[maxima[0]] > 1.0:
        period = tau[minima[1]] - tau[minima[0]] if minima.size > 1 else tau[minima[0]]
        omega = 2.0 * math.pi / period
        overshoot = min(max(g2[maxima[0]] - 1.0, 1e-3), 0.999)
        envelope_rate = -math.log(overshoot) * omega / math.pi
        gamma_c = max(2.0 * envelope_rate - 1.5 * gamma, 0.05 * gamma)
    else:
        # no overshoot: read the rise time and assume moderate overdamping
        rise = tau[np.argmax(g2 >= 1.0 - math.exp(-1.0))] if np.any(g2 >= 1.0 - math.exp(-1.0)) else tau[-1] / 4
        omega = 2.0 / rise
        gamma_c = max(3.0 * omega - 0.5 * gamma, 0.05 * gamma)
    return {"omega": float(omega), "gamma_c": float(gamma_c), "scale": 1.0}


@dataclass(frozen=True)
class G2Fit:
    """Correlation fit plus the derived coherence quantities."""

    fit: FitResult
    gamma: float
    regime: DampingRegime
    pinned_at_lifetime_limit: bool

    @property
    def omega(self) -> float:
        return self.fit.value("omega")

    @property
    def omega_sigma(self) -> float:
        return self.fit.error("omega")

    @property
    def gamma_perp(self) -> float:
        return 0.5 * self.gamma + self.fit.value("gamma_c")

    @property
    def gamma_perp_sigma(self) -> float:
        return self.fit.error("gamma_c")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fit": self.fit.to_dict(),
            "regime": self.regime.value,
            "pinned_at_lifetime_limit": self.pinned_at_lifetime_limit,
            "omega_rad_s": self.omega,
            "omega_sigma_rad_s": self.omega_sigma,
            "gamma_perp_rad_s": self.gamma_perp,
            "gamma_perp_sigma_rad_s": self.gamma_perp_sigma,
            "omega_hz": to_ordinary(self.omega),
            "omega_sigma_hz": to_ordinary(self.omega_sigma),
            "gamma_perp_hz": to_ordinary(self.gamma_perp),
            "gamma_perp_sigma_hz": to_ordinary(self.gamma_perp_sigma),
        }


def fit_g2(
    curve: CorrelationCurve,
    fixed: Mapping[str, float],
    guess: Optional[Mapping[str, float]] = None,
    *,
    quad: Optional[QuadratureSpec] = None,
    kernel: Union[CorrelationKernel, str] = CorrelationKernel.SUBSTITUTION,
    sigma_level: float = 2.0,
    xtol: float = DEFAULT_XTOL,
    ftol: float = DEFAULT_FTOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> G2Fit:
    """
    Fit Ω and γc (hence Γ⊥ = Γ/2 + γc) to a normalized correlation curve.

    A free scale absorbs the plateau normalization; bins are weighted by
    their Poisson uncertainty.

    Args:
        curve: measured histogram
        fixed: must hold ``gamma`` (rad/s); may hold ``sigma`` (rad/s)
        guess: start values for ``omega``/``gamma_c``; estimated from the curve if absent
    """
    if "gamma" not in fixed:
        raise InvalidParameterError("fit_g2 needs the decay rate 'gamma' among the fixed parameters")
    gamma = float(fixed["gamma"])
    pinned_inputs = {"gamma": gamma, "sigma": float(fixed.get("sigma", 0.0)), "delta": float(fixed.get("delta", 0.0))}

    start = auto_guess_g2(curve, gamma)
    start.update(guess or {})
    problem = FitProblem(
        model=g2_model_spec(quad, kernel),
        x=curve.tau_bins,
        y=curve.g2,
        y_sigma=curve.g2_sigma,
        initial_guess=start,
        fixed_params=pinned_inputs,
        sigma_level=sigma_level,
        param_scales={"omega": max(start["omega"], gamma), "gamma_c": max(start["gamma_c"], gamma), "scale": 1.0},
        xtol=xtol,
        ftol=ftol,
        max_iter=max_iter,
    )
    result = fit(problem)

    gamma_c = result.value("gamma_c")
    pinned = "gamma_c" in result.at_bounds or gamma_c <= 1e-6 * gamma
    if pinned:
        logger.warning("dephasing fit is pinned at the lifetime limit (gamma_perp = gamma/2)")
    params = EmitterParams(gamma=gamma, gamma_c=gamma_c, omega=result.value("omega"))
    return G2Fit(fit=result, gamma=gamma, regime=lambda_pair(params).regime, pinned_at_lifetime_limit=pinned)


# ============================================================
# PLE LINE SCANS
# ============================================================

def select_line_shape(temperature: float) -> str:
    """Lorentzian for cold scans, Gaussian once phonon broadening dominates."""
    return "lorentzian" if temperature <= LORENTZIAN_MAX_TEMPERATURE else "gaussian"


def voigt_fwhm(f_gauss: float, f_lorentz: float) -> float:
    """FWHM of the convolution of a Gaussian and a Lorentzian (0.02 % approximation)."""
    return 0.5346 * f_lorentz + math.sqrt(0.2166 * f_lorentz ** 2 + f_gauss ** 2)


@dataclass(frozen=True)
class LineScanSummary:
    shape: str
    scan_fits: List[Dict[str, Any]]
    mean_fwhm_hz: float
    mean_fwhm_stderr_hz: float
    inhomogeneous: FitResult
    center_spread_fwhm_hz: float
    dark_scan_ids: List[str] = field(default_factory=list)
    failed_scan_ids: List[str] = field(default_factory=list)

    @property
    def inhomogeneous_fwhm_hz(self) -> float:
        return self.inhomogeneous.value("fwhm")

    @property
    def inhomogeneous_fwhm_stderr_hz(self) -> float:
        return self.inhomogeneous.error("fwhm")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "shape": self.shape,
            "scans": self.scan_fits,
            "mean_fwhm_hz": self.mean_fwhm_hz,
            "mean_fwhm_stderr_hz": self.mean_fwhm_stderr_hz,
            "inhomogeneous_fwhm_hz": self.inhomogeneous_fwhm_hz,
            "inhomogeneous_fwhm_stderr_hz": self.inhomogeneous_fwhm_stderr_hz,
            "center_spread_fwhm_hz": self.center_spread_fwhm_hz,
            "dark_scans": list(self.dark_scan_ids),
            "failed_scans": list(self.failed_scan_ids),
            "aggregate_fit": self.inhomogeneous.to_dict(),
        }


def _aggregate_spectrum(scans: Sequence[PleScan]) -> Tuple[np.ndarray, np.ndarray]:
    """Sum of the scans on a common frequency grid."""
    first = scans[0].frequency_hz
    if all(s.frequency_hz.shape == first.shape and np.array_equal(s.frequency_hz, first) for s in scans):
        return first, np.sum([s.counts for s in scans], axis=0)
    low = min(float(s.frequency_hz[0]) for s in scans)
    high = max(float(s.frequency_hz[-1]) for s in scans)
    step = float(np.median(np.concatenate([np.diff(s.frequency_hz) for s in scans if len(s) > 1])))
    grid = np.arange(low, high + 0.5 * step, step)
    total = np.zeros(grid.size)
    for scan in scans:
        total += np.interp(grid, scan.frequency_hz, scan.counts, left=0.0, right=0.0)
    return grid, total


def histogram_line_fit(scans: Sequence[PleScan], shape: str = "lorentzian",
                       sigma_level: float = 2.0) -> LineScanSummary:
    """
    Per-scan line-shape fits plus a Gaussian fit of the summed spectrum.

    Dark scans (no line above the counting noise) are excluded and listed;
    scans whose fit fails are listed separately.
    """
    if shape not in ("lorentzian", "gaussian"):
        raise InvalidParameterError(f"Unsupported line shape: {shape}. Choose from: lorentzian, gaussian")
    if not scans:
        raise InvalidParameterError("no scans to analyze")

    dark = [s.scan_id for s in scans if s.is_dark]
    if dark:
        logger.warning("excluding %d dark scan(s): %s", len(dark), ", ".join(dark))
    bright = [s for s in scans if not s.is_dark]
    if not bright:
        raise InvalidParameterError("every scan is dark; nothing to fit")

    scan_fits: List[Dict[str, Any]] = []
    failed: List[str] = []
    for scan in bright:
        try:
            result = fit_model(shape, scan.frequency_hz, scan.counts, y_sigma=np.sqrt(np.maximum(scan.counts, 1.0)))
        except (InvalidParameterError, NumericalError) as exc:
            logger.warning("scan %s could not be fitted: %s", scan.scan_id, exc)
            failed.append(scan.scan_id)
            continue
        scan_fits.append({
            "scan_id": scan.scan_id,
            "fwhm_hz": result.value("fwhm"),
            "fwhm_sigma_hz": result.error("fwhm"),
            "center_hz": result.value("center"),
            "center_sigma_hz": result.error("center"),
            "converged": result.converged,
        })
    if not scan_fits:
        raise NumericalError("no scan could be fitted")

    widths = np.array([f["fwhm_hz"] for f in scan_fits])
    centers = np.array([f["center_hz"] for f in scan_fits])
    mean_stderr = float(np.std(widths, ddof=1) / math.sqrt(widths.size)) if widths.size > 1 else scan_fits[0]["fwhm_sigma_hz"]
    spread = float(np.std(centers, ddof=1) * FWHM_PER_SIGMA) if centers.size > 1 else 0.0

    grid, total = _aggregate_spectrum(bright)
    aggregate = fit_model("gaussian", grid, total, y_sigma=np.sqrt(np.maximum(total, 1.0)), sigma_level=sigma_level)
    logger.info("analyzed %d scan(s); summed-spectrum FWHM %.4g Hz", len(scan_fits), aggregate.value("fwhm"))
    return LineScanSummary(
        shape=shape,
        scan_fits=scan_fits,
        mean_fwhm_hz=float(np.mean(widths)),
        mean_fwhm_stderr_hz=mean_stderr,
        inhomogeneous=aggregate,
        center_spread_fwhm_hz=spread,
        dark_scan_ids=dark,
        failed_scan_ids=failed,
    )
