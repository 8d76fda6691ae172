"""
emitter_types.py — Shared physical quantities for the coherence toolkit
------------------------------------------------------------------------
Value objects used by every other module: the driven two-level emitter,
the quasi-static detuning law, correlation histograms and fit results,
plus unit conversion and the exception hierarchy.

All rates and frequencies are stored as angular frequencies (rad/s).
Files, command-line flags and reports use ordinary frequency (Hz).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import constants

logger = logging.getLogger("coherence.types")

ArrayLike = Union[float, Sequence[float], np.ndarray]

# ============================================================
# CONSTANTS
# ============================================================

TWO_PI = 2.0 * math.pi

# Fourier-transform-limited linewidth of the reference emitter (Hz)
FTL_LINEWIDTH_HZ = 109e6

# Outer fraction of the |tau| range used as the g2 plateau
PLATEAU_FRACTION = 0.2

# FWHM = FWHM_PER_SIGMA * sigma for a Gaussian
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class PhysicalConstants:
    k_B: float = constants.k


PHYSICAL_CONSTANTS = PhysicalConstants()


# ============================================================
# EXCEPTIONS
# ============================================================

class CoherenceError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidParameterError(CoherenceError, ValueError):
    """Inputs violate a documented precondition."""


class DataFormatError(InvalidParameterError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(CoherenceError, ArithmeticError):
    """A numerical procedure failed to produce a trustworthy result."""


class RankDeficiencyError(NumericalError):
    def __init__(self, message: str, combination: str):
        super().__init__(f"{message}: {combination}")
        self.combination = combination


class QuadratureError(NumericalError):
    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (achieved error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


class IntegrationError(NumericalError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t = {time:.6e} s")
        self.time = time


class BlochInvariantError(NumericalError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t = {time:.6e} s")
        self.time = time


# ============================================================
# UNIT CONVERSION
# ============================================================

class FrequencyDirection(str, Enum):
    TO_ANGULAR = "to_angular"
    TO_ORDINARY = "to_ordinary"


def to_angular(value_hz: ArrayLike) -> Any:
    """Ordinary frequency (Hz) to angular frequency (rad/s)."""
    return np.multiply(value_hz, TWO_PI) if not np.isscalar(value_hz) else float(value_hz) * TWO_PI


def to_ordinary(value_rad_s: ArrayLike) -> Any:
    """Angular frequency (rad/s) to ordinary frequency (Hz)."""
    return np.divide(value_rad_s, TWO_PI) if not np.isscalar(value_rad_s) else float(value_rad_s) / TWO_PI


def convert_frequency(value: ArrayLike, direction: Union[FrequencyDirection, str]) -> Any:
    """Multiply or divide by 2π.

    Args:
        value: finite frequency value(s)
        direction: ``to_angular`` (Hz → rad/s) or ``to_ordinary`` (rad/s → Hz)
    """
    if not np.all(np.isfinite(value)):
        raise InvalidParameterError("frequency value must be finite")
    direction = FrequencyDirection(direction)
    if direction is FrequencyDirection.TO_ANGULAR:
        return to_angular(value)
    return to_ordinary(value)


# ============================================================
# EMITTER PARAMETERS
# ============================================================

@dataclass(frozen=True)
class EmitterParams:
    """Physical state of the driven two-level system (all rad/s)."""

    gamma: float
    gamma_c: float = 0.0
    omega: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        for name in ("gamma", "gamma_c", "omega", "delta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be finite, got {value}")
        if self.gamma <= 0:
            raise InvalidParameterError(f"gamma must be > 0, got {self.gamma}")
        if self.gamma_c < 0:
            raise InvalidParameterError(f"gamma_c must be >= 0, got {self.gamma_c}")
        if self.omega < 0:
            raise InvalidParameterError(f"omega must be >= 0, got {self.omega}")

    @property
    def gamma_perp(self) -> float:
        return self.gamma / 2.0 + self.gamma_c

    @property
    def effective_omega(self) -> float:
        """Generalized Rabi frequency √(Ω² + Δ²)."""
        return math.hypot(self.omega, self.delta)

    def with_detuning(self, delta: float) -> "EmitterParams":
        return replace(self, delta=float(delta))

    def with_omega(self, omega: float) -> "EmitterParams":
        return replace(self, omega=float(omega))

    @classmethod
    def from_hz(cls, gamma_hz: float, gamma_c_hz: float = 0.0,
                omega_hz: float = 0.0, delta_hz: float = 0.0) -> "EmitterParams":
        return cls(
            gamma=to_angular(gamma_hz),
            gamma_c=to_angular(gamma_c_hz),
            omega=to_angular(omega_hz),
            delta=to_angular(delta_hz),
        )

    @classmethod
    def from_ftl(cls, ftl_hz: float = FTL_LINEWIDTH_HZ, gamma_c_hz: float = 0.0,
                 omega_hz: float = 0.0, delta_hz: float = 0.0) -> "EmitterParams":
        """Γ = 2π·Δν_FTL."""
        return cls.from_hz(ftl_hz, gamma_c_hz, omega_hz, delta_hz)

    def to_dict(self) -> Dict[str, float]:
        return {
            "gamma_rad_s": self.gamma,
            "gamma_c_rad_s": self.gamma_c,
            "omega_rad_s": self.omega,
            "delta_rad_s": self.delta,
            "gamma_perp_rad_s": self.gamma_perp,
            "gamma_hz": to_ordinary(self.gamma),
            "gamma_c_hz": to_ordinary(self.gamma_c),
            "omega_hz": to_ordinary(self.omega),
            "delta_hz": to_ordinary(self.delta),
            "gamma_perp_hz": to_ordinary(self.gamma_perp),
        }


def gamma_perp(params: EmitterParams) -> float:
    """Transverse dephasing rate Γ⊥ = Γ/2 + γc (rad/s)."""
    return params.gamma_perp


# ============================================================
# DETUNING DISTRIBUTION
# ============================================================

@dataclass(frozen=True)
class DetuningDistribution:
    """Gaussian law of the quasi-static detuning (rad/s)."""

    sigma: float = 0.0
    mean: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and math.isfinite(self.mean)):
            raise InvalidParameterError("sigma and mean must be finite")
        if self.sigma < 0:
            raise InvalidParameterError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def is_resonant(self) -> bool:
        return self.sigma == 0.0

    @property
    def fwhm_hz(self) -> float:
        return to_ordinary(self.sigma) * FWHM_PER_SIGMA

    @classmethod
    def from_fwhm_hz(cls, fwhm_hz: float, mean_hz: float = 0.0) -> "DetuningDistribution":
        """Distribution matching an inhomogeneous PLE linewidth (FWHM, Hz)."""
        return cls(sigma=to_angular(fwhm_hz) / FWHM_PER_SIGMA, mean=to_angular(mean_hz))

    def pdf(self, delta: ArrayLike) -> np.ndarray:
        if self.is_resonant:
            raise InvalidParameterError("the resonant distribution has no density")
        z = (np.asarray(delta, dtype=float) - self.mean) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(TWO_PI))


# ============================================================
# CORRELATION HISTOGRAMS
# ============================================================

def plateau_mask(tau_bins: np.ndarray, fraction: float = PLATEAU_FRACTION) -> np.ndarray:
    """Bins in the outer ``fraction`` of the |tau| range."""
    extent = np.max(np.abs(tau_bins))
    return np.abs(tau_bins) >= (1.0 - fraction) * extent


def _readonly(values: ArrayLike) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class CorrelationCurve:
    """A τ-binned coincidence histogram; ``normalization`` maps counts to g²."""

    tau_bins: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    bin_width: float
    normalization: float = 1.0

    def __post_init__(self):
        tau = _readonly(self.tau_bins)
        counts = _readonly(self.counts)
        object.__setattr__(self, "tau_bins", tau)
        object.__setattr__(self, "counts", counts)
        if tau.ndim != 1 or tau.shape != counts.shape:
            raise InvalidParameterError("tau_bins and counts must be 1-D arrays of equal length")
        if tau.size < 2:
            raise InvalidParameterError("a correlation curve needs at least two bins")
        if not self.bin_width > 0:
            raise InvalidParameterError(f"bin_width must be > 0, got {self.bin_width}")
        if not (math.isfinite(self.normalization) and self.normalization > 0):
            raise InvalidParameterError(f"normalization must be finite and > 0, got {self.normalization}")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise InvalidParameterError("counts must be finite and non-negative")
        steps = np.diff(tau)
        if np.any(steps <= 0):
            raise InvalidParameterError("tau_bins must be strictly increasing")
        if not np.allclose(steps, self.bin_width, rtol=1e-6, atol=0.0):
            raise InvalidParameterError("tau_bins spacing must equal bin_width")

    @classmethod
    def from_counts(cls, tau_bins: ArrayLike, counts: ArrayLike,
                    bin_width: Optional[float] = None) -> "CorrelationCurve":
        """Build a curve normalized so that the large-|τ| plateau is 1."""
        tau = np.asarray(tau_bins, dtype=float)
        values = np.asarray(counts, dtype=float)
        if bin_width is None:
            if tau.size < 2:
                raise InvalidParameterError("cannot infer bin width from fewer than two bins")
            bin_width = float(tau[1] - tau[0])
        plateau = float(np.mean(values[plateau_mask(tau)]))
        if not plateau > 0:
            raise NumericalError("correlation plateau is empty; cannot normalize")
        return cls(tau_bins=tau, counts=values, bin_width=bin_width, normalization=1.0 / plateau)

    @property
    def g2(self) -> np.ndarray:
        return self.counts * self.normalization

    @property
    def g2_sigma(self) -> np.ndarray:
        """Poisson uncertainty of g², floored at one count."""
        return np.sqrt(np.maximum(self.counts, 1.0)) * self.normalization

    @property
    def total_counts(self) -> float:
        return float(np.sum(self.counts))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tau_s": self.tau_bins.tolist(),
            "counts": self.counts.tolist(),
            "bin_width_s": self.bin_width,
            "normalization": self.normalization,
        }


# ============================================================
# FIT RESULTS
# ============================================================

BandFunction = Callable[[np.ndarray, float], Tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class FitResult:
    """Parameter estimates of a least-squares fit.

    ``values``/``covariance`` cover the free parameters listed in
    ``param_names``; ``fixed`` holds parameters that were pinned.
    ``confidence_bands`` maps ``x``, ``lo``, ``hi`` at ``sigma_level``.
    """

    model_name: str
    param_names: Tuple[str, ...]
    values: np.ndarray = field(repr=False)
    covariance: np.ndarray = field(repr=False)
    residual_norm: float
    dof: int
    sigma_level: float = 2.0
    fixed: Dict[str, float] = field(default_factory=dict)
    confidence_bands: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    converged: bool = True
    iterations: int = 0
    message: str = ""
    at_bounds: Tuple[str, ...] = ()
    band_function: Optional[BandFunction] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        values = _readonly(self.values)
        covariance = _readonly(np.atleast_2d(self.covariance))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "covariance", covariance)
        n = values.size
        if covariance.shape != (n, n):
            raise InvalidParameterError("covariance shape does not match the parameter vector")
        if len(self.param_names) != n:
            raise InvalidParameterError("param_names does not match the parameter vector")
        if n and not np.allclose(covariance, covariance.T, rtol=1e-8, atol=1e-300):
            raise InvalidParameterError("covariance must be symmetric")
        if self.dof < 0:
            raise InvalidParameterError(f"dof must be >= 0, got {self.dof}")

    @property
    def params(self) -> Dict[str, float]:
        merged = dict(self.fixed)
        merged.update({name: float(v) for name, v in zip(self.param_names, self.values)})
        return merged

    @property
    def stderr(self) -> Dict[str, float]:
        diag = np.clip(np.diag(self.covariance), 0.0, None)
        return {name: float(math.sqrt(v)) for name, v in zip(self.param_names, diag)}

    @property
    def reduced_chi_square(self) -> float:
        return self.residual_norm / self.dof if self.dof > 0 else float("nan")

    def value(self, name: str) -> float:
        return self.params[name]

    def error(self, name: str) -> float:
        return self.stderr.get(name, 0.0)

    def band(self, x: ArrayLike, sigma_level: Optional[float] = None):
        """Model curve and first-order confidence envelope at ``x``.

        Returns:
            Tuple of (y, lower, upper)
        """
        if self.band_function is None:
            raise InvalidParameterError(f"fit '{self.model_name}' carries no model for band evaluation")
        level = self.sigma_level if sigma_level is None else float(sigma_level)
        return self.band_function(np.asarray(x, dtype=float), level)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model_name,
            "params": self.params,
            "stderr": self.stderr,
            "covariance": self.covariance.tolist(),
            "param_names": list(self.param_names),
            "fixed": dict(self.fixed),
            "residual_norm": self.residual_norm,
            "dof": self.dof,
            "reduced_chi_square": self.reduced_chi_square if self.dof > 0 else None,
            "sigma_level": self.sigma_level,
            "converged": self.converged,
            "iterations": self.iterations,
            "message": self.message,
            "at_bounds": list(self.at_bounds),
        }


# ============================================================
# PLE SCANS
# ============================================================

# A scan counts as dark when its peak rises less than this many Poisson σ above the median
DARK_SCAN_SIGMAS = 5.0


@dataclass(frozen=True)
class PleScan:
    """One photoluminescence-excitation sweep, sorted by laser frequency."""

    scan_id: str
    frequency_hz: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        frequency = np.asarray(self.frequency_hz, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        if frequency.ndim != 1 or frequency.shape != counts.shape or frequency.size == 0:
            raise InvalidParameterError(f"scan {self.scan_id!r}: frequency and counts must be equal-length 1-D arrays")
        if np.any(counts < 0):
            raise InvalidParameterError(f"scan {self.scan_id!r}: counts must be non-negative")
        order = np.argsort(frequency, kind="stable")
        object.__setattr__(self, "frequency_hz", _readonly(frequency[order]))
        object.__setattr__(self, "counts", _readonly(counts[order]))

    def __len__(self) -> int:
        return int(self.counts.size)

    @property
    def is_dark(self) -> bool:
        """True when no line rises above the counting noise."""
        background = float(np.median(self.counts))
        return float(np.max(self.counts)) - background <= DARK_SCAN_SIGMAS * math.sqrt(max(background, 1.0))
