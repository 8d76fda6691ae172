"""
linewidth_models.py — Temperature and power dependent scalar models
--------------------------------------------------------------------
Phenomenological laws used to describe the emitter's spectral data:

- Boltzmann activation law for the energy gap and the ZPL half-width
- cubic growth of the inhomogeneous linewidth
- generalized logistic growth of the single-scan linewidth
- intensity saturation with excitation power
- spectral diffusion rate from the scan speed and linewidths
- the temperature range over which two fitted bands overlap
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from emitter_types import PHYSICAL_CONSTANTS, ArrayLike, FitResult, InvalidParameterError

logger = logging.getLogger("coherence.models")

# Temperature grid of the band-overlap search (K)
GAP_GRID_START = 4.0
GAP_GRID_STOP = 300.0
GAP_GRID_STEP = 1.0


def _as_output(values: np.ndarray, like: ArrayLike):
    return float(values) if np.ndim(like) == 0 else values


def _positive_temperature(T: ArrayLike) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if np.any(np.isnan(T)) or np.any(T <= 0):
        raise InvalidParameterError("temperature must be > 0 K")
    return T


# ============================================================
# MODELS
# ============================================================

@dataclass(frozen=True)
class BoltzmannModel:
    """w = A + B·exp(-C / (k_B T)) with C an activation energy in joules."""

    A: float
    B: float
    C: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.A, self.B, self.C)):
            raise InvalidParameterError("Boltzmann parameters must be finite")

    @property
    def activation_temperature(self) -> float:
        return self.C / PHYSICAL_CONSTANTS.k_B

    @classmethod
    def from_activation_temperature(cls, A: float, B: float, temperature: float) -> "BoltzmannModel":
        return cls(A=A, B=B, C=temperature * PHYSICAL_CONSTANTS.k_B)


@dataclass(frozen=True)
class CubicLinewidthModel:
    A: float
    B: float

    def __post_init__(self):
        if not self.A > 0:
            raise InvalidParameterError(f"A must be > 0, got {self.A}")
        if not self.B >= 0:
            raise InvalidParameterError(f"B must be >= 0, got {self.B}")


@dataclass(frozen=True)
class LogisticLinewidthModel:
    """Generalized logistic in natural-log temperature; A and D are the asymptotes."""

    A: float
    D: float
    B: float
    C: float
    E: float

    def __post_init__(self):
        if not self.A < self.D:
            raise InvalidParameterError("the lower asymptote A must be below D")
        if not self.B > 0:
            raise InvalidParameterError(f"B must be > 0, got {self.B}")
        if not self.E > 0:
            raise InvalidParameterError(f"E must be > 0, got {self.E}")


@dataclass(frozen=True)
class SaturationModel:
    I_inf: float
    P_sat: float

    def __post_init__(self):
        if not self.I_inf > 0:
            raise InvalidParameterError(f"I_inf must be > 0, got {self.I_inf}")
        if not self.P_sat > 0:
            raise InvalidParameterError(f"P_sat must be > 0, got {self.P_sat}")


# ============================================================
# EVALUATION
# ============================================================

def boltzmann_curve(T: ArrayLike, A: float, B: float, C: float) -> np.ndarray:
    return A + B * np.exp(-C / (PHYSICAL_CONSTANTS.k_B * T))


def cubic_curve(T: ArrayLike, A: float, B: float) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    return A + B * T ** 3


def logistic_curve(T: ArrayLike, A: float, D: float, B: float, C: float, E: float) -> np.ndarray:
    # [1 + exp(x)]^-E computed as exp(-E·log(1 + exp(x))) to stay finite for large x
    exponent = B * (np.log(T) - C)
    return D + (A - D) * np.exp(-E * np.logaddexp(0.0, exponent))


def saturation_curve(P: ArrayLike, I_inf: float, P_sat: float) -> np.ndarray:
    ratio = np.asarray(P, dtype=float) / P_sat
    return I_inf * ratio / (1.0 + ratio)


def eval_boltzmann(m: BoltzmannModel, T: ArrayLike):
    temperature = _positive_temperature(T)
    return _as_output(boltzmann_curve(temperature, m.A, m.B, m.C), T)


def eval_cubic(m: CubicLinewidthModel, T: ArrayLike):
    temperature = np.asarray(T, dtype=float)
    if np.any(temperature < 0):
        raise InvalidParameterError("temperature must be >= 0 K")
    return _as_output(cubic_curve(temperature, m.A, m.B), T)


def eval_logistic(m: LogisticLinewidthModel, T: ArrayLike):
    temperature = _positive_temperature(T)
    return _as_output(logistic_curve(temperature, m.A, m.D, m.B, m.C, m.E), T)


def eval_saturation(m: SaturationModel, P: ArrayLike):
    power = np.asarray(P, dtype=float)
    if np.any(power < 0):
        raise InvalidParameterError("power must be >= 0")
    if np.ndim(P) == 0 and math.isinf(float(power)):
        return m.I_inf
    return _as_output(saturation_curve(power, m.I_inf, m.P_sat), P)


def ftl_crossing_temperature(m: LogisticLinewidthModel, linewidth_hz: float) -> float:
    """Temperature at which the single-scan linewidth reaches ``linewidth_hz``.

    Closed-form inverse of the logistic law; the level must lie strictly
    between the two asymptotes.
    """
    if not m.A < linewidth_hz < m.D:
        raise InvalidParameterError(
            f"linewidth {linewidth_hz:g} Hz lies outside the asymptotes ({m.A:g}, {m.D:g})"
        )
    # [1 + exp(x)]^-E = (w - D)/(A - D)
    log_base = -math.log((linewidth_hz - m.D) / (m.A - m.D)) / m.E
    exponent = math.log(math.expm1(log_base))
    return math.exp(m.C + exponent / m.B)


def diffusion_rate(u_L: ArrayLike, dv_ftl: ArrayLike, dv_single: ArrayLike):
    """
    Lower bound on the spectral diffusion rate (Hz).

    Args:
        u_L: laser scan speed (Hz/s)
        dv_ftl: Fourier-limited linewidth (Hz)
        dv_single: single-scan linewidth (Hz)
    """
    u_L_a, ftl_a, single_a = (np.asarray(v, dtype=float) for v in (u_L, dv_ftl, dv_single))
    if np.any(u_L_a <= 0) or np.any(ftl_a <= 0) or np.any(single_a <= 0):
        raise InvalidParameterError("scan speed and linewidths must be > 0")
    rate = (u_L_a / ftl_a) * (single_a / ftl_a)
    scalar = all(np.ndim(v) == 0 for v in (u_L, dv_ftl, dv_single))
    return float(rate) if scalar else rate


# ============================================================
# GAP CLOSING
# ============================================================

@dataclass(frozen=True)
class GapClosingRange:
    """Temperatures where the two confidence bands overlap.

    ``lower``/``upper`` span the overlap hull; ``segments`` lists each
    contiguous overlap run. Both are empty when the bands never meet.
    """

    lower: float = math.nan
    upper: float = math.nan
    segments: List[Tuple[float, float]] = field(default_factory=list)
    sigma_level: float = 2.0
    diagnostic: str = ""

    @property
    def is_empty(self) -> bool:
        return not self.segments

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lower_k": None if self.is_empty else self.lower,
            "upper_k": None if self.is_empty else self.upper,
            "segments_k": [list(s) for s in self.segments],
            "sigma_level": self.sigma_level,
            "empty": self.is_empty,
            "diagnostic": self.diagnostic,
        }


def gap_closing_grid() -> np.ndarray:
    n = int(round((GAP_GRID_STOP - GAP_GRID_START) / GAP_GRID_STEP)) + 1
    return GAP_GRID_START + GAP_GRID_STEP * np.arange(n)


def band_overlap(fit_down: FitResult, fit_up: FitResult, temperatures: np.ndarray,
                 sigma_level: float) -> np.ndarray:
    """Mask of temperatures where the two confidence bands overlap."""
    _, lo_down, hi_down = fit_down.band(temperatures, sigma_level)
    _, lo_up, hi_up = fit_up.band(temperatures, sigma_level)
    return np.maximum(lo_down, lo_up) <= np.minimum(hi_down, hi_up)


def gap_closing_range(fit_down: FitResult, fit_up: FitResult, sigma_level: float = 2.0) -> GapClosingRange:
    """
    Temperature interval where the bands of the shrinking gap and the
    growing half-width overlap, on a 1 K grid over [4, 300] K.

    Swapping the two fits gives the same result.
    """
    temperatures = gap_closing_grid()
    overlap = band_overlap(fit_down, fit_up, temperatures, sigma_level)

    if not np.any(overlap):
        diagnostic = (
            f"{sigma_level:g}-sigma bands do not overlap between "
            f"{GAP_GRID_START:g} K and {GAP_GRID_STOP:g} K"
        )
        logger.warning(diagnostic)
        return GapClosingRange(sigma_level=sigma_level, diagnostic=diagnostic)

    segments: List[Tuple[float, float]] = []
    edges = np.diff(overlap.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    stops = list(np.flatnonzero(edges == -1))
    if overlap[0]:
        starts.insert(0, 0)
    if overlap[-1]:
        stops.append(overlap.size - 1)
    for start, stop in zip(starts, stops):
        segments.append((float(temperatures[start]), float(temperatures[stop])))

    diagnostic = "" if len(segments) == 1 else f"bands overlap in {len(segments)} separate runs"
    result = GapClosingRange(
        lower=segments[0][0],
        upper=segments[-1][1],
        segments=segments,
        sigma_level=sigma_level,
        diagnostic=diagnostic,
    )
    logger.info("gap closes between %.0f K and %.0f K", result.lower, result.upper)
    return result
