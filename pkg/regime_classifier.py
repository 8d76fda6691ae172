"""
regime_classifier.py — Coherent driving regime from power series
-----------------------------------------------------------------
From per-power correlation fits at one temperature, fits Ω against √P
and Γ⊥ against Ω, and classifies the slope m of the latter:

    m ≤ 0.5       π-pulses possible
    0.5 < m ≤ 1   π/2-pulses only
    1 < m ≤ 2     incoherent, still underdamped
    m > 2         overdamped (beyond critical damping)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import norm

from emitter_types import FTL_LINEWIDTH_HZ, FitResult, InvalidParameterError, to_angular
from fit_engine import fit_line

logger = logging.getLogger("coherence.classifier")

PI_PULSE_SLOPE = 0.5
PI_HALF_PULSE_SLOPE = 1.0
CRITICAL_DAMPING_SLOPE = 2.0

# Offsets within this many standard errors of Γ/2 count as lifetime limited
OFFSET_SIGMAS = 2.0


class DrivingRegime(str, Enum):
    FULLY_COHERENT_PI_CAPABLE = "fully_coherent_pi_capable"
    COHERENT_PI2_ONLY = "coherent_pi2_only"
    INCOHERENT_UNDERDAMPED = "incoherent_underdamped"
    OVERDAMPED = "overdamped"


@dataclass(frozen=True)
class PowerEntry:
    power: float  # W
    omega: float  # rad/s
    omega_sigma: float
    gamma_perp: float  # rad/s
    gamma_perp_sigma: float

    def __post_init__(self):
        if not self.power >= 0:
            raise InvalidParameterError(f"power must be >= 0, got {self.power}")
        if not (self.omega_sigma > 0 and self.gamma_perp_sigma > 0):
            raise InvalidParameterError("omega and gamma_perp uncertainties must be > 0")


@dataclass(frozen=True)
class PowerSeries:
    temperature: float
    entries: Sequence[PowerEntry]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.temperature > 0:
            raise InvalidParameterError(f"temperature must be > 0 K, got {self.temperature}")
        if len(self.entries) < 2:
            raise InvalidParameterError("a power series needs at least two entries for slope fitting")
        powers = np.array([e.power for e in self.entries])
        if np.any(np.diff(powers) <= 0):
            raise InvalidParameterError("powers must be strictly increasing")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.entries], dtype=float)


@dataclass(frozen=True)
class RegimeReport:
    temperature: float
    slope_m: float
    slope_sigma: float
    offset: float
    offset_sigma: float
    offset_consistent_with_gamma_over_2: bool
    regime: DrivingRegime
    rabi_vs_sqrtP_slope: float
    rabi_vs_sqrtP_slope_sigma: float
    gamma: float
    class_probabilities: Dict[str, float] = field(default_factory=dict)
    rabi_fit: Optional[FitResult] = field(default=None, repr=False, compare=False)
    dephasing_fit: Optional[FitResult] = field(default=None, repr=False, compare=False)

    @property
    def pi_pulse_capable(self) -> bool:
        return self.slope_m <= PI_PULSE_SLOPE

    @property
    def pi_half_pulse_capable(self) -> bool:
        return self.slope_m <= PI_HALF_PULSE_SLOPE

    def to_dict(self) -> Dict[str, Any]:
        return {
            "temperature_k": self.temperature,
            "slope_m": self.slope_m,
            "slope_sigma": self.slope_sigma,
            "offset_rad_s": self.offset,
            "offset_sigma_rad_s": self.offset_sigma,
            "offset_consistent_with_gamma_over_2": self.offset_consistent_with_gamma_over_2,
            "regime": self.regime.value,
            "rabi_vs_sqrtP_slope": self.rabi_vs_sqrtP_slope,
            "rabi_vs_sqrtP_slope_sigma": self.rabi_vs_sqrtP_slope_sigma,
            "gamma_rad_s": self.gamma,
            "class_probabilities": dict(self.class_probabilities),
            "pi_pulse_capable": self.pi_pulse_capable,
            "pi_half_pulse_capable": self.pi_half_pulse_capable,
        }


@dataclass(frozen=True)
class TemperatureBracket:
    lower: Optional[float]
    upper: Optional[float]
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"warmest_coherent_k": self.lower, "coldest_incoherent_k": self.upper, "note": self.note}


# ============================================================
# CLASSIFICATION
# ============================================================

def regime_for_slope(slope: float) -> DrivingRegime:
    if slope <= PI_PULSE_SLOPE:
        return DrivingRegime.FULLY_COHERENT_PI_CAPABLE
    if slope <= PI_HALF_PULSE_SLOPE:
        return DrivingRegime.COHERENT_PI2_ONLY
    if slope <= CRITICAL_DAMPING_SLOPE:
        return DrivingRegime.INCOHERENT_UNDERDAMPED
    return DrivingRegime.OVERDAMPED


def class_probabilities(slope: float, slope_sigma: float) -> Dict[str, float]:
    """Mass of a Gaussian slope posterior falling in each regime."""
    if slope_sigma <= 0:
        regime = regime_for_slope(slope)
        return {r.value: float(r is regime) for r in DrivingRegime}
    edges = norm.cdf([PI_PULSE_SLOPE, PI_HALF_PULSE_SLOPE, CRITICAL_DAMPING_SLOPE], loc=slope, scale=slope_sigma)
    masses = np.diff(np.concatenate([[0.0], edges, [1.0]]))
    return {r.value: float(mass) for r, mass in zip(DrivingRegime, masses)}


def critical_dephasing(omega: float, gamma: float) -> float:
    """Γ⊥ at which the population dynamics is critically damped (≈ 2Ω when Γ⊥ ≫ Γ)."""
    return 2.0 * omega + gamma


def fit_rabi_vs_power(series: PowerSeries) -> FitResult:
    """Weighted fit of Ω against √P."""
    return fit_line(np.sqrt(series.column("power")), series.column("omega"), series.column("omega_sigma"))


def classify(series: PowerSeries, gamma: Optional[float] = None) -> RegimeReport:
    """
    Classify the driving regime of one temperature's power series.

    Args:
        series: fitted Ω and Γ⊥ per excitation power
        gamma: decay rate (rad/s); defaults to the Fourier-limited value

    Returns:
        RegimeReport with slope, offset check and class probabilities
    """
    gamma = to_angular(FTL_LINEWIDTH_HZ) if gamma is None else float(gamma)
    rabi = fit_rabi_vs_power(series)
    omega = series.column("omega")
    if np.ptp(omega) == 0:
        raise InvalidParameterError("degenerate x-range: all Rabi frequencies are identical")
    dephasing = fit_line(omega, series.column("gamma_perp"), series.column("gamma_perp_sigma"))

    slope, offset = dephasing.value("slope"), dephasing.value("intercept")
    slope_sigma, offset_sigma = dephasing.error("slope"), dephasing.error("intercept")
    distance = abs(offset - 0.5 * gamma)
    if offset_sigma > 0:
        consistent = distance <= OFFSET_SIGMAS * offset_sigma
    else:
        consistent = distance <= 1e-12 * gamma

    regime = regime_for_slope(slope)
    logger.info("T=%.1f K: slope %.3g ± %.2g -> %s", series.temperature, slope, slope_sigma, regime.value)
    return RegimeReport(
        temperature=series.temperature,
        slope_m=slope,
        slope_sigma=slope_sigma,
        offset=offset,
        offset_sigma=offset_sigma,
        offset_consistent_with_gamma_over_2=bool(consistent),
        regime=regime,
        rabi_vs_sqrtP_slope=rabi.value("slope"),
        rabi_vs_sqrtP_slope_sigma=rabi.error("slope"),
        gamma=gamma,
        class_probabilities=class_probabilities(slope, slope_sigma),
        rabi_fit=rabi,
        dephasing_fit=dephasing,
    )


def coherence_temperature_bracket(reports: Sequence[RegimeReport]) -> TemperatureBracket:
    """
    Measured temperatures bracketing the loss of coherent control.

    Lower end: warmest temperature still allowing π/2-pulses. Upper end: the
    coldest temperature above it that does not. No interpolation between them.
    """
    if not reports:
        raise InvalidParameterError("no reports to bracket")
    ordered = sorted(reports, key=lambda r: r.temperature)
    coherent = [r.temperature for r in ordered if r.pi_half_pulse_capable]
    if not coherent:
        return TemperatureBracket(None, ordered[0].temperature, "no measured temperature allows coherent driving")
    warmest = max(coherent)
    above = [r.temperature for r in ordered if r.temperature > warmest and not r.pi_half_pulse_capable]
    if not above:
        return TemperatureBracket(warmest, None, "coherent driving up to the warmest measured temperature")
    colder_incoherent: List[float] = [r.temperature for r in ordered if r.temperature < warmest and not r.pi_half_pulse_capable]
    note = "" if not colder_incoherent else "non-monotone: incoherent points below the bracket"
    return TemperatureBracket(warmest, min(above), note)
