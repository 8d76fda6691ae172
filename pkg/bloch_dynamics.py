"""
bloch_dynamics.py — Driven two-level system dynamics
-----------------------------------------------------
Closed-form second-order correlation of a resonantly driven emitter,
its detuned generalization, the steady-state emission rate, and
time-domain integration of the optical Bloch equations for pulsed
Rabi flopping.

Bloch equations in the rotating frame (y = [rho_ee, Re rho_eg, Im rho_eg]):

    rho_ee' = -Γ rho_ee - Ω(t) v
    u'      = -Γ⊥ u - Δ v
    v'      =  Ω(t) rho_ee + Δ u - Γ⊥ v - Ω(t)/2
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp

from emitter_types import (
    ArrayLike,
    BlochInvariantError,
    EmitterParams,
    IntegrationError,
    InvalidParameterError,
    NumericalError,
)

logger = logging.getLogger("coherence.dynamics")

# ============================================================
# NUMERICAL SETTINGS
# ============================================================

# |q| below this multiple of (Γ + Γ⊥) is treated as critical damping
CRITICAL_Q_THRESHOLD = 1e-9

# Allowed imaginary residue of the closed form, relative to its term magnitudes
IMAG_TOLERANCE = 1e-10

# Condition number above which the eigen-expansion is replaced by expm
EIGEN_CONDITION_LIMIT = 1e8

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12

# 10–90 % rise of 1 - exp(-t/τ) takes τ·ln 9
RISE_TIME_FACTOR = math.log(9.0)


# ============================================================
# DATA CLASSES
# ============================================================

class DampingRegime(str, Enum):
    OSCILLATORY = "oscillatory"
    CRITICALLY_DAMPED = "critically_damped"
    OVERDAMPED = "overdamped"


@dataclass(frozen=True)
class LambdaPair:
    lambda_plus: complex
    lambda_minus: complex
    q: complex
    regime: DampingRegime

    @property
    def envelope_decay_rate(self) -> float:
        """Decay rate of the oscillation envelope, -Re(λ±) averaged."""
        return -0.5 * (self.lambda_plus.real + self.lambda_minus.real)

    @property
    def oscillation_frequency(self) -> float:
        """Angular frequency of the damped oscillation (0 unless oscillatory)."""
        return abs(self.q.imag) if self.regime is DampingRegime.OSCILLATORY else 0.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "lambda_plus": [self.lambda_plus.real, self.lambda_plus.imag],
            "lambda_minus": [self.lambda_minus.real, self.lambda_minus.imag],
            "q": [self.q.real, self.q.imag],
            "regime": self.regime.value,
        }


class PulseShape(str, Enum):
    IDEAL_SQUARE = "ideal_square"
    EXPONENTIAL_RISE = "exponential_rise"


@dataclass(frozen=True)
class PulseEnvelope:
    """Resonant drive pulse starting at t = 0.

    ``peak_omega`` of ``None`` drives with the emitter's own Ω.
    The exponential shape rises as 1 - exp(-t/τr) and falls as
    exp(-(t - duration)/τr), with τr set by the 10–90 % ``rise_time``.
    """

    duration: float = 10e-9
    rise_time: float = 0.0
    shape: PulseShape = PulseShape.IDEAL_SQUARE
    peak_omega: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "shape", PulseShape(self.shape))
        if not self.duration > 0:
            raise InvalidParameterError(f"pulse duration must be > 0, got {self.duration}")
        if self.rise_time < 0:
            raise InvalidParameterError(f"rise_time must be >= 0, got {self.rise_time}")
        if self.rise_time >= self.duration:
            raise InvalidParameterError("rise_time must be shorter than the pulse duration")
        if self.peak_omega is not None and self.peak_omega < 0:
            raise InvalidParameterError("peak_omega must be >= 0")
        if self.shape is PulseShape.EXPONENTIAL_RISE and self.rise_time == 0:
            raise InvalidParameterError("an exponential_rise pulse needs a rise_time > 0")

    @property
    def time_constant(self) -> float:
        return self.rise_time / RISE_TIME_FACTOR

    def omega_at(self, t: float, default_omega: float) -> float:
        peak = default_omega if self.peak_omega is None else self.peak_omega
        if t < 0:
            return 0.0
        if self.shape is PulseShape.IDEAL_SQUARE:
            return peak if t < self.duration else 0.0
        tc = self.time_constant
        if t < self.duration:
            return peak * -math.expm1(-t / tc)
        at_end = peak * -math.expm1(-self.duration / tc)
        return at_end * math.exp(-(t - self.duration) / tc)


@dataclass(frozen=True)
class BlochState:
    rho_ee: float
    rho_eg: complex

    @property
    def coherence_bound_violation(self) -> float:
        """|rho_eg|² - rho_ee(1 - rho_ee); positive values are unphysical."""
        return abs(self.rho_eg) ** 2 - self.rho_ee * (1.0 - self.rho_ee)


GROUND_STATE = BlochState(rho_ee=0.0, rho_eg=0j)


@dataclass(frozen=True)
class BlochTrajectory:
    """Sequence of Bloch states on a time grid."""

    t: np.ndarray = field(repr=False)
    rho_ee: np.ndarray = field(repr=False)
    rho_eg: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.t.size)

    def __getitem__(self, index: int) -> BlochState:
        return BlochState(float(self.rho_ee[index]), complex(self.rho_eg[index]))

    def __iter__(self) -> Iterator[BlochState]:
        for i in range(len(self)):
            yield self[i]


# ============================================================
# EMISSION RATE
# ============================================================

def emission_rate_kernel(gamma: float, gamma_perp: float, omega: ArrayLike,
                         delta: ArrayLike) -> np.ndarray:
    """Steady-state excited population, vectorized over Ω and Δ."""
    omega = np.asarray(omega, dtype=float)
    delta = np.asarray(delta, dtype=float)
    drive = omega * omega * gamma_perp / gamma
    denominator = delta * delta + gamma_perp * gamma_perp + drive
    return 0.5 * drive / denominator


def emission_rate(params: EmitterParams) -> float:
    """C(Δ) with unit proportionality constant: the steady-state rho_ee."""
    if params.omega == 0:
        return 0.0
    return float(emission_rate_kernel(params.gamma, params.gamma_perp, params.omega, params.delta))


# ============================================================
# LAMBDA PAIR
# ============================================================

def _discriminant(gamma: float, gamma_perp: float, omega_eff: np.ndarray) -> np.ndarray:
    """Ω² - ((Γ - Γ⊥)/2)² in factored form to limit cancellation."""
    b = abs(0.5 * (gamma - gamma_perp))
    return (omega_eff - b) * (omega_eff + b)


def lambda_pair(params: EmitterParams) -> LambdaPair:
    """λ± = -(Γ+Γ⊥)/2 ± q with q = i√(Ω_eff² - ((Γ-Γ⊥)/2)²)."""
    gamma, gp = params.gamma, params.gamma_perp
    disc = float(_discriminant(gamma, gp, np.asarray(params.effective_omega)))
    a = 0.5 * (gamma + gp)
    q = 1j * math.sqrt(disc) if disc > 0 else complex(math.sqrt(-disc), 0.0)
    if abs(q) < CRITICAL_Q_THRESHOLD * (gamma + gp):
        regime = DampingRegime.CRITICALLY_DAMPED
        q = 0j
    elif disc > 0:
        regime = DampingRegime.OSCILLATORY
    else:
        regime = DampingRegime.OVERDAMPED
    return LambdaPair(lambda_plus=-a + q, lambda_minus=-a - q, q=q, regime=regime)


def pulse_envelope_rates(params: EmitterParams) -> Dict[str, float]:
    """Both candidate envelope decay rates of a driven pulse (rad/s)."""
    return {
        "lambda_envelope_rate": 0.5 * (params.gamma + params.gamma_perp),
        "fluorescence_decay_rate": params.gamma,
    }


def pi_pulse_duration(omega: float) -> float:
    if omega <= 0:
        raise InvalidParameterError("a pulse area needs omega > 0")
    return math.pi / omega


def pi_half_pulse_duration(omega: float) -> float:
    return 0.5 * pi_pulse_duration(omega)


# ============================================================
# SECOND-ORDER CORRELATION
# ============================================================

def _g2_kernel(gamma: float, gamma_perp: float, omega_eff: ArrayLike, tau: np.ndarray) -> np.ndarray:
    """Closed-form g²(τ) broadcast as omega_eff[..., None] against tau."""
    omega_eff = np.asarray(omega_eff, dtype=float)[..., None]
    tau = np.abs(np.asarray(tau, dtype=float))
    a = 0.5 * (gamma + gamma_perp)
    disc = _discriminant(gamma, gamma_perp, omega_eff)
    root = np.sqrt(np.abs(disc))
    q = np.where(disc > 0, 1j * root, root + 0j)

    threshold = CRITICAL_Q_THRESHOLD * (gamma + gamma_perp)
    degenerate = np.abs(q) < threshold
    q_safe = np.where(degenerate, threshold + 0j, q)

    lam_plus = -a + q_safe
    lam_minus = -a - q_safe
    term_plus = (lam_minus / (2.0 * q_safe)) * np.exp(tau * lam_plus)
    term_minus = (lam_plus / (2.0 * q_safe)) * np.exp(tau * lam_minus)
    value = 1.0 + term_plus - term_minus

    scale = 1.0 + np.abs(term_plus) + np.abs(term_minus)
    leaking = (np.abs(value.imag) > IMAG_TOLERANCE * scale) & ~degenerate
    if np.any(leaking):
        raise NumericalError("imaginary parts of the correlation law failed to cancel")

    if np.any(degenerate):
        logger.debug("critically damped limit substituted for %d drive value(s)", int(np.count_nonzero(degenerate)))
    limit = 1.0 - (1.0 + a * tau) * np.exp(-a * tau)
    return np.where(degenerate, limit, value.real)


def _shaped(result: np.ndarray, tau: ArrayLike):
    tau_array = np.asarray(tau)
    if tau_array.ndim == 0:
        return float(result.reshape(-1)[0])
    return result.reshape(tau_array.shape)


def g2_resonant(params: EmitterParams, tau: ArrayLike):
    """g²(τ) on resonance.

    Args:
        params: emitter with ``delta == 0``
        tau: delay(s) in seconds; only |τ| matters

    Returns:
        float for scalar tau, otherwise an array shaped like tau
    """
    if params.delta != 0:
        raise InvalidParameterError("g2_resonant needs delta == 0; use g2_detuned or g2_bloch")
    flat = np.atleast_1d(np.asarray(tau, dtype=float)).ravel()
    return _shaped(_g2_kernel(params.gamma, params.gamma_perp, params.omega, flat), tau)


def g2_detuned(params: EmitterParams, tau: ArrayLike):
    """g²(τ) with Ω replaced by the generalized Rabi frequency √(Ω² + Δ²)."""
    flat = np.atleast_1d(np.asarray(tau, dtype=float)).ravel()
    return _shaped(_g2_kernel(params.gamma, params.gamma_perp, params.effective_omega, flat), tau)


def g2_detuned_kernel(params: EmitterParams, deltas: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Substitution-rule g² for many detunings at once, shape (len(deltas), len(tau))."""
    omega_eff = np.hypot(params.omega, np.asarray(deltas, dtype=float))
    return _g2_kernel(params.gamma, params.gamma_perp, omega_eff, np.asarray(tau, dtype=float))


# ============================================================
# EXACT DETUNED CORRELATION FROM THE BLOCH EQUATIONS
# ============================================================

def bloch_matrix(gamma: float, gamma_perp: float, omega: float,
                 delta: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Drift matrices M (..., 3, 3) and constant c (3,) of y' = M y + c."""
    delta = np.asarray(delta, dtype=float)
    matrix = np.zeros(delta.shape + (3, 3))
    matrix[..., 0, 0] = -gamma
    matrix[..., 0, 2] = -omega
    matrix[..., 1, 1] = -gamma_perp
    matrix[..., 1, 2] = -delta
    matrix[..., 2, 0] = omega
    matrix[..., 2, 1] = delta
    matrix[..., 2, 2] = -gamma_perp
    constant = np.array([0.0, 0.0, -0.5 * omega])
    return matrix, constant


def g2_bloch_kernel(params: EmitterParams, deltas: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Exact g²(τ, Δ) = rho_ee(τ)/rho_ee(∞) from the ground state, shape (N, T)."""
    if params.omega <= 0:
        raise InvalidParameterError("g2 is undefined without drive (omega must be > 0)")
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    tau = np.abs(np.atleast_1d(np.asarray(tau, dtype=float)))
    matrices, constant = bloch_matrix(params.gamma, params.gamma_perp, params.omega, deltas)
    steady = np.linalg.solve(matrices, np.broadcast_to(-constant, deltas.shape + (3,))[..., None])[..., 0]

    eigenvalues, vectors = np.linalg.eig(matrices)
    condition = np.linalg.cond(vectors)
    result = np.empty((deltas.size, tau.size))

    well_conditioned = np.isfinite(condition) & (condition < EIGEN_CONDITION_LIMIT)
    if np.any(well_conditioned):
        idx = np.flatnonzero(well_conditioned)
        coefficients = np.linalg.solve(vectors[idx], steady[idx][..., None].astype(complex))[..., 0]
        weights = vectors[idx, 0, :] * coefficients
        decays = np.exp(eigenvalues[idx, :, None] * tau[None, None, :])
        transient = np.einsum("nk,nkt->nt", weights, decays)
        result[idx] = 1.0 - transient.real / steady[idx, 0][:, None]

    for i in np.flatnonzero(~well_conditioned):
        logger.debug("defective Bloch matrix at delta=%.6e; using expm", deltas[i])
        propagators = linalg.expm(matrices[i][None, :, :] * tau[:, None, None])
        excited = steady[i, 0] - (propagators @ steady[i])[:, 0]
        result[i] = excited / steady[i, 0]
    return result


def g2_bloch(params: EmitterParams, tau: ArrayLike):
    """Exact fixed-detuning g²(τ) from the Bloch equations."""
    flat = np.atleast_1d(np.asarray(tau, dtype=float)).ravel()
    return _shaped(g2_bloch_kernel(params, np.array([params.delta]), flat)[0], tau)


# ============================================================
# TIME-DOMAIN INTEGRATION
# ============================================================

def _bloch_rhs(params: EmitterParams, envelope: Optional[PulseEnvelope]):
    gamma, gp, delta = params.gamma, params.gamma_perp, params.delta

    def rhs(t, y):
        omega = params.omega if envelope is None else envelope.omega_at(t, params.omega)
        rho_ee, u, v = y
        return [
            -gamma * rho_ee - omega * v,
            -gp * u - delta * v,
            omega * rho_ee + delta * u - gp * v - 0.5 * omega,
        ]

    return rhs


def _check_invariants(t: np.ndarray, rho_ee: np.ndarray, rho_eg: np.ndarray, tol: float) -> None:
    out_of_range = (rho_ee < -tol) | (rho_ee > 1.0 + tol)
    violation = np.abs(rho_eg) ** 2 - rho_ee * (1.0 - rho_ee) > tol
    bad = np.flatnonzero(out_of_range | violation)
    if bad.size:
        i = int(bad[0])
        raise BlochInvariantError(
            f"unphysical Bloch state rho_ee={rho_ee[i]:.6g}, |rho_eg|^2={abs(rho_eg[i]) ** 2:.6g}", float(t[i])
        )


def evolve_pulse(
    params: EmitterParams,
    envelope: Optional[PulseEnvelope],
    t_grid: ArrayLike,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    initial_state: BlochState = GROUND_STATE,
    invariant_tol: float = 1e-7,
) -> BlochTrajectory:
    """Integrate the optical Bloch equations from t = 0.

    Args:
        params: emitter; Ω is used when ``envelope`` is None or has no peak_omega
        envelope: pulse shape, or None for a constant drive
        t_grid: ordered output times (s), all >= 0
        rtol, atol: integrator tolerances
        initial_state: state at t = 0 (ground state by default)

    Raises:
        IntegrationError: the integrator could not take a step
        BlochInvariantError: the solution left the Bloch ball
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise InvalidParameterError("t_grid must be a non-empty 1-D array")
    if np.any(np.diff(t_grid) < 0):
        raise InvalidParameterError("t_grid must be ordered")
    if t_grid[0] < 0:
        raise InvalidParameterError("t_grid must start at or after t = 0")
    if not (rtol > 0 and atol > 0):
        raise InvalidParameterError("integrator tolerances must be > 0")

    t_end = float(t_grid[-1])
    breaks = [0.0]
    if envelope is not None and envelope.duration < t_end:
        breaks.append(envelope.duration)
    breaks.append(t_end)

    rhs = _bloch_rhs(params, envelope)
    y = np.array([initial_state.rho_ee, initial_state.rho_eg.real, initial_state.rho_eg.imag])
    samples = np.empty((3, t_grid.size))
    filled = 0

    for start, stop in zip(breaks[:-1], breaks[1:]):
        last_segment = stop == t_end
        if last_segment:
            in_segment = (t_grid >= start) & (t_grid <= stop)
        else:
            in_segment = (t_grid >= start) & (t_grid < stop)
        t_eval = t_grid[in_segment]
        if stop > start:
            solution = solve_ivp(rhs, (start, stop), y, method="DOP853", t_eval=None,
                                 dense_output=True, rtol=rtol, atol=atol)
            if not solution.success:
                raise IntegrationError(f"Bloch integration failed: {solution.message}", float(solution.t[-1]))
            if t_eval.size:
                samples[:, filled:filled + t_eval.size] = solution.sol(t_eval)
            y = solution.y[:, -1]
        elif t_eval.size:
            samples[:, filled:filled + t_eval.size] = y[:, None]
        filled += t_eval.size

    rho_ee = samples[0]
    rho_eg = samples[1] + 1j * samples[2]
    _check_invariants(t_grid, rho_ee, rho_eg, invariant_tol)
    logger.debug("integrated Bloch equations over %d grid points", t_grid.size)
    return BlochTrajectory(t=t_grid, rho_ee=rho_ee, rho_eg=rho_eg)


def pulse_train_trace(
    params: EmitterParams,
    envelope: PulseEnvelope,
    period: float = 1e-6,
    bin_width: float = 160e-12,
    *,
    oversample: int = 8,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> Tuple[np.ndarray, np.ndarray]:
    """Detected intensity Γ·rho_ee(t) over one period of a pulse sequence.

    Each bin holds the bin-averaged photon emission rate (photons/s);
    the emitter is assumed to relax fully during the break.

    Returns:
        Tuple of (bin_centers, intensity)
    """
    if period <= envelope.duration:
        raise InvalidParameterError("period must exceed the pulse duration")
    if bin_width <= 0 or oversample < 1:
        raise InvalidParameterError("bin_width must be > 0 and oversample >= 1")
    n_bins = int(math.floor(period / bin_width))
    offsets = (np.arange(oversample) + 0.5) / oversample
    fine = ((np.arange(n_bins)[:, None] + offsets[None, :]) * bin_width).ravel()
    trajectory = evolve_pulse(params, envelope, fine, rtol=rtol, atol=atol)
    intensity = params.gamma * trajectory.rho_ee.reshape(n_bins, oversample).mean(axis=1)
    centers = (np.arange(n_bins) + 0.5) * bin_width
    return centers, intensity
