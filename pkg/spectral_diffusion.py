"""
spectral_diffusion.py — Diffusion-averaged photon correlation
--------------------------------------------------------------
Averages the fixed-detuning g²(τ, Δ) over a quasi-static Gaussian
detuning law. Each detuning is weighted by the square of its emission
rate C(Δ), since a coincidence needs two photons from the same epoch:

    g²(τ) = ∫ p(Δ) C(Δ)² g²(τ, Δ) dΔ / ∫ p(Δ) C(Δ)² dΔ

The result is valid while the detuning stays frozen over the correlation
window (diffusion rate ≪ 1/τ).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.special import roots_hermite

from bloch_dynamics import (
    emission_rate_kernel,
    g2_bloch,
    g2_bloch_kernel,
    g2_detuned,
    g2_detuned_kernel,
    lambda_pair,
    DampingRegime,
)
from cache_manager import memoize
from emitter_types import (
    ArrayLike,
    DetuningDistribution,
    EmitterParams,
    InvalidParameterError,
    QuadratureError,
)

logger = logging.getLogger("coherence.diffusion")

# Detunings evaluated per block; bounds the (nodes x tau) work arrays
CHUNK_SIZE = 2048

# Gauss-Hermite is trusted while the line spans at least this many node spacings
RESOLVED_SPACINGS = 4.0


class QuadratureScheme(str, Enum):
    GAUSS_HERMITE = "gauss_hermite"
    ADAPTIVE_TRAPEZOID = "adaptive_trapezoid"


class CorrelationKernel(str, Enum):
    SUBSTITUTION = "substitution"  # resonant closed form with Ω → √(Ω² + Δ²)
    BLOCH = "bloch"  # exact Bloch-equation correlation


@dataclass(frozen=True)
class QuadratureSpec:
    node_count: int = 64
    scheme: QuadratureScheme = QuadratureScheme.GAUSS_HERMITE
    range_sigmas: float = 8.0
    rtol: float = 1e-8
    max_level: int = 10
    auto_refine: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scheme", QuadratureScheme(self.scheme))
        if self.node_count < 3:
            raise InvalidParameterError(f"node_count must be >= 3, got {self.node_count}")
        if self.scheme is QuadratureScheme.ADAPTIVE_TRAPEZOID and self.range_sigmas < 4:
            raise InvalidParameterError(f"range_sigmas must be >= 4, got {self.range_sigmas}")
        if not self.rtol > 0:
            raise InvalidParameterError("rtol must be > 0")
        if self.max_level < 0:
            raise InvalidParameterError("max_level must be >= 0")


DEFAULT_QUADRATURE = QuadratureSpec()

KernelFunction = Callable[[EmitterParams, np.ndarray, np.ndarray], np.ndarray]


@memoize
def hermite_rule(node_count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss–Hermite nodes and weights normalized to the standard Gaussian."""
    x, w = roots_hermite(node_count)
    nodes = math.sqrt(2.0) * x
    weights = w / math.sqrt(math.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _kernel_function(kernel: Union[CorrelationKernel, str]) -> KernelFunction:
    kernel = CorrelationKernel(kernel)
    if kernel is CorrelationKernel.BLOCH:
        return g2_bloch_kernel
    return g2_detuned_kernel


def _weighted_sums(params: EmitterParams, kernel: KernelFunction, deltas: np.ndarray,
                   weights: np.ndarray, tau: np.ndarray) -> Tuple[np.ndarray, float]:
    """Σ w C² g² and Σ w C² over the given absolute detunings."""
    numerator = np.zeros(tau.size)
    denominator = 0.0
    for start in range(0, deltas.size, CHUNK_SIZE):
        block = deltas[start:start + CHUNK_SIZE]
        c_squared = emission_rate_kernel(params.gamma, params.gamma_perp, params.omega, block) ** 2
        block_weights = weights[start:start + CHUNK_SIZE] * c_squared
        numerator += block_weights @ kernel(params, block, tau)
        denominator += float(block_weights.sum())
    return numerator, denominator


def line_half_width(params: EmitterParams) -> float:
    """Power-broadened half-width of C(Δ) in rad/s."""
    return math.sqrt(params.gamma_perp ** 2 + params.omega ** 2 * params.gamma_perp / params.gamma)


def resolving_rule(params: EmitterParams, dist: DetuningDistribution, quad: QuadratureSpec) -> QuadratureSpec:
    """
    The rule actually used for this line and distribution.

    A Gauss–Hermite rule whose node spacing is coarse next to the
    power-broadened line cannot weight C(Δ)² correctly; with ``auto_refine``
    such requests move to the adaptive trapezoid, otherwise they are kept
    and logged as a warning.
    """
    if quad.scheme is not QuadratureScheme.GAUSS_HERMITE or dist.sigma == 0:
        return quad
    line_width = line_half_width(params)
    node_spacing = dist.sigma * math.pi / math.sqrt(2.0 * quad.node_count)
    if line_width >= RESOLVED_SPACINGS * node_spacing:
        return quad
    if quad.auto_refine:
        logger.debug(
            "line half-width %.3g rad/s spans %.2f Gauss-Hermite spacings; using adaptive_trapezoid",
            line_width, line_width / node_spacing,
        )
        return replace(quad, scheme=QuadratureScheme.ADAPTIVE_TRAPEZOID,
                       range_sigmas=max(quad.range_sigmas, DEFAULT_QUADRATURE.range_sigmas))
    logger.warning(
        "power-broadened line (%.3g rad/s) is not resolved by the Gauss-Hermite node spacing "
        "(%.3g rad/s); consider the adaptive_trapezoid scheme", line_width, node_spacing
    )
    return quad


def _gauss_hermite(params, dist, tau, quad, kernel):
    nodes, weights = hermite_rule(quad.node_count)
    deltas = params.delta + dist.mean + dist.sigma * nodes
    numerator, denominator = _weighted_sums(params, kernel, deltas, weights, tau)
    return numerator / denominator


def _adaptive_trapezoid(params, dist, tau, quad, kernel):
    half_width = quad.range_sigmas * dist.sigma
    center = params.delta + dist.mean
    intervals = quad.node_count - 1

    grid = np.linspace(-half_width, half_width, intervals + 1)
    edge_weights = np.ones(grid.size)
    edge_weights[[0, -1]] = 0.5
    numerator, denominator = _weighted_sums(params, kernel, center + grid, edge_weights * dist.pdf(grid + dist.mean), tau)
    step = grid[1] - grid[0]
    estimate = numerator / denominator
    change = math.inf

    for level in range(1, quad.max_level + 1):
        midpoints = -half_width + step * (np.arange(intervals) + 0.5)
        extra_num, extra_den = _weighted_sums(params, kernel, center + midpoints,
                                              dist.pdf(midpoints + dist.mean), tau)
        numerator = numerator + extra_num
        denominator = denominator + extra_den
        intervals *= 2
        step *= 0.5
        refined = numerator / denominator
        change = float(np.max(np.abs(refined - estimate)) / max(1.0, float(np.max(np.abs(refined)))))
        estimate = refined
        logger.debug("adaptive quadrature level %d: %d intervals, change %.3e", level, intervals, change)
        if change < quad.rtol:
            return estimate

    raise QuadratureError(
        f"adaptive quadrature did not reach rtol={quad.rtol:g} after {quad.max_level} refinements",
        change,
    )


def g2_diffused(
    params: EmitterParams,
    dist: DetuningDistribution,
    tau: ArrayLike,
    quad: Optional[QuadratureSpec] = None,
    *,
    kernel: Union[CorrelationKernel, str] = CorrelationKernel.SUBSTITUTION,
):
    """
    Diffusion-averaged g²(τ), normalized so that g²(∞) = 1.

    Args:
        params: emitter; its own delta shifts the whole detuning law
        dist: quasi-static Gaussian detuning distribution
        tau: delay(s) in seconds
        quad: quadrature settings (64-node Gauss–Hermite by default,
            refined automatically when the line is narrower than its nodes)
        kernel: fixed-detuning correlation inside the integral

    Returns:
        float for scalar tau, otherwise an array shaped like tau

    Raises:
        QuadratureError: adaptive refinement did not converge
    """
    quad = quad or DEFAULT_QUADRATURE
    kernel = CorrelationKernel(kernel)
    shifted = params.with_detuning(params.delta + dist.mean)

    if dist.is_resonant:
        if kernel is CorrelationKernel.BLOCH:
            return g2_bloch(shifted, tau)
        return g2_detuned(shifted, tau)
    if params.omega <= 0:
        raise InvalidParameterError("diffusion averaging needs omega > 0 (no emission otherwise)")

    tau_array = np.asarray(tau, dtype=float)
    flat = np.atleast_1d(tau_array).ravel()
    evaluate = _kernel_function(kernel)
    quad = resolving_rule(params, dist, quad)

    # the integrators shift by params.delta + mean themselves
    if quad.scheme is QuadratureScheme.GAUSS_HERMITE:
        result = _gauss_hermite(params, dist, flat, quad, evaluate)
    else:
        result = _adaptive_trapezoid(params, dist, flat, quad, evaluate)

    if tau_array.ndim == 0:
        return float(result[0])
    return result.reshape(tau_array.shape)


# ============================================================
# CONTRAST
# ============================================================

def _first_swing(curve: np.ndarray) -> Optional[Tuple[int, int]]:
    """Indices of the first local maximum and the local minimum after it."""
    rising = np.diff(curve)
    peaks = np.flatnonzero((rising[:-1] > 0) & (rising[1:] <= 0)) + 1
    if peaks.size == 0:
        return None
    peak = int(peaks[0])
    after = rising[peak:]
    dips = np.flatnonzero((after[:-1] < 0) & (after[1:] >= 0)) + peak + 1
    if dips.size == 0:
        return None
    return peak, int(dips[0])


def contrast_reduction(
    params: EmitterParams,
    dist: DetuningDistribution,
    quad: Optional[QuadratureSpec] = None,
    *,
    kernel: Union[CorrelationKernel, str] = CorrelationKernel.SUBSTITUTION,
    samples: int = 2001,
) -> float:
    """
    First-oscillation contrast of the averaged curve relative to the
    diffusion-free one. 1 at sigma = 0 and for non-oscillating curves.

    Both curves are read at the delays of the diffusion-free first maximum
    and the minimum after it.
    """
    if dist.is_resonant:
        return 1.0
    reference = params.with_detuning(params.delta + dist.mean)
    pair = lambda_pair(reference)
    if pair.regime is not DampingRegime.OSCILLATORY:
        logger.debug("no Rabi oscillation at these parameters; contrast taken as 1")
        return 1.0

    period = 2.0 * math.pi / pair.oscillation_frequency
    tau = np.linspace(0.0, 3.0 * period, samples)
    sharp = g2_diffused(params, DetuningDistribution(sigma=0.0, mean=dist.mean), tau, quad, kernel=kernel)
    extrema = _first_swing(sharp)
    if extrema is None:
        return 1.0
    peak, dip = extrema
    reference_swing = float(sharp[peak] - sharp[dip])
    if reference_swing <= 0:
        return 1.0

    averaged = g2_diffused(params, dist, tau[[peak, dip]], quad, kernel=kernel)
    ratio = float(averaged[0] - averaged[1]) / reference_swing
    if ratio <= 0:
        logger.warning("averaged curve is out of phase with the diffusion-free oscillation (ratio %.3g)", ratio)
    return min(1.0, ratio)
