"""
photon_simulator.py — Monte Carlo photon streams and correlators
-----------------------------------------------------------------
Stochastic counterpart of the analytic modules:

- photon streams from the quantum-jump unraveling of the driven emitter,
  with frozen or jumping spectral diffusion, detector thinning and
  optional uniform background
- full (start–stop-free) coincidence histograms of a stream
- a quasi-static Monte Carlo estimate of the diffusion-averaged g²
- wave-function trajectory ensembles for pulsed driving

Every stochastic result is a pure function of its inputs and seed.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy import linalg

from bloch_dynamics import PulseEnvelope, emission_rate_kernel, g2_bloch, g2_bloch_kernel, g2_detuned, g2_detuned_kernel
from cache_manager import memoize
from emitter_types import (
    ArrayLike,
    CorrelationCurve,
    DetuningDistribution,
    EmitterParams,
    InvalidParameterError,
    _readonly,
)

logger = logging.getLogger("coherence.montecarlo")

MAX_SEED = 2 ** 64

# Waiting-time tables: the fast transients are followed for this many e-folds
TRANSIENT_EFOLDS = 40.0
POINTS_PER_OSCILLATION = 32
MAX_TABLE_POINTS = 2 ** 18

QUASI_STATIC_CHUNK = 4096
MIN_QUASI_STATIC_SAMPLES = 100


# ============================================================
# DATA CLASSES
# ============================================================

class DiffusionKind(str, Enum):
    FROZEN_GAUSSIAN = "frozen_gaussian"
    JUMP_PROCESS = "jump_process"


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < MAX_SEED:
        raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


@dataclass(frozen=True)
class DiffusionProcess:
    """Detuning process seen by the emitter.

    ``frozen_gaussian`` draws one detuning per epoch of ``epoch_duration``
    (one epoch for the whole stream when None). ``jump_process`` redraws
    from the same Gaussian after exponentially distributed epochs of mean
    1/jump_rate, so its stationary law is that Gaussian.
    """

    kind: DiffusionKind = DiffusionKind.FROZEN_GAUSSIAN
    sigma: float = 0.0
    jump_rate: float = 0.0
    seed: int = 0
    epoch_duration: Optional[float] = None
    mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DiffusionKind(self.kind))
        object.__setattr__(self, "seed", _check_seed(self.seed))
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidParameterError(f"sigma must be finite and >= 0, got {self.sigma}")
        if not (math.isfinite(self.jump_rate) and self.jump_rate >= 0):
            raise InvalidParameterError(f"jump_rate must be finite and >= 0, got {self.jump_rate}")
        if self.epoch_duration is not None and not self.epoch_duration > 0:
            raise InvalidParameterError("epoch_duration must be > 0 when given")
        if not math.isfinite(self.mean):
            raise InvalidParameterError("mean detuning must be finite")

    @property
    def distribution(self) -> DetuningDistribution:
        return DetuningDistribution(sigma=self.sigma, mean=self.mean)


@dataclass(frozen=True)
class PhotonStream:
    arrival_times: np.ndarray = field(repr=False)
    total_duration: float
    seed: int = 0

    def __post_init__(self):
        times = _readonly(self.arrival_times)
        object.__setattr__(self, "arrival_times", times)
        if not self.total_duration > 0:
            raise InvalidParameterError("total_duration must be > 0")
        if times.ndim != 1:
            raise InvalidParameterError("arrival_times must be 1-D")
        if times.size:
            if times[0] < 0 or times[-1] > self.total_duration:
                raise InvalidParameterError("arrival times must lie within [0, total_duration]")
            if np.any(np.diff(times) <= 0):
                raise InvalidParameterError("arrival times must be strictly increasing")

    def __len__(self) -> int:
        return int(self.arrival_times.size)

    @property
    def mean_rate(self) -> float:
        return len(self) / self.total_duration

    @property
    def rate_stderr(self) -> float:
        return math.sqrt(max(len(self), 1)) / self.total_duration

    def to_dict(self) -> Dict[str, object]:
        return {
            "photons": len(self),
            "total_duration_s": self.total_duration,
            "mean_rate_hz": self.mean_rate,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class QuasiStaticEstimate:
    tau: np.ndarray = field(repr=False)
    g2: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    n_samples: int = 0


@dataclass(frozen=True)
class TrajectoryEnsemble:
    t: np.ndarray = field(repr=False)
    rho_ee: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    n_trajectories: int = 0


@dataclass(frozen=True)
class GoodnessOfFit:
    chi_square: float
    dof: int

    @property
    def reduced(self) -> float:
        return self.chi_square / self.dof if self.dof > 0 else math.nan


# ============================================================
# WAITING-TIME DISTRIBUTION
# ============================================================

def no_emission_matrix(gamma: float, gamma_perp: float, omega: float, delta: float) -> np.ndarray:
    """Conditional evolution without recycling, y = [rho_ee, rho_gg, u, v]."""
    return np.array([
        [-gamma, 0.0, 0.0, -omega],
        [0.0, 0.0, 0.0, omega],
        [0.0, 0.0, -gamma_perp, -delta],
        [0.5 * omega, -0.5 * omega, delta, -gamma_perp],
    ])


@dataclass(frozen=True)
class WaitingTimeTable:
    """Inverse-CDF table of the delay between emissions, plus an exponential tail."""

    times: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)
    tail_rate: float = 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def tail_survival(self) -> float:
        return float(1.0 - self.cdf[-1])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        waits = np.interp(u, self.cdf, self.times)
        in_tail = u > self.cdf[-1]
        if np.any(in_tail):
            remaining = 1.0 - u[in_tail]
            waits[in_tail] = self.horizon + np.log(self.tail_survival / remaining) / self.tail_rate
        return waits


def build_waiting_time_table(gamma: float, gamma_perp: float, omega: float, delta: float) -> WaitingTimeTable:
    """Tabulate the emission-to-emission delay distribution at fixed detuning."""
    if omega <= 0:
        raise InvalidParameterError("no emission without drive (omega must be > 0)")
    matrix = no_emission_matrix(gamma, gamma_perp, omega, delta)
    eigenvalues, vectors = np.linalg.eig(matrix)
    rates = -eigenvalues.real
    order = np.argsort(rates)
    slow_rate = float(rates[order[0]])
    if not slow_rate > 0:
        raise InvalidParameterError("conditional evolution does not decay; check the rates")

    separated = rates[order[1:]] > slow_rate * (1.0 + 1e-6)
    slow_is_real = abs(eigenvalues[order[0]].imag) <= 1e-12 * abs(eigenvalues[order[0]])
    if slow_is_real and np.any(separated):
        horizon = TRANSIENT_EFOLDS / float(np.min(rates[order[1:]][separated]))
    else:
        horizon = TRANSIENT_EFOLDS / slow_rate

    max_frequency = float(np.max(np.abs(eigenvalues.imag)))
    step = 1.0 / (16.0 * float(np.max(rates)))
    if max_frequency > 0:
        step = min(step, 2.0 * math.pi / (POINTS_PER_OSCILLATION * max_frequency))
    n_points = int(min(MAX_TABLE_POINTS, math.ceil(horizon / step) + 1))
    if n_points == MAX_TABLE_POINTS:
        logger.debug("waiting-time table capped at %d points", MAX_TABLE_POINTS)
    times = np.linspace(0.0, horizon, n_points)

    initial = np.array([0.0, 1.0, 0.0, 0.0])
    if np.linalg.cond(vectors) < 1e8:
        coefficients = np.linalg.solve(vectors, initial.astype(complex))
        weights = (vectors[0] + vectors[1]) * coefficients
        survival = (np.exp(np.outer(times, eigenvalues)) @ weights).real
    else:
        propagator = linalg.expm(matrix * (times[1] - times[0]))
        state = initial.copy()
        survival = np.empty(n_points)
        for i in range(n_points):
            survival[i] = state[0] + state[1]
            state = propagator @ state

    survival = np.minimum.accumulate(np.clip(survival, 0.0, 1.0))
    cdf = 1.0 - survival
    cdf.setflags(write=False)
    times.setflags(write=False)
    return WaitingTimeTable(times=times, cdf=cdf, tail_rate=slow_rate)


# Memoized for fixed-detuning streams; diffusion epochs call the builder directly.
waiting_time_table = memoize(build_waiting_time_table)


# ============================================================
# PHOTON STREAMS
# ============================================================

def _epochs(proc: DiffusionProcess, params: EmitterParams, duration: float,
            rng: np.random.Generator) -> Iterator[Tuple[float, float]]:
    """Yield (epoch_end, absolute detuning) until the stream duration is covered."""
    center = params.delta + proc.mean

    def draw() -> float:
        return center + proc.sigma * float(rng.standard_normal()) if proc.sigma > 0 else center

    if proc.kind is DiffusionKind.JUMP_PROCESS and proc.jump_rate > 0:
        end = 0.0
        while end < duration:
            end += float(rng.exponential(1.0 / proc.jump_rate))
            yield min(end, duration), draw()
        return
    length = duration if proc.epoch_duration is None else proc.epoch_duration
    end = 0.0
    while end < duration:
        end += length
        yield min(end, duration), draw()


def _renewal_times(table: WaitingTimeTable, rng: np.random.Generator, start: float,
                   stop: float, rate_hint: float) -> np.ndarray:
    """Emissions after ``start`` up to and including the first one at or past ``stop``."""
    batch = int(min(max(64.0, 1.1 * rate_hint * (stop - start) + 64.0), 2_000_000))
    pieces: List[np.ndarray] = []
    t = start
    while True:
        times = t + np.cumsum(table.sample(rng, batch))
        k = int(np.searchsorted(times, stop))
        if k < batch:
            pieces.append(times[:k + 1])
            return np.concatenate(pieces)
        pieces.append(times)
        t = float(times[-1])


def simulate_stream(
    params: EmitterParams,
    proc: DiffusionProcess,
    duration: float,
    detection_efficiency: float = 1.0,
    *,
    background_rate: float = 0.0,
) -> PhotonStream:
    """
    Simulate detected photon arrival times.

    Emissions form a renewal process: after each emission the emitter is in
    the ground state and the next delay is drawn from the no-emission
    conditional evolution. An emission in flight across an epoch boundary
    keeps the detuning it started with.

    Args:
        params: emitter; its delta offsets every drawn detuning
        proc: detuning process (its seed fixes the whole stream)
        duration: stream length (s)
        detection_efficiency: probability that an emitted photon is detected
        background_rate: uniform background counts per second

    Returns:
        PhotonStream of detected arrival times
    """
    if not duration > 0:
        raise InvalidParameterError(f"duration must be > 0, got {duration}")
    if not 0 < detection_efficiency <= 1:
        raise InvalidParameterError(f"detection_efficiency must be in (0, 1], got {detection_efficiency}")
    if not (math.isfinite(background_rate) and background_rate >= 0):
        raise InvalidParameterError("background_rate must be finite and >= 0")

    epoch_seq, emission_seq, detect_seq, background_seq = np.random.SeedSequence(proc.seed).spawn(4)
    pieces: List[np.ndarray] = []

    if params.omega > 0:
        epoch_rng = np.random.default_rng(epoch_seq)
        emission_rng = np.random.default_rng(emission_seq)
        table_for = waiting_time_table if proc.sigma == 0 else build_waiting_time_table
        t = 0.0
        n_epochs = 0
        for epoch_end, delta in _epochs(proc, params, duration, epoch_rng):
            n_epochs += 1
            if t >= epoch_end:
                continue
            table = table_for(params.gamma, params.gamma_perp, params.omega, delta)
            rate = params.gamma * float(emission_rate_kernel(params.gamma, params.gamma_perp, params.omega, delta))
            times = _renewal_times(table, emission_rng, t, epoch_end, rate)
            pieces.append(times)
            t = float(times[-1])
            if t >= duration:
                break
        logger.debug("stream used %d detuning epoch(s)", n_epochs)

    emitted = np.concatenate(pieces) if pieces else np.empty(0)
    emitted = emitted[emitted <= duration]
    if detection_efficiency < 1:
        keep = np.random.default_rng(detect_seq).random(emitted.size) < detection_efficiency
        emitted = emitted[keep]

    if background_rate > 0:
        background_rng = np.random.default_rng(background_seq)
        n_background = int(background_rng.poisson(background_rate * duration))
        emitted = np.concatenate([emitted, background_rng.uniform(0.0, duration, n_background)])

    arrivals = np.unique(emitted)
    logger.info("simulated %d detected photons over %.3g s", arrivals.size, duration)
    return PhotonStream(arrival_times=arrivals, total_duration=duration, seed=proc.seed)


# ============================================================
# CORRELATION
# ============================================================

def correlate(stream: PhotonStream, bin_width: float, max_tau: float) -> CorrelationCurve:
    """
    Full coincidence histogram of all ordered photon pairs.

    Bins are centred on k·bin_width for |k| ≤ floor(max_tau/bin_width); the
    result is normalized so that the outer 20 % of the τ range averages 1.
    """
    if not bin_width > 0:
        raise InvalidParameterError(f"bin_width must be > 0, got {bin_width}")
    if not max_tau >= bin_width:
        raise InvalidParameterError("max_tau must be >= bin_width")
    if len(stream) < 2:
        raise InvalidParameterError("correlation needs at least two photons")

    n_side = int(math.floor(max_tau / bin_width + 1e-9))
    limit = (n_side + 0.5) * bin_width
    counts = np.zeros(2 * n_side + 1)
    times = stream.arrival_times

    lag = 1
    while lag < times.size:
        differences = times[lag:] - times[:-lag]
        close = differences[differences < limit]
        if close.size == 0:
            break
        index = np.floor(close / bin_width + 0.5).astype(np.int64)
        histogram = np.bincount(index, minlength=n_side + 1)[:n_side + 1]
        counts[n_side:] += histogram
        counts[:n_side + 1] += histogram[::-1]
        lag += 1

    tau_bins = np.arange(-n_side, n_side + 1) * bin_width
    logger.debug("correlated %d photons over %d lags", len(stream), lag - 1)
    return CorrelationCurve.from_counts(tau_bins, counts, bin_width)


def binned_model(model, curve: CorrelationCurve, oversample: int = 9) -> np.ndarray:
    """Average a g²(τ) model over each histogram bin."""
    offsets = (np.arange(oversample) + 0.5) / oversample - 0.5
    tau = curve.tau_bins[:, None] + offsets[None, :] * curve.bin_width
    return np.asarray(model(tau.ravel()), dtype=float).reshape(tau.shape).mean(axis=1)


def poisson_chi_square(curve: CorrelationCurve, model_g2: ArrayLike) -> GoodnessOfFit:
    """Pearson χ² of the histogram counts against model g² values per bin."""
    model_g2 = np.asarray(model_g2, dtype=float)
    if model_g2.shape != curve.counts.shape:
        raise InvalidParameterError("model_g2 must have one value per histogram bin")
    expected = model_g2 / curve.normalization
    variance = np.maximum(expected, 1.0)
    chi_square = float(np.sum((curve.counts - expected) ** 2 / variance))
    # the plateau normalization is estimated from the same counts
    return GoodnessOfFit(chi_square=chi_square, dof=int(curve.counts.size - 1))


# ============================================================
# QUASI-STATIC MONTE CARLO
# ============================================================

def quasi_static_average(
    params: EmitterParams,
    dist: DetuningDistribution,
    tau_grid: ArrayLike,
    n_samples: int,
    seed: int,
    *,
    kernel: str = "substitution",
) -> QuasiStaticEstimate:
    """
    Monte Carlo estimate of the diffusion-averaged g²: Δ ~ Gaussian, each
    sample weighted by C(Δ)², ratio estimator with delta-method errors.
    """
    tau = np.atleast_1d(np.asarray(tau_grid, dtype=float)).ravel()
    if n_samples < MIN_QUASI_STATIC_SAMPLES:
        raise InvalidParameterError(f"n_samples must be >= {MIN_QUASI_STATIC_SAMPLES}, got {n_samples}")
    seed = _check_seed(seed)
    exact = kernel == "bloch"
    shifted = params.with_detuning(params.delta + dist.mean)

    if dist.is_resonant:
        values = g2_bloch(shifted, tau) if exact else g2_detuned(shifted, tau)
        return QuasiStaticEstimate(tau=tau, g2=np.asarray(values), stderr=np.zeros(tau.size), n_samples=n_samples)
    if params.omega <= 0:
        raise InvalidParameterError("diffusion averaging needs omega > 0")

    evaluate = g2_bloch_kernel if exact else g2_detuned_kernel
    deltas = shifted.delta + dist.sigma * np.random.default_rng(seed).standard_normal(n_samples)
    weights = emission_rate_kernel(params.gamma, params.gamma_perp, params.omega, deltas) ** 2

    total_weight = float(weights.sum())
    weighted = np.zeros(tau.size)
    for start in range(0, n_samples, QUASI_STATIC_CHUNK):
        block = slice(start, start + QUASI_STATIC_CHUNK)
        weighted += weights[block] @ evaluate(params, deltas[block], tau)
    estimate = weighted / total_weight

    # second pass for the spread around the ratio estimate
    spread = np.zeros(tau.size)
    for start in range(0, n_samples, QUASI_STATIC_CHUNK):
        block = slice(start, start + QUASI_STATIC_CHUNK)
        residual = evaluate(params, deltas[block], tau) - estimate[None, :]
        spread += (weights[block] ** 2) @ (residual ** 2)
    mean_weight = total_weight / n_samples
    stderr = np.sqrt(spread / (n_samples * (n_samples - 1))) / mean_weight
    logger.info("quasi-static average from %d samples", n_samples)
    return QuasiStaticEstimate(tau=tau, g2=estimate, stderr=stderr, n_samples=n_samples)


# ============================================================
# WAVE-FUNCTION TRAJECTORIES
# ============================================================

def _step_propagators(params: EmitterParams, envelope: Optional[PulseEnvelope],
                      t_grid: np.ndarray, substeps: int) -> Tuple[np.ndarray, int]:
    """Non-unitary propagators, one per substep, in the (g, e) basis."""
    decay = params.gamma + 2.0 * params.gamma_c
    intervals = np.diff(t_grid)
    if intervals.size:
        substeps = max(substeps, int(math.ceil(float(np.max(intervals)) * decay * 20.0)))
    fractions = (np.arange(substeps) + 0.5) / substeps
    midpoints = (t_grid[:-1, None] + intervals[:, None] * fractions[None, :]).ravel()
    dt = np.repeat(intervals / substeps, substeps)
    if envelope is None:
        omegas = np.full(midpoints.size, params.omega)
    else:
        omegas = np.array([envelope.omega_at(t, params.omega) for t in midpoints])

    hamiltonians = np.zeros((midpoints.size, 2, 2), dtype=complex)
    hamiltonians[:, 0, 1] = 0.5 * omegas
    hamiltonians[:, 1, 0] = 0.5 * omegas
    hamiltonians[:, 1, 1] = -params.delta - 0.5j * decay
    return linalg.expm(-1j * hamiltonians * dt[:, None, None]), substeps


def _trajectory_chunk(propagators: np.ndarray, substeps: int, n_times: int, n_trajectories: int,
                      emission_fraction: float, seed_seq: np.random.SeedSequence) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed_seq)
    psi = np.zeros((n_trajectories, 2), dtype=complex)
    psi[:, 0] = 1.0
    threshold = rng.random(n_trajectories)
    sums = np.zeros(n_times)
    squares = np.zeros(n_times)

    for step, propagator in enumerate(propagators):
        psi = psi @ propagator.T
        norm = np.sum(np.abs(psi) ** 2, axis=1)
        jumped = norm < threshold
        if np.any(jumped):
            emitted = rng.random(int(jumped.sum())) < emission_fraction
            reset = np.zeros((emitted.size, 2), dtype=complex)
            reset[emitted, 0] = 1.0
            reset[~emitted, 1] = 1.0
            psi[jumped] = reset
            threshold[jumped] = rng.random(emitted.size)
        if (step + 1) % substeps == 0:
            index = (step + 1) // substeps
            population = np.abs(psi[:, 1]) ** 2 / np.sum(np.abs(psi) ** 2, axis=1)
            sums[index] += population.sum()
            squares[index] += np.sum(population ** 2)
    return sums, squares


def simulate_trajectories(
    params: EmitterParams,
    envelope: Optional[PulseEnvelope],
    t_grid: ArrayLike,
    n_trajectories: int,
    seed: int,
    *,
    workers: int = 1,
    chunk_size: int = 1000,
    substeps: int = 4,
) -> TrajectoryEnsemble:
    """
    Ensemble-averaged excited population from quantum-jump trajectories.

    Jump channels are spontaneous emission (rate Γ, resets to ground) and
    pure dephasing (rate 2γc on the excited projector). Trajectory chunks get
    sub-seeds spawned from ``seed`` and are summed in chunk order, so the
    result does not depend on ``workers``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise InvalidParameterError("t_grid must be strictly increasing and start at 0")
    if n_trajectories < 2:
        raise InvalidParameterError("n_trajectories must be >= 2")
    if workers < 1 or chunk_size < 1 or substeps < 1:
        raise InvalidParameterError("workers, chunk_size and substeps must be >= 1")
    seed = _check_seed(seed)

    propagators, substeps = _step_propagators(params, envelope, t_grid, substeps)
    emission_fraction = params.gamma / (params.gamma + 2.0 * params.gamma_c)
    sizes = [min(chunk_size, n_trajectories - start) for start in range(0, n_trajectories, chunk_size)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(job: Tuple[int, np.random.SeedSequence]):
        size, seed_seq = job
        return _trajectory_chunk(propagators, substeps, t_grid.size, size, emission_fraction, seed_seq)

    if workers == 1:
        results = [run(job) for job in zip(sizes, seeds)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, zip(sizes, seeds)))

    sums = np.zeros(t_grid.size)
    squares = np.zeros(t_grid.size)
    for chunk_sums, chunk_squares in results:
        sums += chunk_sums
        squares += chunk_squares

    mean = sums / n_trajectories
    variance = np.maximum(squares / n_trajectories - mean ** 2, 0.0) * n_trajectories / (n_trajectories - 1)
    stderr = np.sqrt(variance / n_trajectories)
    logger.info("averaged %d quantum-jump trajectories over %d grid times", n_trajectories, t_grid.size)
    return TrajectoryEnsemble(t=t_grid, rho_ee=mean, stderr=stderr, n_trajectories=n_trajectories)
