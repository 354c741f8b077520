"""Drive envelopes: coherent pulse trains, cw, and noisy pulses obeying a Gaussian two-time correlation."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy.fft import next_fast_len
from scipy.interpolate import CubicSpline

from vee_coherence.errors import EmptyEnsemble, GridMismatch, GridTooCoarse, GridTooShort, InvalidSpec, OutOfGrid
from vee_coherence.state import TimeGrid

LOGGER = logging.getLogger(__name__)

INFINITE_DECORRELATION_FS = 1e6
PULSE_COVERAGE_WIDTHS = 5.0
PULSE_RESOLUTION = 50.0
KERNEL_RESOLUTION = 20.0
# Extra FFT padding, in units of tau_d, that keeps circular wrap-around out of the kept samples.
KERNEL_PADDING_WIDTHS = 12.0

Profile = Callable[[np.ndarray], np.ndarray]


class NoiseSharing(str, Enum):
    SHARED = "shared"
    INDEPENDENT = "independent"


@dataclass(frozen=True)
class PulseTrainSpec:
    amplitude_scale: float
    tau_p: float
    centers: tuple[float, ...]

    kind = "pulse_train"


@dataclass(frozen=True)
class CwSpec:
    amplitude_scale: float
    detuning_from_midpoint: float = 0.0

    kind = "cw"


@dataclass(frozen=True)
class NoisyPulseSpec:
    amplitude_scale: float
    tau_p: float
    tau_d: float
    centers: tuple[float, ...]
    carrier_offset: float = 0.0
    noise_sharing: NoiseSharing = NoiseSharing.SHARED

    kind = "noisy_pulse"


FieldSpec = Union[PulseTrainSpec, CwSpec, NoisyPulseSpec]


@dataclass(frozen=True)
class SampledField:
    grid: TimeGrid
    values: np.ndarray
    seed: Optional[int] = None
    realization: Optional[int] = None
    profile: Optional[Profile] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.values.shape != (self.grid.n_points,):
            raise ValueError(f"field has {self.values.shape} samples, grid needs {self.grid.n_points}")

    def value_at(self, t: float) -> complex:
        return complex(self.values_at(np.asarray([t]))[0])

    def values_at(self, times: np.ndarray) -> np.ndarray:
        """Exact nodes are returned as stored; other points use the profile or a cubic spline."""
        times = np.asarray(times, dtype=float)
        tolerance = 1e-9 * self.grid.dt
        if np.any(times < self.grid.t_start - tolerance) or np.any(times > self.grid.t_end + tolerance):
            raise OutOfGrid(f"times outside field grid [{self.grid.t_start}, {self.grid.t_end}] fs")
        positions = (times - self.grid.t_start) / self.grid.dt
        nearest = np.rint(positions)
        on_node = np.abs(positions - nearest) < 1e-9
        result = np.empty(times.shape, dtype=np.complex128)
        result[on_node] = self.values[nearest[on_node].astype(int)]
        off = ~on_node
        if np.any(off):
            if self.profile is not None:
                result[off] = self.profile(times[off])
            else:
                result[off] = self._interpolant(times[off])
        return result

    @cached_property
    def _interpolant(self) -> Callable[[np.ndarray], np.ndarray]:
        real = CubicSpline(self.grid.times, self.values.real)
        imag = CubicSpline(self.grid.times, self.values.imag)
        return lambda t: real(t) + 1j * imag(t)

    def midpoint_values(self, substeps: int = 1) -> np.ndarray:
        """Values at every half sub-step: shape (n_steps * substeps, 2) for (t + h/2, t + h) offsets."""
        h = self.grid.dt / substeps
        starts = self.grid.t_start + h * np.arange(self.grid.n_steps * substeps, dtype=float)
        queried = self.values_at(np.concatenate([starts + 0.5 * h, starts + h]))
        return np.stack(np.split(queried, 2), axis=-1)


def gaussian_train(times: np.ndarray, tau_p: float, centers: Sequence[float]) -> np.ndarray:
    total = np.zeros_like(times, dtype=float)
    for center in centers:
        total = total + np.exp(-((times - center) ** 2) / tau_p**2)
    return total


def fwhm(tau_p: float) -> float:
    return 2.0 * math.sqrt(math.log(2.0)) * tau_p


def eval_pulse_train(spec: PulseTrainSpec, grid: TimeGrid) -> SampledField:
    _check_pulse_spec(spec.tau_p, spec.centers)
    _check_pulse_grid(grid, spec.tau_p, spec.centers)

    def profile(times: np.ndarray) -> np.ndarray:
        return (spec.amplitude_scale * gaussian_train(times, spec.tau_p, spec.centers)).astype(np.complex128)

    return SampledField(grid=grid, values=profile(grid.times), profile=profile)


def eval_cw(spec: CwSpec, grid: TimeGrid) -> SampledField:
    def profile(times: np.ndarray) -> np.ndarray:
        if spec.detuning_from_midpoint == 0.0:
            return np.full(times.shape, spec.amplitude_scale, dtype=np.complex128)
        return spec.amplitude_scale * np.exp(-1j * spec.detuning_from_midpoint * times)

    return SampledField(grid=grid, values=profile(grid.times), profile=profile)


def realization_seed(base_seed: int, index: int) -> SeedSequence:
    """seed_k = split(base_seed, k): the k-th child of SeedSequence(base_seed)."""
    return SeedSequence(entropy=base_seed, spawn_key=(index,))


def make_generator(seed: int | SeedSequence) -> Generator:
    sequence = seed if isinstance(seed, SeedSequence) else SeedSequence(seed)
    return Generator(Philox(sequence))


def synthesize_noisy_pulse(spec: NoisyPulseSpec, grid: TimeGrid, seed: int | SeedSequence) -> SampledField:
    _check_noisy_spec(spec)
    _check_pulse_grid(grid, spec.tau_p, spec.centers, check_coverage=False)
    if grid.dt > spec.tau_d / KERNEL_RESOLUTION:
        raise GridTooCoarse(f"dt={grid.dt} fs does not resolve tau_d={spec.tau_d} fs (need dt <= tau_d/{KERNEL_RESOLUTION:g})")

    rng = make_generator(seed)
    times = grid.times
    if spec.noise_sharing is NoiseSharing.SHARED:
        envelope = gaussian_train(times, spec.tau_p, spec.centers)
        values = envelope * stationary_gaussian_noise(grid, spec.tau_d, rng)
    else:
        values = np.zeros(grid.n_points, dtype=np.complex128)
        for center in spec.centers:
            values = values + gaussian_train(times, spec.tau_p, (center,)) * stationary_gaussian_noise(grid, spec.tau_d, rng)
    values = spec.amplitude_scale * values
    if spec.carrier_offset != 0.0:
        values = values * np.exp(-1j * spec.carrier_offset * times)
    base_seed, realization = _seed_origin(seed)
    return SampledField(grid=grid, values=values, seed=base_seed, realization=realization)


def stationary_gaussian_noise(grid: TimeGrid, tau_d: float, rng: Generator) -> np.ndarray:
    """Circular complex Gaussian process with <xi(t) xi*(t+s)> = exp(-s^2 / (2 tau_d^2))."""
    n_points = grid.n_points
    if tau_d >= INFINITE_DECORRELATION_FS:
        return np.full(n_points, _complex_normal(rng, 1)[0])

    pad = int(math.ceil(KERNEL_PADDING_WIDTHS * tau_d / grid.dt))
    size = next_fast_len(n_points + pad)
    lags = np.arange(size, dtype=float)
    lags = np.minimum(lags, size - lags) * grid.dt
    kernel = np.exp(-(lags**2) / (2.0 * tau_d**2))
    spectrum = np.clip(np.fft.fft(kernel).real, 0.0, None)
    white = _complex_normal(rng, size)
    noise = math.sqrt(size) * np.fft.ifft(np.sqrt(spectrum) * white)
    return noise[:n_points]


def analytic_correlation(spec: NoisyPulseSpec, t_a: float, t_b: float) -> complex:
    """Closed-form <eps(t_a) eps*(t_b)> for the noisy-pulse ensemble."""
    if spec.noise_sharing is NoiseSharing.SHARED:
        envelope = float(gaussian_train(np.asarray([t_a]), spec.tau_p, spec.centers)[0]) * float(
            gaussian_train(np.asarray([t_b]), spec.tau_p, spec.centers)[0]
        )
    else:
        envelope = sum(
            float(gaussian_train(np.asarray([t_a]), spec.tau_p, (c,))[0]) * float(gaussian_train(np.asarray([t_b]), spec.tau_p, (c,))[0])
            for c in spec.centers
        )
    separation = t_b - t_a
    kernel = 1.0 if spec.tau_d >= INFINITE_DECORRELATION_FS else math.exp(-(separation**2) / (2.0 * spec.tau_d**2))
    phase = complex(math.cos(spec.carrier_offset * separation), math.sin(spec.carrier_offset * separation))
    return spec.amplitude_scale**2 * envelope * kernel * phase


@dataclass(frozen=True)
class CorrelationEstimate:
    index_a: int
    index_b: int
    mean: complex
    stderr_real: float
    stderr_imag: float

    @property
    def stderr(self) -> float:
        return math.hypot(self.stderr_real, self.stderr_imag)


def estimate_two_time_correlation(
    realizations: Sequence[SampledField],
    pairs: Sequence[tuple[int, int]],
) -> list[CorrelationEstimate]:
    if len(realizations) < 2:
        raise EmptyEnsemble("correlation estimate needs at least two realizations")
    grid = realizations[0].grid
    for member in realizations[1:]:
        if member.grid != grid:
            raise GridMismatch("all realizations must share one time grid")
    index_a = np.asarray([a for a, _ in pairs], dtype=int)
    index_b = np.asarray([b for _, b in pairs], dtype=int)
    if np.any(index_a < 0) or np.any(index_b < 0) or np.any(index_a > grid.n_steps) or np.any(index_b > grid.n_steps):
        raise OutOfGrid("pair index outside the field grid")

    samples_a = np.stack([member.values[index_a] for member in realizations])
    samples_b = np.stack([member.values[index_b] for member in realizations])
    mean, se_real, se_imag = correlation_statistics(samples_a, samples_b)
    return [
        CorrelationEstimate(int(a), int(b), complex(m), float(sr), float(si))
        for a, b, m, sr, si in zip(index_a, index_b, mean, se_real, se_imag)
    ]


def correlation_statistics(samples_a: np.ndarray, samples_b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean of a * conj(b) over axis 0 with per-component standard errors."""
    count = samples_a.shape[0]
    if count < 2:
        raise EmptyEnsemble("correlation estimate needs at least two realizations")
    # Equal samples give |a|^2 exactly; a * conj(a) can keep a rounding residue in the imaginary part.
    products = np.where(samples_a == samples_b, np.abs(samples_a) ** 2, samples_a * np.conj(samples_b))
    mean = neumaier_sum(list(products)) / count
    centered = products - mean
    var_real = neumaier_sum(list(centered.real**2)) / (count - 1)
    var_imag = neumaier_sum(list(centered.imag**2)) / (count - 1)
    return mean, np.sqrt(var_real / count), np.sqrt(var_imag / count)


def neumaier_sum(terms: Sequence[np.ndarray]) -> np.ndarray:
    """Compensated elementwise sum in index order; complex terms are compensated per component."""
    if np.iscomplexobj(terms[0]):
        return _neumaier_real([np.real(t) for t in terms]) + 1j * _neumaier_real([np.imag(t) for t in terms])
    return _neumaier_real(terms)


def _neumaier_real(terms: Sequence[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(np.asarray(terms[0], dtype=float))
    compensation = np.zeros_like(total)
    for term in terms:
        term = np.asarray(term)
        running = total + term
        big = np.abs(total) >= np.abs(term)
        compensation = compensation + np.where(big, (total - running) + term, (term - running) + total)
        total = running
    return total + compensation


def spec_digest(spec: FieldSpec) -> str:
    return hashlib.sha256(repr(spec).encode("utf-8")).hexdigest()[:16]


def _complex_normal(rng: Generator, size: int) -> np.ndarray:
    draws = rng.standard_normal((2, size))
    return (draws[0] + 1j * draws[1]) / math.sqrt(2.0)


def _seed_origin(seed: int | SeedSequence) -> tuple[int, Optional[int]]:
    """(base seed, realization index k) for a seed built by realization_seed."""
    if isinstance(seed, SeedSequence):
        realization = int(seed.spawn_key[0]) if seed.spawn_key else None
        return int(seed.entropy), realization
    return int(seed), None


def _check_pulse_spec(tau_p: float, centers: Sequence[float]) -> None:
    if tau_p <= 0:
        raise InvalidSpec(f"tau_p must be positive, got {tau_p}")
    if not centers:
        raise InvalidSpec("pulse train needs at least one center")
    if any(b <= a for a, b in zip(centers, centers[1:])):
        raise InvalidSpec("pulse centers must be strictly increasing")


def _check_noisy_spec(spec: NoisyPulseSpec) -> None:
    _check_pulse_spec(spec.tau_p, spec.centers)
    if spec.tau_d <= 0:
        raise InvalidSpec(f"tau_d must be positive, got {spec.tau_d}")


def _check_pulse_grid(grid: TimeGrid, tau_p: float, centers: Sequence[float], check_coverage: bool = True) -> None:
    if grid.dt > tau_p / PULSE_RESOLUTION:
        raise GridTooCoarse(f"dt={grid.dt} fs exceeds tau_p/{PULSE_RESOLUTION:g}={tau_p / PULSE_RESOLUTION:g} fs")
    if not check_coverage:
        return
    start = min(centers) - PULSE_COVERAGE_WIDTHS * tau_p
    end = max(centers) + PULSE_COVERAGE_WIDTHS * tau_p
    tolerance = 1e-9 * grid.dt
    if grid.t_start > start + tolerance or grid.t_end < end - tolerance:
        raise GridTooShort(f"grid [{grid.t_start}, {grid.t_end}] fs does not cover pulses [{start}, {end}] fs")
