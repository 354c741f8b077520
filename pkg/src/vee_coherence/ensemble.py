"""Noisy-pulse ensembles: many seeded realizations averaged into <rho(t)>."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from vee_coherence.dynamics import TrajectoryRecord, build_rhs, integrate_batch
from vee_coherence.errors import ConvergenceNotReached, EmptyEnsemble, InvalidSpec, InvariantViolation
from vee_coherence.fields import NoisyPulseSpec, SampledField, realization_seed, spec_digest, synthesize_noisy_pulse
from vee_coherence.logging_setup import log_event
from vee_coherence.observables import coherence_fraction_series
from vee_coherence.state import E1, E2, SystemParams, TimeGrid, new_ground_state, validate_elements
from vee_coherence.utils import map_ordered, pairwise_reduce, pairwise_sum, resolve_thread_count

LOGGER = logging.getLogger(__name__)

DEFAULT_REALIZATIONS = 2000
DEFAULT_CHUNK_SIZE = 32
# Relative stderr on the peak of |<rho12>|; 2000 realizations of the trapped noisy pulse reach about 0.035.
DEFAULT_CONVERGENCE_TARGET = 0.05


class EnsembleMeasure(str, Enum):
    AVERAGE_THEN_MEASURE = "average_then_measure"
    MEASURE_THEN_AVERAGE = "measure_then_average"


@dataclass(frozen=True)
class EnsembleSpec:
    n_realizations: int
    base_seed: int
    params: SystemParams
    field: NoisyPulseSpec
    grid: TimeGrid
    convergence_target: float = DEFAULT_CONVERGENCE_TARGET
    measure: EnsembleMeasure = EnsembleMeasure.AVERAGE_THEN_MEASURE
    identical_seeds: bool = False
    chunk_size: int = DEFAULT_CHUNK_SIZE
    substeps: int = 1

    def __post_init__(self) -> None:
        if self.n_realizations < 2:
            raise EmptyEnsemble(f"ensemble needs at least 2 realizations, got {self.n_realizations}")
        if self.base_seed < 0 or self.base_seed >= 2**64:
            raise InvalidSpec("base_seed must be an unsigned 64-bit integer")
        if self.chunk_size < 1:
            raise InvalidSpec("chunk_size must be positive")

    def realization_index(self, k: int) -> int:
        return 0 if self.identical_seeds else k

    def synthesize(self, k: int, grid: Optional[TimeGrid] = None) -> SampledField:
        seed = realization_seed(self.base_seed, self.realization_index(k))
        return synthesize_noisy_pulse(self.field, grid or self.grid, seed)


@dataclass(frozen=True)
class EnsembleResult:
    mean_record: TrajectoryRecord
    stderr_rho12: np.ndarray
    stderr_re_rho12: np.ndarray
    stderr_im_rho12: np.ndarray
    n_used: int
    base_seed: int
    convergence_target: float
    measure: EnsembleMeasure
    converged: bool = True


@dataclass(frozen=True)
class _ChunkStats:
    count: int
    mean: np.ndarray
    m2_re: np.ndarray
    m2_im: np.ndarray
    c_sum: np.ndarray
    c_count: np.ndarray

    @classmethod
    def from_history(cls, history: np.ndarray) -> "_ChunkStats":
        count = history.shape[0]
        mean = pairwise_sum(history) / count
        rho12 = history[:, :, E1, E2]
        c = coherence_fraction_series(history[:, :, E1, E1].real, history[:, :, E2, E2].real, rho12)
        defined = ~np.isnan(c)
        return cls(
            count=count,
            mean=mean,
            m2_re=pairwise_sum((rho12.real - mean[:, E1, E2].real) ** 2),
            m2_im=pairwise_sum((rho12.imag - mean[:, E1, E2].imag) ** 2),
            c_sum=pairwise_sum(np.where(defined, c, 0.0)),
            c_count=pairwise_sum(defined.astype(float)),
        )

    def merge(self, other: "_ChunkStats") -> "_ChunkStats":
        total = self.count + other.count
        delta = other.mean - self.mean
        weight = other.count / total
        cross = self.count * other.count / total
        d12 = delta[:, E1, E2]
        return _ChunkStats(
            count=total,
            mean=self.mean + delta * weight,
            m2_re=self.m2_re + other.m2_re + d12.real**2 * cross,
            m2_im=self.m2_im + other.m2_im + d12.imag**2 * cross,
            c_sum=self.c_sum + other.c_sum,
            c_count=self.c_count + other.c_count,
        )


def run_ensemble(spec: EnsembleSpec, threads: Optional[int] = None) -> EnsembleResult:
    rhs = build_rhs(spec.params)
    worker_count = resolve_thread_count(threads)
    bounds = [
        (start, min(start + spec.chunk_size, spec.n_realizations))
        for start in range(0, spec.n_realizations, spec.chunk_size)
    ]
    log_event(
        LOGGER,
        "ensemble_start",
        realizations=spec.n_realizations,
        chunks=len(bounds),
        threads=worker_count,
        base_seed=spec.base_seed,
    )

    def run_chunk(chunk: tuple[int, int]) -> _ChunkStats:
        history = integrate_members(spec, range(*chunk), rhs=rhs)
        stats = _ChunkStats.from_history(history)
        log_event(LOGGER, "ensemble_chunk_done", first=chunk[0], last=chunk[1] - 1)
        return stats

    chunk_stats = map_ordered(run_chunk, bounds, worker_count)
    total = pairwise_reduce(chunk_stats, _ChunkStats.merge)

    violations = validate_elements(total.mean)
    if violations:
        raise InvariantViolation(violations, step=-1, time=spec.grid.t_end, seed=spec.base_seed)

    record = TrajectoryRecord.from_history(
        spec.grid,
        total.mean,
        spec.params,
        spec_digest(spec.field),
        seed=spec.base_seed,
    )
    if spec.measure is EnsembleMeasure.MEASURE_THEN_AVERAGE:
        with np.errstate(invalid="ignore", divide="ignore"):
            averaged_c = np.where(total.c_count > 0, total.c_sum / np.maximum(total.c_count, 1.0), np.nan)
        record = replace(record, C=averaged_c)

    count = total.count
    se_re = np.sqrt(total.m2_re / (count - 1) / count)
    se_im = np.sqrt(total.m2_im / (count - 1) / count)
    result = EnsembleResult(
        mean_record=record,
        stderr_rho12=np.hypot(se_re, se_im),
        stderr_re_rho12=se_re,
        stderr_im_rho12=se_im,
        n_used=count,
        base_seed=spec.base_seed,
        convergence_target=spec.convergence_target,
        measure=spec.measure,
    )
    report = convergence_report(result)
    if not report.target_met:
        warnings.warn(
            f"relative stderr {report.relative_stderr:.4g} above target {report.target:.4g}; "
            f"about {report.recommended_realizations} realizations needed",
            ConvergenceNotReached,
            stacklevel=2,
        )
        result = replace(result, converged=False)
    log_event(
        LOGGER,
        "ensemble_done",
        realizations=count,
        relative_stderr=f"{report.relative_stderr:.4g}",
        converged=result.converged,
    )
    return result


def integrate_members(
    spec: EnsembleSpec,
    indices: range,
    *,
    rhs=None,
    substeps: Optional[int] = None,
) -> np.ndarray:
    """Synthesizes and integrates the listed realizations together; history shape (k, n_points, 4, 4)."""
    rhs = rhs or build_rhs(spec.params)
    substeps = substeps or spec.substeps
    fields = [spec.synthesize(k) for k in indices]
    nodes = np.stack([member.values for member in fields])
    midpoints = np.stack([member.midpoint_values(substeps) for member in fields])
    initial = np.broadcast_to(new_ground_state().elements, (len(fields), 4, 4))
    return integrate_batch(
        rhs,
        initial,
        nodes,
        midpoints,
        spec.grid,
        substeps=substeps,
        seeds=[member.seed for member in fields],
        realizations=[member.realization for member in fields],
    )


@dataclass(frozen=True)
class ConvergenceReport:
    n_used: int
    relative_stderr: float
    target: float
    scale_factor: float
    recommended_realizations: int

    @property
    def target_met(self) -> bool:
        return self.relative_stderr <= self.target


def relative_stderr(result: EnsembleResult) -> float:
    """max_t stderr(rho12) / max_t |<rho12>|."""
    peak = float(np.max(result.mean_record.abs_rho12))
    worst = float(np.max(result.stderr_rho12))
    if peak == 0.0:
        return 0.0 if worst == 0.0 else math.inf
    return worst / peak


def convergence_report(result: EnsembleResult) -> ConvergenceReport:
    if result.n_used < 2:
        raise EmptyEnsemble("convergence report needs at least 2 realizations")
    achieved = relative_stderr(result)
    target = result.convergence_target
    if achieved <= target or target <= 0.0:
        factor = 1.0
    else:
        factor = (achieved / target) ** 2
    recommended = int(math.ceil(round(result.n_used * factor, 9)))
    return ConvergenceReport(
        n_used=result.n_used,
        relative_stderr=achieved,
        target=target,
        scale_factor=factor,
        recommended_realizations=max(recommended, result.n_used),
    )
