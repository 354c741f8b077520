"""Coherence fraction, purity and resurgence metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.signal import find_peaks

from vee_coherence.errors import AllSentinel, EmptyWindow
from vee_coherence.state import DensityState

if TYPE_CHECKING:
    from vee_coherence.dynamics import TrajectoryRecord

POPULATION_FLOOR = 1e-15
UNDEFINED = math.nan
# A second burst can sit more than a decade below the first when the sink is weak.
BURST_RELATIVE_HEIGHT = 0.01


class Quantity(str, Enum):
    ABS_RHO12 = "abs_rho12"
    C = "C"


@dataclass(frozen=True)
class PulseWindow:
    start: float
    end: float
    label: str = ""

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"window {self.label!r} needs start < end")

    def overlaps(self, other: "PulseWindow") -> bool:
        return self.start < other.end and other.start < self.end


def coherence_fraction(rho11: float, rho22: float, rho12: complex) -> Optional[float]:
    """|rho12| / (rho11 + rho22); None below the population floor."""
    denominator = rho11 + rho22
    if denominator < POPULATION_FLOOR:
        return None
    return abs(rho12) / denominator


def coherence_fraction_series(rho11: np.ndarray, rho22: np.ndarray, rho12: np.ndarray) -> np.ndarray:
    denominator = np.asarray(rho11) + np.asarray(rho22)
    defined = denominator >= POPULATION_FLOOR
    result = np.full(denominator.shape, UNDEFINED)
    result[defined] = np.abs(np.asarray(rho12)[defined]) / denominator[defined]
    return result


def purity(state: DensityState) -> float:
    elements = state.elements
    # Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho.
    return float(np.sum(np.abs(elements) ** 2))


def quantity_series(record: "TrajectoryRecord", quantity: Quantity) -> np.ndarray:
    if quantity is Quantity.ABS_RHO12:
        return record.abs_rho12
    return record.C


def window_peak(record: "TrajectoryRecord", window: PulseWindow, quantity: Quantity) -> float:
    times = record.times
    mask = (times >= window.start) & (times <= window.end)
    if not np.any(mask):
        raise EmptyWindow(f"window {window.label!r} [{window.start}, {window.end}] fs holds no samples")
    values = quantity_series(record, quantity)[mask]
    defined = values[~np.isnan(values)]
    if defined.size == 0:
        raise AllSentinel(f"window {window.label!r} has only undefined samples")
    return float(np.max(defined))


def resurgence_gain(
    record: "TrajectoryRecord",
    w1: PulseWindow,
    w2: PulseWindow,
    quantity: Quantity = Quantity.C,
) -> float:
    if w1.overlaps(w2):
        raise ValueError("resurgence windows must not overlap")
    first = window_peak(record, w1, quantity)
    second = window_peak(record, w2, quantity)
    if first == 0.0:
        return math.inf if second > 0.0 else 1.0
    return second / first


def count_bursts(
    series: np.ndarray,
    relative_height: float = BURST_RELATIVE_HEIGHT,
    min_separation: int = 1,
) -> int:
    """Local maxima above relative_height * max, at least min_separation samples apart."""
    values = np.nan_to_num(np.asarray(series, dtype=float), nan=0.0)
    peak = float(np.max(values)) if values.size else 0.0
    if peak <= 0.0:
        return 0
    peaks, _ = find_peaks(values, height=relative_height * peak, prominence=relative_height * peak, distance=max(1, min_separation))
    return int(len(peaks))


@dataclass(frozen=True)
class SteadyStateSummary:
    final_rho12: complex
    final_C: float
    max_abs_rho12_rate: float
    trailing_start: float


def steady_state_summary(record: "TrajectoryRecord", fraction: float = 0.1) -> SteadyStateSummary:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    n_points = record.grid.n_points
    first = max(0, n_points - max(2, int(round(fraction * n_points))))
    magnitude = record.abs_rho12[first:]
    rate = np.abs(np.diff(magnitude)) / record.grid.dt
    return SteadyStateSummary(
        final_rho12=complex(record.rho12[-1]),
        final_C=float(record.C[-1]),
        max_abs_rho12_rate=float(np.max(rate)) if rate.size else 0.0,
        trailing_start=float(record.times[first]),
    )
