"""Unit conversions. Times are in fs, angular frequencies in rad/fs."""

from __future__ import annotations

import math

TWO_PI = 2.0 * math.pi


def thz_to_angular(frequency_thz: float) -> float:
    return TWO_PI * frequency_thz * 1e-3


def ghz_to_angular(frequency_ghz: float) -> float:
    return TWO_PI * frequency_ghz * 1e-6


def period_to_angular(period_fs: float) -> float:
    if period_fs <= 0:
        raise ValueError("period must be positive")
    return TWO_PI / period_fs


def angular_to_period(omega: float) -> float:
    if omega <= 0:
        return math.inf
    return TWO_PI / omega


def sink_time_to_rate(sink_time_fs: float | None) -> float:
    """1/T for a sink time T; None or infinity means no sink."""
    if sink_time_fs is None or math.isinf(sink_time_fs):
        return 0.0
    if sink_time_fs <= 0:
        raise ValueError("sink time must be positive")
    return 1.0 / sink_time_fs


def rate_to_sink_time(gamma_t: float) -> float:
    if gamma_t <= 0:
        return math.inf
    return 1.0 / gamma_t
