"""Shared helpers: thread counts and order-fixed reductions."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np

LOGGER = logging.getLogger(__name__)

THREADS_ENV_VAR = "VEE_COHERENCE_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_thread_count(override: Optional[int] = None) -> int:
    if override is not None:
        return max(1, int(override))
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            LOGGER.warning("%s=%r is not an integer; using 1 thread", THREADS_ENV_VAR, raw)
            return 1
    return min(8, os.cpu_count() or 1)


def map_ordered(func: Callable[[T], R], items: Iterable[T], threads: int) -> list[R]:
    """Maps in parallel but returns results in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Sums along axis 0 with a fixed binary tree keyed by index."""
    count = values.shape[0]
    if count == 0:
        raise ValueError("pairwise_sum needs at least one term")
    if count == 1:
        return np.array(values[0], copy=True)
    middle = count // 2
    return pairwise_sum(values[:middle]) + pairwise_sum(values[middle:])


def pairwise_reduce(parts: Sequence[T], combine: Callable[[T, T], T]) -> T:
    if not parts:
        raise ValueError("pairwise_reduce needs at least one part")
    if len(parts) == 1:
        return parts[0]
    middle = len(parts) // 2
    return combine(pairwise_reduce(parts[:middle], combine), pairwise_reduce(parts[middle:], combine))
