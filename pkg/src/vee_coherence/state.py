"""Density-matrix state, system parameters and validity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from vee_coherence.units import angular_to_period, rate_to_sink_time

DIM = 4
G, E1, E2, TRAP = 0, 1, 2, 3
BASIS_LABELS = ("g", "1", "2", "trap")


class SinkTarget(str, Enum):
    TRAP = "trap"
    GROUND = "ground"
    NONE = "none"


class CoherenceDamping(str, Enum):
    HALF = "half"
    QUARTER = "quarter"

    @property
    def factor(self) -> float:
        return 0.5 if self is CoherenceDamping.HALF else 0.25


@dataclass(frozen=True)
class SystemParams:
    omega_21: float
    rabi_scale: float
    gamma_t: float
    sink_target: SinkTarget
    carrier_detuning: float = 0.0
    dipole_ratio: float = 1.0
    coherence_damping: CoherenceDamping = CoherenceDamping.HALF

    def __post_init__(self) -> None:
        if self.omega_21 < 0:
            raise ValueError("omega_21 must be non-negative")
        if self.gamma_t < 0:
            raise ValueError("gamma_t must be non-negative")
        if self.rabi_scale < 0:
            raise ValueError("rabi_scale must be non-negative")

    @property
    def excited_period(self) -> float:
        return angular_to_period(self.omega_21)

    @property
    def sink_time(self) -> float:
        return rate_to_sink_time(self.gamma_t)

    @property
    def level_energies(self) -> tuple[float, float]:
        # Rotating frame: carrier midway between |1> and |2> when carrier_detuning is 0.
        half = 0.5 * self.omega_21
        return (-half + self.carrier_detuning, half + self.carrier_detuning)


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    dt: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("grid dt must be positive")
        if self.n_steps < 1:
            raise ValueError("grid needs at least one step")

    @classmethod
    def from_bounds(cls, t_start: float, t_end: float, dt: float) -> "TimeGrid":
        if dt <= 0:
            raise ValueError("grid dt must be positive")
        span = t_end - t_start
        n_steps = int(round(span / dt))
        if n_steps < 1 or abs(n_steps * dt - span) > 1e-9 * max(1.0, abs(span)):
            raise ValueError(f"grid span {span} fs is not a whole number of dt={dt} fs steps")
        return cls(t_start=t_start, dt=dt, n_steps=n_steps)

    @property
    def t_end(self) -> float:
        return self.t_start + self.n_steps * self.dt

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_points, dtype=float)

    def index_of(self, t: float) -> float:
        return (t - self.t_start) / self.dt

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(t_start=self.t_start, dt=self.dt / factor, n_steps=self.n_steps * factor)


@dataclass(frozen=True)
class ValidityTolerances:
    trace: float = 1e-9
    hermiticity: float = 1e-10
    positivity: float = 1e-8
    population: float = 1e-8


DEFAULT_TOLERANCES = ValidityTolerances()


@dataclass(frozen=True)
class Violation:
    magnitude: float

    @property
    def invariant(self) -> str:
        return type(self).__name__.removesuffix("Violation").lower()


@dataclass(frozen=True)
class TraceViolation(Violation):
    pass


@dataclass(frozen=True)
class HermiticityViolation(Violation):
    pass


@dataclass(frozen=True)
class PositivityViolation(Violation):
    pass


@dataclass(frozen=True)
class PopulationViolation(Violation):
    pass


class DensityState:
    """Immutable 4x4 density matrix over the basis (g, 1, 2, trap)."""

    __slots__ = ("_elements",)

    def __init__(self, elements: np.ndarray) -> None:
        array = np.array(elements, dtype=np.complex128, copy=True)
        if array.shape != (DIM, DIM):
            raise ValueError(f"density matrix must be {DIM}x{DIM}, got {array.shape}")
        array.setflags(write=False)
        self._elements = array

    @property
    def elements(self) -> np.ndarray:
        return self._elements

    def __getitem__(self, index: tuple[int, int]) -> complex:
        return complex(self._elements[index])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DensityState):
            return NotImplemented
        return bool(np.array_equal(self._elements, other._elements))

    def __repr__(self) -> str:
        pops = ", ".join(f"{label}={self.population(i):.4g}" for i, label in enumerate(BASIS_LABELS))
        return f"DensityState({pops}, rho12={self.rho12:.4g})"

    def population(self, level: int) -> float:
        return float(self._elements[level, level].real)

    @property
    def rho_gg(self) -> float:
        return self.population(G)

    @property
    def rho11(self) -> float:
        return self.population(E1)

    @property
    def rho22(self) -> float:
        return self.population(E2)

    @property
    def rho_tt(self) -> float:
        return self.population(TRAP)

    @property
    def rho12(self) -> complex:
        return complex(self._elements[E1, E2])

    @property
    def rho1g(self) -> complex:
        return complex(self._elements[E1, G])

    @property
    def rho2g(self) -> complex:
        return complex(self._elements[E2, G])

    def trace(self) -> complex:
        return complex(np.trace(self._elements))

    def hermiticity_defect(self) -> float:
        return hermiticity_defect(self._elements)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(hermitize(self._elements))[0])


def new_ground_state() -> DensityState:
    elements = np.zeros((DIM, DIM), dtype=np.complex128)
    elements[G, G] = 1.0
    return DensityState(elements)


def from_populations(populations: tuple[float, float, float, float], rho12: complex = 0.0) -> DensityState:
    elements = np.diag(np.asarray(populations, dtype=np.complex128))
    elements[E1, E2] = rho12
    elements[E2, E1] = np.conj(rho12)
    return DensityState(elements)


def hermitize(elements: np.ndarray) -> np.ndarray:
    return 0.5 * (elements + np.conj(np.swapaxes(elements, -1, -2)))


def hermiticity_defect(elements: np.ndarray) -> float:
    diff = elements - np.conj(np.swapaxes(elements, -1, -2))
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def validate(state: DensityState, tol: ValidityTolerances = DEFAULT_TOLERANCES) -> list[Violation]:
    return validate_elements(state.elements, tol)


def validate_elements(elements: np.ndarray, tol: ValidityTolerances = DEFAULT_TOLERANCES) -> list[Violation]:
    """Checks one matrix or a stack of matrices; magnitudes are worst cases over the stack."""
    violations: list[Violation] = []
    if not np.all(np.isfinite(elements)):
        return [TraceViolation(math.inf)]

    trace = np.trace(elements, axis1=-2, axis2=-1)
    trace_error = float(np.max(np.abs(trace - 1.0)))
    if trace_error > tol.trace:
        violations.append(TraceViolation(trace_error))

    herm_error = hermiticity_defect(elements)
    if herm_error > tol.hermiticity:
        violations.append(HermiticityViolation(herm_error))
    else:
        # Eigenvalues only mean something once the matrix is Hermitian.
        min_eig = float(np.min(np.linalg.eigvalsh(hermitize(elements))))
        if min_eig < -tol.positivity:
            violations.append(PositivityViolation(-min_eig))

    populations = np.diagonal(elements, axis1=-2, axis2=-1).real
    overshoot = float(max(np.max(-populations), np.max(populations - 1.0), 0.0))
    if overshoot > tol.population:
        violations.append(PopulationViolation(overshoot))
    return violations
