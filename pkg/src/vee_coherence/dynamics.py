"""Liouville-von Neumann right-hand sides and fixed-step RK4 integration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TypeVar, Union

import numpy as np

from vee_coherence.errors import InvariantViolation, OutOfGrid, WrongScenario
from vee_coherence.fields import SampledField
from vee_coherence.logging_setup import log_event
from vee_coherence.observables import coherence_fraction_series
from vee_coherence.state import (
    DEFAULT_TOLERANCES,
    E1,
    E2,
    G,
    TRAP,
    DensityState,
    SinkTarget,
    SystemParams,
    TimeGrid,
    ValidityTolerances,
    hermitize,
    validate_elements,
)

LOGGER = logging.getLogger(__name__)

RhsCallable = Callable[[float, np.ndarray, Union[complex, np.ndarray]], np.ndarray]
T = TypeVar("T")

MAX_AUTO_SUBSTEPS = 64


@dataclass(frozen=True)
class ScenarioRhs:
    """d(rho)/dt in the frame rotating at the drive carrier; works on one matrix or a stack."""

    params: SystemParams

    @property
    def scenario(self) -> SinkTarget:
        return self.params.sink_target

    def __call__(
        self,
        t: float,
        rho: Union[np.ndarray, DensityState],
        field_value: Union[complex, np.ndarray],
    ) -> Union[np.ndarray, DensityState]:
        if isinstance(rho, DensityState):
            return DensityState(self._derivative(rho.elements, field_value))
        return self._derivative(rho, field_value)

    def _derivative(self, rho: np.ndarray, field_value: Union[complex, np.ndarray]) -> np.ndarray:
        omega = self.params.rabi_scale * np.asarray(field_value, dtype=np.complex128)
        return _coherent_part(rho, omega, self.params) + _sink_part(rho, self.params)


def build_rhs_trap(params: SystemParams) -> ScenarioRhs:
    if params.sink_target is not SinkTarget.TRAP:
        raise WrongScenario(f"trap equations need sink_target=trap, got {params.sink_target.value}")
    return ScenarioRhs(params)


def build_rhs_ground_relax(params: SystemParams) -> ScenarioRhs:
    if params.sink_target is not SinkTarget.GROUND:
        raise WrongScenario(f"ground-relaxation equations need sink_target=ground, got {params.sink_target.value}")
    return ScenarioRhs(params)


def build_rhs_unitary(params: SystemParams) -> ScenarioRhs:
    if params.sink_target is not SinkTarget.NONE:
        raise WrongScenario(f"unitary equations need sink_target=none, got {params.sink_target.value}")
    return ScenarioRhs(params)


def build_rhs(params: SystemParams) -> ScenarioRhs:
    builders = {
        SinkTarget.TRAP: build_rhs_trap,
        SinkTarget.GROUND: build_rhs_ground_relax,
        SinkTarget.NONE: build_rhs_unitary,
    }
    return builders[params.sink_target](params)


def _coherent_part(rho: np.ndarray, omega: np.ndarray, params: SystemParams) -> np.ndarray:
    """i [rho, H] with H = [[0, -O, -r O], [-O*, E1, 0], [-r O*, 0, E2]] and an uncoupled trap."""
    e1, e2 = params.level_energies
    om1 = omega[..., None]
    om2 = params.dipole_ratio * om1
    om1c = np.conj(om1)
    om2c = np.conj(om2)

    rho_h = np.zeros_like(rho)
    rho_h[..., :, G] = -(rho[..., :, E1] * om1c + rho[..., :, E2] * om2c)
    rho_h[..., :, E1] = e1 * rho[..., :, E1] - rho[..., :, G] * om1
    rho_h[..., :, E2] = e2 * rho[..., :, E2] - rho[..., :, G] * om2

    h_rho = np.zeros_like(rho)
    h_rho[..., G, :] = -(om1 * rho[..., E1, :] + om2 * rho[..., E2, :])
    h_rho[..., E1, :] = e1 * rho[..., E1, :] - om1c * rho[..., G, :]
    h_rho[..., E2, :] = e2 * rho[..., E2, :] - om2c * rho[..., G, :]
    return 1j * (rho_h - h_rho)


def _sink_part(rho: np.ndarray, params: SystemParams) -> np.ndarray:
    out = np.zeros_like(rho)
    gamma = params.gamma_t
    if gamma == 0.0 or params.sink_target is SinkTarget.NONE:
        return out
    half = 0.5 * gamma
    out[..., E1, E1] = -half * rho[..., E1, E1]
    out[..., E2, E2] = -half * rho[..., E2, E2]
    inflow = half * (rho[..., E1, E1] + rho[..., E2, E2])
    target = TRAP if params.sink_target is SinkTarget.TRAP else G
    out[..., target, target] = inflow

    out[..., E1, E2] = -gamma * rho[..., E1, E2]
    out[..., E2, E1] = -gamma * rho[..., E2, E1]

    damping = params.coherence_damping.factor * gamma
    for excited in (E1, E2):
        out[..., excited, G] = -damping * rho[..., excited, G]
        out[..., G, excited] = -damping * rho[..., G, excited]
        out[..., excited, TRAP] = -half * rho[..., excited, TRAP]
        out[..., TRAP, excited] = -half * rho[..., TRAP, excited]
    return out


def _rk4_raw(
    rhs: RhsCallable,
    rho: np.ndarray,
    t: float,
    dt: float,
    f_start: Union[complex, np.ndarray],
    f_mid: Union[complex, np.ndarray],
    f_end: Union[complex, np.ndarray],
) -> np.ndarray:
    half = 0.5 * dt
    k1 = rhs(t, rho, f_start)
    k2 = rhs(t + half, rho + half * k1, f_mid)
    k3 = rhs(t + half, rho + half * k2, f_mid)
    k4 = rhs(t + dt, rho + dt * k3, f_end)
    return rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(
    rhs: RhsCallable,
    state: DensityState,
    t: float,
    dt: float,
    field: SampledField,
) -> DensityState:
    ratio = field.grid.dt / dt
    if dt <= 0 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"step {dt} fs must be the field spacing {field.grid.dt} fs or an integer divisor of it")
    f_start, f_mid, f_end = field.values_at(np.asarray([t, t + 0.5 * dt, t + dt]))
    raw = _rk4_raw(rhs, state.elements, t, dt, f_start, f_mid, f_end)
    return DensityState(hermitize(raw))


@dataclass(frozen=True)
class TrajectoryRecord:
    grid: TimeGrid
    rhogg: np.ndarray
    rho11: np.ndarray
    rho22: np.ndarray
    rhott: np.ndarray
    rho12: np.ndarray
    rho1g: np.ndarray
    rho2g: np.ndarray
    C: np.ndarray
    params: SystemParams
    field_spec_digest: str
    seed: Optional[int] = None
    states: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def from_history(
        cls,
        grid: TimeGrid,
        history: np.ndarray,
        params: SystemParams,
        field_spec_digest: str,
        seed: Optional[int] = None,
    ) -> "TrajectoryRecord":
        rho11 = history[:, E1, E1].real.copy()
        rho22 = history[:, E2, E2].real.copy()
        rho12 = history[:, E1, E2].copy()
        return cls(
            grid=grid,
            rhogg=history[:, G, G].real.copy(),
            rho11=rho11,
            rho22=rho22,
            rhott=history[:, TRAP, TRAP].real.copy(),
            rho12=rho12,
            rho1g=history[:, E1, G].copy(),
            rho2g=history[:, E2, G].copy(),
            C=coherence_fraction_series(rho11, rho22, rho12),
            params=params,
            field_spec_digest=field_spec_digest,
            seed=seed,
            states=history,
        )

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def abs_rho12(self) -> np.ndarray:
        return np.abs(self.rho12)


def integrate_batch(
    rhs: RhsCallable,
    initial: np.ndarray,
    node_values: np.ndarray,
    midpoint_values: np.ndarray,
    grid: TimeGrid,
    *,
    substeps: int = 1,
    seeds: Optional[Sequence[Optional[int]]] = None,
    realizations: Optional[Sequence[Optional[int]]] = None,
    tolerances: ValidityTolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """Integrates a stack of states, one field per member.

    node_values has shape (batch, n_points); midpoint_values has shape
    (batch, n_steps * substeps, 2) holding the field at (t + h/2, t + h) for
    every sub-step of width h = dt / substeps. Returns the history sampled on
    the grid nodes, shape (batch, n_points, 4, 4). seeds and realizations label
    the members so a violation names the one that failed.
    """
    batch = initial.shape[0]
    history = np.empty((batch, grid.n_points, 4, 4), dtype=np.complex128)
    rho = np.array(initial, dtype=np.complex128)
    history[:, 0] = rho
    h = grid.dt / substeps
    f_start = node_values[:, 0]
    for step in range(grid.n_steps):
        for sub in range(substeps):
            k = step * substeps + sub
            t = grid.t_start + k * h
            f_mid = midpoint_values[:, k, 0]
            f_end = midpoint_values[:, k, 1]
            raw = _rk4_raw(rhs, rho, t, h, f_start, f_mid, f_end)
            violations = validate_elements(raw, tolerances)
            if violations:
                member = _offending_member(raw, tolerances)
                raise InvariantViolation(
                    violations,
                    step=k + 1,
                    time=t + h,
                    seed=_label(seeds, member),
                    realization=_label(realizations, member),
                )
            rho = hermitize(raw)
            f_start = f_end
        history[:, step + 1] = rho
    return history


def run_trajectory(
    rhs: ScenarioRhs,
    field: SampledField,
    initial: DensityState,
    *,
    substeps: int = 1,
    field_spec_digest: str = "",
    tolerances: ValidityTolerances = DEFAULT_TOLERANCES,
) -> TrajectoryRecord:
    violations = validate_elements(initial.elements, tolerances)
    if violations:
        raise InvariantViolation(
            violations, step=0, time=field.grid.t_start, seed=field.seed, realization=field.realization
        )
    if substeps < 1:
        raise OutOfGrid("substeps must be a positive integer")
    grid = field.grid
    history = integrate_batch(
        rhs,
        initial.elements[None, :, :],
        field.values[None, :],
        field.midpoint_values(substeps)[None, :, :],
        grid,
        substeps=substeps,
        seeds=[field.seed],
        realizations=[field.realization],
        tolerances=tolerances,
    )[0]
    log_event(
        LOGGER,
        "trajectory_done",
        sink=rhs.scenario.value,
        steps=grid.n_steps * substeps,
        final_trace=f"{np.trace(history[-1]).real:.12f}",
        seed=field.seed,
    )
    return TrajectoryRecord.from_history(grid, history, rhs.params, field_spec_digest, seed=field.seed)


def grid_convergence_deviation(coarse: TrajectoryRecord, fine: TrajectoryRecord) -> float:
    """Max absolute population difference between two runs sampled on the same grid."""
    if coarse.grid != fine.grid:
        raise ValueError("records must share the sampling grid")
    pairs = (
        (coarse.rhogg, fine.rhogg),
        (coarse.rho11, fine.rho11),
        (coarse.rho22, fine.rho22),
        (coarse.rhott, fine.rhott),
    )
    return float(max(np.max(np.abs(a - b)) for a, b in pairs))


def _offending_member(raw: np.ndarray, tolerances: ValidityTolerances) -> int:
    for index, member in enumerate(raw):
        if validate_elements(member, tolerances):
            return index
    return 0


def _label(labels: Optional[Sequence[Optional[int]]], index: int) -> Optional[int]:
    if not labels:
        return None
    return labels[index]


def refine_substeps(
    run: Callable[[int], T],
    *,
    start: int = 1,
    limit: int = MAX_AUTO_SUBSTEPS,
) -> tuple[T, int]:
    """Calls run(substeps), doubling substeps while it fails on positivity alone.

    RK4 truncation on a nearly pure state pushes the smallest eigenvalue below
    zero by an amount that shrinks as h^4; finer sub-steps fix that, while trace
    and Hermiticity failures are raised at once.
    """
    substeps = start
    while True:
        try:
            return run(substeps), substeps
        except InvariantViolation as exc:
            if not exc.numerical_only or substeps * 2 > limit:
                raise
            log_event(
                LOGGER,
                "substeps_refined",
                failed_step=exc.step,
                failed_time=f"{exc.time:.6g}",
                substeps=substeps * 2,
            )
            substeps *= 2
