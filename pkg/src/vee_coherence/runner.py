"""Scenario execution, figure sweeps, replay and noise validation."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np

from vee_coherence import __version__
from vee_coherence.config import (
    Scenario,
    ScenarioConfig,
    build_config,
    config_to_raw,
)
from vee_coherence.dynamics import (
    TrajectoryRecord,
    build_rhs,
    grid_convergence_deviation,
    refine_substeps,
    run_trajectory,
)
from vee_coherence.ensemble import EnsembleResult, EnsembleSpec, convergence_report, integrate_members, run_ensemble
from vee_coherence.errors import InvalidSpec
from vee_coherence.fields import (
    CwSpec,
    NoisyPulseSpec,
    PulseTrainSpec,
    SampledField,
    analytic_correlation,
    correlation_statistics,
    eval_cw,
    eval_pulse_train,
    realization_seed,
    spec_digest,
    synthesize_noisy_pulse,
)
from vee_coherence.logging_setup import log_event
from vee_coherence.observables import PulseWindow, Quantity, resurgence_gain, steady_state_summary
from vee_coherence.state import TimeGrid, new_ground_state
from vee_coherence.storage import (
    STDERR_COLUMNS,
    atomic_write_yaml,
    read_yaml,
    render_csv,
    sha256_file,
    write_csv,
)
from vee_coherence.utils import map_ordered, resolve_thread_count

LOGGER = logging.getLogger(__name__)

GRID_GUARD_TOLERANCE = 1e-6
GRID_GUARD_SUBSTEPS = 2
NOISE_CHECK_SIGMAS = 4.0
NOISE_CHECK_REALIZATIONS = 10_000
SEED_DERIVATION = "seed_k = SeedSequence(entropy=base_seed, spawn_key=(k,)), Philox bit generator"


@dataclass(frozen=True)
class Simulation:
    record: TrajectoryRecord
    ensemble: Optional[EnsembleResult] = None
    substeps: int = 1

    @property
    def stderr_columns(self) -> Optional[dict[str, np.ndarray]]:
        if self.ensemble is None:
            return None
        return dict(
            zip(
                STDERR_COLUMNS,
                (self.ensemble.stderr_re_rho12, self.ensemble.stderr_im_rho12, self.ensemble.stderr_rho12),
            )
        )


@dataclass(frozen=True)
class RunOutcome:
    label: str
    csv_path: Path
    sidecar_path: Path
    simulation: Simulation
    grid_deviation: Optional[float]

    @property
    def record(self) -> TrajectoryRecord:
        return self.simulation.record

    @property
    def grid_flagged(self) -> bool:
        return self.grid_deviation is not None and self.grid_deviation > GRID_GUARD_TOLERANCE

    @property
    def converged(self) -> bool:
        return self.simulation.ensemble is None or self.simulation.ensemble.converged

    @property
    def flagged(self) -> bool:
        return self.grid_flagged or not self.converged


def build_field(config: ScenarioConfig, grid: Optional[TimeGrid] = None) -> SampledField:
    grid = grid or config.grid
    if isinstance(config.field, PulseTrainSpec):
        return eval_pulse_train(config.field, grid)
    if isinstance(config.field, CwSpec):
        return eval_cw(config.field, grid)
    raise InvalidSpec("noisy-pulse fields are synthesized per realization; use ensemble_spec")


def ensemble_spec(config: ScenarioConfig, substeps: int = 1) -> EnsembleSpec:
    if not isinstance(config.field, NoisyPulseSpec) or config.ensemble is None:
        raise InvalidSpec(f"scenario {config.scenario.value} is not an ensemble scenario")
    ensemble = config.ensemble
    return EnsembleSpec(
        n_realizations=ensemble.n_realizations,
        base_seed=ensemble.base_seed,
        params=config.system,
        field=config.field,
        grid=config.grid,
        convergence_target=ensemble.convergence_target,
        measure=ensemble.measure,
        chunk_size=ensemble.chunk_size,
        substeps=substeps,
    )


def simulate(config: ScenarioConfig, threads: Optional[int] = None) -> Simulation:
    """Integrates the scenario, refining sub-steps until the positivity check holds."""
    if config.scenario.is_stochastic:
        result, substeps = refine_substeps(
            lambda substeps: run_ensemble(ensemble_spec(config, substeps), threads=threads)
        )
        return Simulation(record=result.mean_record, ensemble=result, substeps=substeps)
    rhs = build_rhs(config.system)
    field_values = build_field(config)
    record, substeps = refine_substeps(
        lambda substeps: run_trajectory(
            rhs,
            field_values,
            new_ground_state(),
            substeps=substeps,
            field_spec_digest=spec_digest(config.field),
        )
    )
    return Simulation(record=record, substeps=substeps)


def grid_guard(config: ScenarioConfig, simulation: Simulation) -> Optional[float]:
    """Max population deviation between the run and a re-run with twice its sub-steps."""
    fine_substeps = simulation.substeps * GRID_GUARD_SUBSTEPS
    if config.scenario.is_stochastic:
        members = min(config.ensemble.guard_realizations, config.ensemble.n_realizations)
        if members == 0:
            return None
        spec = ensemble_spec(config)
        coarse = integrate_members(spec, range(members), substeps=simulation.substeps)
        fine = integrate_members(spec, range(members), substeps=fine_substeps)
        diagonal = np.arange(4)
        deviation = float(np.max(np.abs(coarse[:, :, diagonal, diagonal] - fine[:, :, diagonal, diagonal])))
    else:
        fine = run_trajectory(
            build_rhs(config.system),
            build_field(config),
            new_ground_state(),
            substeps=fine_substeps,
            field_spec_digest=spec_digest(config.field),
        )
        deviation = grid_convergence_deviation(simulation.record, fine)
    log_event(
        LOGGER,
        "grid_guard",
        scenario=config.scenario.value,
        max_deviation=f"{deviation:.3e}",
        flagged=deviation > GRID_GUARD_TOLERANCE,
    )
    return deviation


def run_scenario(
    config: ScenarioConfig,
    threads: Optional[int] = None,
    output_dir: Optional[Path] = None,
    label: Optional[str] = None,
) -> RunOutcome:
    directory = Path(output_dir) if output_dir is not None else _output_directory(config)
    name = label or config.output.name
    log_event(LOGGER, "run_start", scenario=config.scenario.value, name=name, steps=config.grid.n_steps)
    simulation = simulate(config, threads=threads)
    deviation = grid_guard(config, simulation) if config.output.grid_check else None

    csv_path = directory / f"{name}.csv"
    sidecar_path = directory / f"{name}.meta.yaml"
    digest = write_csv(csv_path, simulation.record, simulation.stderr_columns)
    atomic_write_yaml(sidecar_path, _sidecar(config, simulation, deviation, csv_path, digest))
    outcome = RunOutcome(
        label=name,
        csv_path=csv_path,
        sidecar_path=sidecar_path,
        simulation=simulation,
        grid_deviation=deviation,
    )
    if outcome.grid_flagged:
        LOGGER.warning("Grid convergence deviation %.3e exceeds %.1e for %s", deviation, GRID_GUARD_TOLERANCE, name)
    log_event(LOGGER, "run_end", name=name, csv=csv_path, flagged=outcome.flagged)
    return outcome


def _output_directory(config: ScenarioConfig) -> Path:
    directory = Path(config.output.directory).expanduser()
    if not directory.is_absolute() and config.path is not None:
        return config.path.parent / directory
    return directory


def _sidecar(
    config: ScenarioConfig,
    simulation: Simulation,
    deviation: Optional[float],
    csv_path: Path,
    digest: str,
) -> dict[str, Any]:
    data: dict[str, Any] = {
        "code_version": __version__,
        "config": config_to_raw(config),
        "csv": {"file": csv_path.name, "sha256": digest, "rows": config.grid.n_points},
        "field_spec_digest": simulation.record.field_spec_digest,
        "integration": {"substeps": simulation.substeps},
        "grid_convergence": {
            "checked": deviation is not None,
            "substeps": simulation.substeps * GRID_GUARD_SUBSTEPS,
            "max_population_deviation": deviation,
            "tolerance": GRID_GUARD_TOLERANCE,
            "flagged": deviation is not None and deviation > GRID_GUARD_TOLERANCE,
        },
    }
    if simulation.ensemble is not None:
        report = convergence_report(simulation.ensemble)
        data["seeds"] = {
            "base_seed": simulation.ensemble.base_seed,
            "n_realizations": simulation.ensemble.n_used,
            "derivation": SEED_DERIVATION,
        }
        data["ensemble"] = {
            "measure": simulation.ensemble.measure.value,
            "relative_stderr": report.relative_stderr,
            "target": report.target,
            "converged": simulation.ensemble.converged,
            "recommended_realizations": report.recommended_realizations,
        }
    return data


@dataclass(frozen=True)
class ReplayResult:
    csv_path: Path
    expected_sha256: str
    actual_sha256: str

    @property
    def matches(self) -> bool:
        return self.expected_sha256 == self.actual_sha256


def replay(sidecar_path: Path, threads: Optional[int] = None) -> ReplayResult:
    """Re-runs the sidecar's config in memory and compares against the CSV on disk."""
    sidecar = read_yaml(Path(sidecar_path))
    config = build_config(sidecar["config"])
    csv_path = Path(sidecar_path).parent / sidecar["csv"]["file"]
    simulation = simulate(config, threads=threads)
    text = render_csv(simulation.record, simulation.stderr_columns)
    result = ReplayResult(
        csv_path=csv_path,
        expected_sha256=sha256_file(csv_path),
        actual_sha256=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )
    log_event(LOGGER, "replay_done", csv=csv_path, matches=result.matches)
    return result


class Figure(str, Enum):
    FIG2 = "fig2"
    FIG3 = "fig3"
    FIG4 = "fig4"
    FIG5 = "fig5"
    FIG6 = "fig6"
    FIG7 = "fig7"
    APPENDIX_A = "appendix_a"

    @classmethod
    def parse(cls, value: str) -> "Figure":
        wanted = value.strip().lower().replace("_", "").replace("-", "").replace(".", "")
        for member in cls:
            if member.value.replace("_", "") == wanted:
                return member
        raise ValueError(f"unknown figure {value!r}; choose from {', '.join(m.value for m in cls)}")


PULSE_SINK_TIMES_FS = (20.0, 50.0, 140.0, 500.0)
CW_SPLITTING_PERIODS_FS = (44.5, 89.0, 178.0)
NOISY_SPLITTING_PERIODS_FS = (89.0, 178.0)
NOISY_SINK_TIMES_FS = (20.0, 140.0)
CW_TRAP_SINK_TIMES_FS = (20.0, 140.0)


def figure_curves(figure: Figure, n_realizations: Optional[int] = None) -> list[tuple[str, dict[str, Any]]]:
    """(label, raw config) per curve of the named figure."""
    curves: list[tuple[str, dict[str, Any]]] = []
    prefix = figure.value
    if figure in (Figure.FIG2, Figure.FIG3):
        for sink_time in PULSE_SINK_TIMES_FS:
            curves.append((f"{prefix}_sink{sink_time:g}fs", _raw(Scenario.COHERENT_PULSE_TRAP, sink_time_fs=sink_time)))
        curves.append((f"{prefix}_notrap", _raw(Scenario.COHERENT_PULSE_TRAP, gamma_t=0.0)))
    elif figure in (Figure.FIG4, Figure.FIG7):
        for period in CW_SPLITTING_PERIODS_FS:
            curves.append((f"{prefix}_tauc{period:g}fs", _raw(Scenario.CW_GROUND, excited_period_fs=period)))
    elif figure is Figure.FIG5:
        for period in NOISY_SPLITTING_PERIODS_FS:
            curves.append((f"{prefix}_tauc{period:g}fs", _raw(Scenario.NOISY_PULSE_TRAP, excited_period_fs=period)))
    elif figure is Figure.FIG6:
        for sink_time in NOISY_SINK_TIMES_FS:
            curves.append((f"{prefix}_sink{sink_time:g}fs", _raw(Scenario.NOISY_PULSE_TRAP, sink_time_fs=sink_time)))
        curves.append((f"{prefix}_notrap", _raw(Scenario.NOISY_PULSE_NO_TRAP)))
    elif figure is Figure.APPENDIX_A:
        for sink_time in CW_TRAP_SINK_TIMES_FS:
            curves.append((f"{prefix}_sink{sink_time:g}fs", _raw(Scenario.CW_TRAP, sink_time_fs=sink_time)))
    if n_realizations is not None:
        for _, raw in curves:
            if "ensemble" in raw:
                raw["ensemble"]["n_realizations"] = n_realizations
    return curves


def _raw(scenario: Scenario, **system: Any) -> dict[str, Any]:
    raw: dict[str, Any] = {"scenario": scenario.value, "system": dict(system)}
    if scenario.is_stochastic:
        raw["ensemble"] = {}
    return raw


@dataclass(frozen=True)
class ResurgenceWindows:
    baseline: PulseWindow
    resurgence: PulseWindow

    def gain(self, record: TrajectoryRecord) -> float:
        return resurgence_gain(record, self.baseline, self.resurgence, Quantity.C)


# Coherent pulses sit at 250 and 750 fs (tau_p 10 fs); noisy pulses at 50 and 550 fs (tau_p 100 fs).
COHERENT_PULSE_WINDOWS = ResurgenceWindows(
    baseline=PulseWindow(650.0, 700.0, "before second pulse"),
    resurgence=PulseWindow(720.0, 1000.0, "second pulse"),
)
NOISY_PULSE_WINDOWS = ResurgenceWindows(
    baseline=PulseWindow(275.0, 325.0, "between pulses"),
    resurgence=PulseWindow(325.0, 1050.0, "second pulse"),
)
FIGURE_WINDOWS = {
    Figure.FIG2: COHERENT_PULSE_WINDOWS,
    Figure.FIG3: COHERENT_PULSE_WINDOWS,
    Figure.FIG5: NOISY_PULSE_WINDOWS,
    Figure.FIG6: NOISY_PULSE_WINDOWS,
}
CW_FIGURES = (Figure.FIG4, Figure.FIG7, Figure.APPENDIX_A)


@dataclass
class FigureOutcome:
    figure: Figure
    runs: list[RunOutcome] = field(default_factory=list)
    gains: dict[str, float] = field(default_factory=dict)
    summary_path: Optional[Path] = None

    @property
    def flagged(self) -> bool:
        return any(run.flagged for run in self.runs)

    def by_label(self) -> dict[str, RunOutcome]:
        return {run.label: run for run in self.runs}


def reproduce_figure(
    figure: Figure,
    output_dir: Path,
    *,
    threads: Optional[int] = None,
    n_realizations: Optional[int] = None,
    grid_check: bool = True,
) -> FigureOutcome:
    worker_count = resolve_thread_count(threads)
    curves = figure_curves(figure, n_realizations)
    configs = []
    for label, raw in curves:
        raw.setdefault("output", {})["grid_check"] = grid_check
        configs.append((label, build_config(raw)))
    stochastic = any(config.scenario.is_stochastic for _, config in configs)

    def run_curve(item: tuple[str, ScenarioConfig]) -> RunOutcome:
        label, config = item
        outcome = run_scenario(config, threads=worker_count, output_dir=output_dir, label=label)
        log_event(LOGGER, "figure_curve_done", figure=figure.value, label=label)
        return outcome

    # Ensembles already spread over the worker threads; deterministic curves run side by side.
    runs = map_ordered(run_curve, configs, 1 if stochastic else worker_count)
    outcome = FigureOutcome(figure=figure, runs=runs)
    windows = FIGURE_WINDOWS.get(figure)
    if windows is not None:
        outcome.gains = {run.label: windows.gain(run.record) for run in runs}
    outcome.summary_path = Path(output_dir) / f"{figure.value}_summary.yaml"
    atomic_write_yaml(outcome.summary_path, _figure_summary(outcome, windows))
    for label, gain in outcome.gains.items():
        log_event(LOGGER, "figure_gain", figure=figure.value, label=label, gain=f"{gain:.4g}")
    return outcome


def _figure_summary(outcome: FigureOutcome, windows: Optional[ResurgenceWindows]) -> dict[str, Any]:
    curves: dict[str, Any] = {}
    for run in outcome.runs:
        entry: dict[str, Any] = {"csv": run.csv_path.name, "flagged": run.flagged}
        if run.label in outcome.gains:
            entry["resurgence_gain_C"] = float(outcome.gains[run.label])
        if outcome.figure in CW_FIGURES:
            steady = steady_state_summary(run.record)
            entry["steady_state"] = {
                "final_abs_rho12": abs(steady.final_rho12),
                "final_C": steady.final_C,
                "max_abs_rho12_rate": steady.max_abs_rho12_rate,
                "final_rho_tt": float(run.record.rhott[-1]),
            }
        curves[run.label] = entry
    data: dict[str, Any] = {"figure": outcome.figure.value, "code_version": __version__}
    if windows is not None:
        data["windows"] = {
            "baseline": [windows.baseline.start, windows.baseline.end],
            "resurgence": [windows.resurgence.start, windows.resurgence.end],
        }
    data["curves"] = curves
    return data


@dataclass(frozen=True)
class PairCheck:
    t_a: float
    t_b: float
    estimate: complex
    expected: complex
    stderr_real: float
    stderr_imag: float
    z_real: float
    z_imag: float
    kind: str

    @property
    def z_max(self) -> float:
        return max(self.z_real, self.z_imag)


@dataclass(frozen=True)
class NoiseCheckReport:
    n_realizations: int
    pairs: list[PairCheck]
    sigma_limit: float = NOISE_CHECK_SIGMAS

    @property
    def worst_z(self) -> float:
        return max(pair.z_max for pair in self.pairs)

    @property
    def passed(self) -> bool:
        return self.worst_z <= self.sigma_limit


def correlation_pairs(spec: NoisyPulseSpec, grid: TimeGrid) -> list[tuple[int, int, str]]:
    """Diagonal, intra-pulse and cross-pulse (index_a, index_b, kind) pairs, at least 50 of them."""
    candidates: list[tuple[float, float, str]] = []
    for center in spec.centers:
        for offset in (-1.0, -0.5, 0.0, 0.5, 1.0):
            t = center + offset * spec.tau_p
            candidates.append((t, t, "diagonal"))
        for offset in (-0.5, 0.0, 0.5):
            for separation in (0.5, 1.0, 1.5, 2.0, 3.0):
                t = center + offset * spec.tau_p
                candidates.append((t, t + separation * spec.tau_d, "intra_pulse"))
        candidates.append((center, center + 10.0 * spec.tau_d, "intra_pulse_far"))
    for first, second in zip(spec.centers, spec.centers[1:]):
        for offset_a in (-0.5, 0.0, 0.5):
            for offset_b in (-0.5, 0.0, 0.5):
                candidates.append((first + offset_a * spec.tau_p, second + offset_b * spec.tau_p, "cross_pulse"))
    indices: list[tuple[int, int, str]] = []
    for t_a, t_b, kind in candidates:
        a = int(round(grid.index_of(t_a)))
        b = int(round(grid.index_of(t_b)))
        if 0 <= a <= grid.n_steps and 0 <= b <= grid.n_steps:
            indices.append((a, b, kind))
    return indices


def noise_check(
    config: ScenarioConfig,
    n_realizations: Optional[int] = None,
    threads: Optional[int] = None,
    chunk_size: int = 256,
) -> NoiseCheckReport:
    if not isinstance(config.field, NoisyPulseSpec):
        raise InvalidSpec(f"noise-check needs a noisy-pulse scenario, got {config.scenario.value}")
    spec = config.field
    grid = config.grid
    count = n_realizations or NOISE_CHECK_REALIZATIONS
    base_seed = config.ensemble.base_seed if config.ensemble is not None else 0
    pairs = correlation_pairs(spec, grid)
    index_a = np.asarray([a for a, _, _ in pairs], dtype=int)
    index_b = np.asarray([b for _, b, _ in pairs], dtype=int)

    def sample_chunk(bounds: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        rows_a, rows_b = [], []
        for k in range(*bounds):
            values = synthesize_noisy_pulse(spec, grid, realization_seed(base_seed, k)).values
            rows_a.append(values[index_a])
            rows_b.append(values[index_b])
        return np.stack(rows_a), np.stack(rows_b)

    bounds = [(start, min(start + chunk_size, count)) for start in range(0, count, chunk_size)]
    chunks = map_ordered(sample_chunk, bounds, resolve_thread_count(threads))
    samples_a = np.concatenate([a for a, _ in chunks])
    samples_b = np.concatenate([b for _, b in chunks])
    mean, se_real, se_imag = correlation_statistics(samples_a, samples_b)

    times = grid.times
    results: list[PairCheck] = []
    for position, (a, b, kind) in enumerate(pairs):
        expected = analytic_correlation(spec, float(times[a]), float(times[b]))
        estimate = complex(mean[position])
        results.append(
            PairCheck(
                t_a=float(times[a]),
                t_b=float(times[b]),
                estimate=estimate,
                expected=expected,
                stderr_real=float(se_real[position]),
                stderr_imag=float(se_imag[position]),
                z_real=_z_score(estimate.real - expected.real, float(se_real[position])),
                z_imag=_z_score(estimate.imag - expected.imag, float(se_imag[position])),
                kind=kind,
            )
        )
    report = NoiseCheckReport(n_realizations=count, pairs=results)
    log_event(
        LOGGER,
        "noise_check_done",
        realizations=count,
        pairs=len(results),
        worst_z=f"{report.worst_z:.3f}",
        passed=report.passed,
    )
    return report


def _z_score(difference: float, stderr: float) -> float:
    if stderr > 0.0:
        return abs(difference) / stderr
    return 0.0 if abs(difference) <= 1e-12 else math.inf
