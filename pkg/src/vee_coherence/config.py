"""Scenario configuration loading, validation and rendering."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from vee_coherence.ensemble import DEFAULT_CHUNK_SIZE, DEFAULT_CONVERGENCE_TARGET, DEFAULT_REALIZATIONS, EnsembleMeasure
from vee_coherence.errors import GridTooCoarse, GridTooShort, ParseError, ValidationError
from vee_coherence.fields import (
    KERNEL_RESOLUTION,
    PULSE_COVERAGE_WIDTHS,
    PULSE_RESOLUTION,
    CwSpec,
    FieldSpec,
    NoiseSharing,
    NoisyPulseSpec,
    PulseTrainSpec,
)
from vee_coherence.state import CoherenceDamping, SinkTarget, SystemParams, TimeGrid
from vee_coherence.units import ghz_to_angular, period_to_angular, sink_time_to_rate, thz_to_angular

LOGGER = logging.getLogger(__name__)

SCALE_RESOLUTION = PULSE_RESOLUTION


class Scenario(str, Enum):
    COHERENT_PULSE_TRAP = "coherent_pulse_trap"
    CW_GROUND = "cw_ground"
    CW_TRAP = "cw_trap"
    NOISY_PULSE_TRAP = "noisy_pulse_trap"
    NOISY_PULSE_NO_TRAP = "noisy_pulse_no_trap"

    @property
    def sink_target(self) -> SinkTarget:
        return _SCENARIO_SINK[self]

    @property
    def field_kind(self) -> str:
        return _SCENARIO_FIELD[self]

    @property
    def is_stochastic(self) -> bool:
        return self.field_kind == NoisyPulseSpec.kind


_SCENARIO_SINK = {
    Scenario.COHERENT_PULSE_TRAP: SinkTarget.TRAP,
    Scenario.CW_GROUND: SinkTarget.GROUND,
    Scenario.CW_TRAP: SinkTarget.TRAP,
    Scenario.NOISY_PULSE_TRAP: SinkTarget.TRAP,
    Scenario.NOISY_PULSE_NO_TRAP: SinkTarget.NONE,
}

_SCENARIO_FIELD = {
    Scenario.COHERENT_PULSE_TRAP: PulseTrainSpec.kind,
    Scenario.CW_GROUND: CwSpec.kind,
    Scenario.CW_TRAP: CwSpec.kind,
    Scenario.NOISY_PULSE_TRAP: NoisyPulseSpec.kind,
    Scenario.NOISY_PULSE_NO_TRAP: NoisyPulseSpec.kind,
}

# Rabi scale 10 THz for coherent and cw drives, 631 GHz for noisy pulses; tau_c = 89 fs.
_DEFAULTS: dict[Scenario, dict[str, Any]] = {
    Scenario.COHERENT_PULSE_TRAP: {
        "rabi_scale": thz_to_angular(10.0),
        "sink_time_fs": 20.0,
        "field": {"tau_p": 10.0, "centers": (250.0, 750.0)},
        "grid": {"t_start": 0.0, "t_end": 1000.0, "dt": 0.2},
    },
    Scenario.CW_GROUND: {
        "rabi_scale": thz_to_angular(10.0),
        "sink_time_fs": 140.0,
        "field": {},
        "grid": {"t_start": 0.0, "t_end": 4000.0, "dt": 0.25},
    },
    Scenario.CW_TRAP: {
        "rabi_scale": thz_to_angular(10.0),
        "sink_time_fs": 140.0,
        "field": {},
        "grid": {"t_start": 0.0, "t_end": 10000.0, "dt": 0.25},
    },
    Scenario.NOISY_PULSE_TRAP: {
        "rabi_scale": ghz_to_angular(631.0),
        "sink_time_fs": 20.0,
        "field": {"tau_p": 100.0, "tau_d": 10.0, "centers": (50.0, 550.0)},
        "grid": {"t_start": -450.0, "t_end": 1050.0, "dt": 0.4},
    },
    Scenario.NOISY_PULSE_NO_TRAP: {
        "rabi_scale": ghz_to_angular(631.0),
        "sink_time_fs": None,
        "field": {"tau_p": 100.0, "tau_d": 10.0, "centers": (50.0, 550.0)},
        "grid": {"t_start": -450.0, "t_end": 1050.0, "dt": 0.4},
    },
}

DEFAULT_EXCITED_PERIOD_FS = 89.0
DEFAULT_BASE_SEED = 20110131


@dataclass(frozen=True)
class EnsembleConfig:
    n_realizations: int = DEFAULT_REALIZATIONS
    base_seed: int = DEFAULT_BASE_SEED
    convergence_target: float = DEFAULT_CONVERGENCE_TARGET
    measure: EnsembleMeasure = EnsembleMeasure.AVERAGE_THEN_MEASURE
    chunk_size: int = DEFAULT_CHUNK_SIZE
    guard_realizations: int = 4


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "output"
    name: str = "run"
    grid_check: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    system: SystemParams
    field: FieldSpec
    grid: TimeGrid
    ensemble: Optional[EnsembleConfig]
    output: OutputConfig
    path: Optional[Path] = field(default=None, compare=False)


def load_config(path_value: Union[str, Path]) -> ScenarioConfig:
    path = Path(path_value).expanduser()
    if not path.exists():
        raise FileNotFoundError(f"Config file not found at {path}")
    try:
        content = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"Unable to read config file at {path}") from exc
    config = parse_config(content)
    return ScenarioConfig(
        scenario=config.scenario,
        system=config.system,
        field=config.field,
        grid=config.grid,
        ensemble=config.ensemble,
        output=config.output,
        path=path,
    )


def parse_config(text: str) -> ScenarioConfig:
    if not text.strip():
        raise ParseError("Config document is empty")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"Config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("Config root must be a YAML mapping")
    return build_config(data)


def build_config(raw: dict[str, Any]) -> ScenarioConfig:
    reader = _Reader()
    scenario = reader.enum(raw, "scenario", Scenario, context="config")
    if scenario is None:
        raise ValidationError(reader.problems or ["scenario: required"])
    defaults = _DEFAULTS[scenario]

    system_raw = reader.section(raw, "system")
    field_raw = reader.section(raw, "field")
    grid_raw = reader.section(raw, "grid")
    output_raw = reader.section(raw, "output")

    system = _parse_system(reader, system_raw, scenario, defaults)
    field_spec = _parse_field(reader, field_raw, scenario, defaults)
    grid = _parse_grid(reader, grid_raw, defaults)
    ensemble = _parse_ensemble(reader, raw.get("ensemble"), scenario)
    output = OutputConfig(
        directory=reader.string(output_raw, "directory", "output.directory", OutputConfig.directory),
        name=reader.string(output_raw, "name", "output.name", scenario.value),
        grid_check=reader.boolean(output_raw, "grid_check", "output.grid_check", True),
    )
    if system is not None and field_spec is not None and grid is not None:
        for problem in resolution_problems(grid, system, field_spec):
            reader.fail(problem)
    if reader.problems:
        raise ValidationError(reader.problems)
    return ScenarioConfig(
        scenario=scenario,
        system=system,
        field=field_spec,
        grid=grid,
        ensemble=ensemble,
        output=output,
    )


def render_config(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_raw(config), sort_keys=False, allow_unicode=True)


def config_to_raw(config: ScenarioConfig) -> dict[str, Any]:
    system = config.system
    raw: dict[str, Any] = {
        "scenario": config.scenario.value,
        "system": {
            "omega_21": system.omega_21,
            "rabi_scale": system.rabi_scale,
            "gamma_t": system.gamma_t,
            "sink_target": system.sink_target.value,
            "carrier_detuning": system.carrier_detuning,
            "dipole_ratio": system.dipole_ratio,
            "coherence_damping": system.coherence_damping.value,
        },
        "field": _field_to_raw(config.field),
        "grid": {"t_start": config.grid.t_start, "t_end": config.grid.t_end, "dt": config.grid.dt},
    }
    if config.ensemble is not None:
        ensemble = config.ensemble
        raw["ensemble"] = {
            "n_realizations": ensemble.n_realizations,
            "base_seed": ensemble.base_seed,
            "convergence_target": ensemble.convergence_target,
            "measure": ensemble.measure.value,
            "chunk_size": ensemble.chunk_size,
            "guard_realizations": ensemble.guard_realizations,
        }
    raw["output"] = {
        "directory": config.output.directory,
        "name": config.output.name,
        "grid_check": config.output.grid_check,
    }
    return raw


def resolution_problems(grid: TimeGrid, system: SystemParams, field_spec: FieldSpec) -> list[str]:
    try:
        check_resolution(grid, system, field_spec)
    except (GridTooCoarse, GridTooShort) as exc:
        return [f"grid.dt: {exc}" if isinstance(exc, GridTooCoarse) else f"grid.t_start: {exc}"]
    return []


def check_resolution(grid: TimeGrid, system: SystemParams, field_spec: FieldSpec) -> None:
    """dt must resolve every active time scale by a factor 50 (tau_d by 20); pulses must be covered."""
    scales: dict[str, float] = {}
    if system.omega_21 > 0:
        scales["tau_c"] = system.excited_period
    peak_rabi = system.rabi_scale * abs(field_spec.amplitude_scale) * _peak_envelope(field_spec)
    if peak_rabi > 0:
        scales["1/rabi"] = 1.0 / peak_rabi
    if system.gamma_t > 0 and system.sink_target is not SinkTarget.NONE:
        scales["1/gamma_t"] = 1.0 / system.gamma_t
    if isinstance(field_spec, (PulseTrainSpec, NoisyPulseSpec)):
        scales["tau_p"] = field_spec.tau_p
    if isinstance(field_spec, CwSpec) and field_spec.detuning_from_midpoint != 0.0:
        scales["detuning period"] = 2.0 * math.pi / abs(field_spec.detuning_from_midpoint)
    for name, scale in scales.items():
        if grid.dt > scale / SCALE_RESOLUTION + 1e-12:
            raise GridTooCoarse(f"dt={grid.dt} fs exceeds {name}/{SCALE_RESOLUTION:g} = {scale / SCALE_RESOLUTION:.4g} fs")
    if isinstance(field_spec, NoisyPulseSpec) and grid.dt > field_spec.tau_d / KERNEL_RESOLUTION + 1e-12:
        raise GridTooCoarse(f"dt={grid.dt} fs exceeds tau_d/{KERNEL_RESOLUTION:g} = {field_spec.tau_d / KERNEL_RESOLUTION:.4g} fs")
    if isinstance(field_spec, (PulseTrainSpec, NoisyPulseSpec)):
        start = min(field_spec.centers) - PULSE_COVERAGE_WIDTHS * field_spec.tau_p
        end = max(field_spec.centers) + PULSE_COVERAGE_WIDTHS * field_spec.tau_p
        if grid.t_start > start + 1e-9 or grid.t_end < end - 1e-9:
            raise GridTooShort(f"grid [{grid.t_start}, {grid.t_end}] fs does not cover pulses [{start}, {end}] fs")


def _peak_envelope(field_spec: FieldSpec) -> float:
    if isinstance(field_spec, CwSpec):
        return 1.0
    # Overlapping pulses can exceed 1; the sum of peaks bounds it.
    return float(len(field_spec.centers)) if _pulses_overlap(field_spec) else 1.0


def _pulses_overlap(field_spec: Union[PulseTrainSpec, NoisyPulseSpec]) -> bool:
    centers = field_spec.centers
    return any(b - a < 2.0 * PULSE_COVERAGE_WIDTHS * field_spec.tau_p for a, b in zip(centers, centers[1:]))


def _field_to_raw(field_spec: FieldSpec) -> dict[str, Any]:
    if isinstance(field_spec, PulseTrainSpec):
        return {
            "kind": field_spec.kind,
            "amplitude_scale": field_spec.amplitude_scale,
            "tau_p": field_spec.tau_p,
            "centers": list(field_spec.centers),
        }
    if isinstance(field_spec, CwSpec):
        return {
            "kind": field_spec.kind,
            "amplitude_scale": field_spec.amplitude_scale,
            "detuning_from_midpoint": field_spec.detuning_from_midpoint,
        }
    return {
        "kind": field_spec.kind,
        "amplitude_scale": field_spec.amplitude_scale,
        "tau_p": field_spec.tau_p,
        "tau_d": field_spec.tau_d,
        "centers": list(field_spec.centers),
        "carrier_offset": field_spec.carrier_offset,
        "noise_sharing": field_spec.noise_sharing.value,
    }


def _parse_system(
    reader: "_Reader",
    raw: dict[str, Any],
    scenario: Scenario,
    defaults: dict[str, Any],
) -> Optional[SystemParams]:
    problems_before = len(reader.problems)
    omega_21 = reader.alternatives(
        raw,
        "system",
        {"omega_21": lambda v: v, "excited_period_fs": period_to_angular},
        default=period_to_angular(DEFAULT_EXCITED_PERIOD_FS),
        minimum=0.0,
    )
    rabi_scale = reader.alternatives(
        raw,
        "system",
        {"rabi_scale": lambda v: v, "rabi_frequency_thz": thz_to_angular, "rabi_frequency_ghz": ghz_to_angular},
        default=defaults["rabi_scale"],
        minimum=0.0,
    )
    gamma_t = reader.alternatives(
        raw,
        "system",
        {"gamma_t": lambda v: v, "sink_time_fs": sink_time_to_rate},
        default=sink_time_to_rate(defaults["sink_time_fs"]),
        minimum=0.0,
        allow_none={"sink_time_fs"},
    )
    sink_target = reader.enum(raw, "sink_target", SinkTarget, context="system", default=scenario.sink_target)
    carrier_detuning = reader.number(raw, "carrier_detuning", "system.carrier_detuning", 0.0)
    dipole_ratio = reader.number(raw, "dipole_ratio", "system.dipole_ratio", 1.0, minimum=0.0)
    damping = reader.enum(raw, "coherence_damping", CoherenceDamping, context="system", default=CoherenceDamping.HALF)

    if sink_target is not None and sink_target is not scenario.sink_target:
        reader.fail(
            f"system.sink_target: scenario {scenario.value} requires sink_target={scenario.sink_target.value}, "
            f"got {sink_target.value}"
        )
    if sink_target is SinkTarget.NONE and gamma_t not in (None, 0.0):
        reader.fail("system.gamma_t: sink_target=none requires gamma_t = 0")
    if len(reader.problems) > problems_before:
        return None
    return SystemParams(
        omega_21=omega_21,
        rabi_scale=rabi_scale,
        gamma_t=gamma_t,
        sink_target=sink_target,
        carrier_detuning=carrier_detuning,
        dipole_ratio=dipole_ratio,
        coherence_damping=damping,
    )


def _parse_field(
    reader: "_Reader",
    raw: dict[str, Any],
    scenario: Scenario,
    defaults: dict[str, Any],
) -> Optional[FieldSpec]:
    problems_before = len(reader.problems)
    field_defaults = defaults["field"]
    kind = reader.string(raw, "kind", "field.kind", scenario.field_kind)
    if kind != scenario.field_kind:
        reader.fail(f"field.kind: scenario {scenario.value} requires a {scenario.field_kind} field, got {kind}")
        return None
    amplitude = reader.number(raw, "amplitude_scale", "field.amplitude_scale", 1.0, minimum=0.0)

    if kind == CwSpec.kind:
        detuning = reader.number(raw, "detuning_from_midpoint", "field.detuning_from_midpoint", 0.0)
        if len(reader.problems) > problems_before:
            return None
        return CwSpec(amplitude_scale=amplitude, detuning_from_midpoint=detuning)

    tau_p = reader.number(raw, "tau_p", "field.tau_p", field_defaults["tau_p"], positive=True)
    centers = reader.centers(raw, "field.centers", field_defaults["centers"])
    if kind == PulseTrainSpec.kind:
        if len(reader.problems) > problems_before:
            return None
        return PulseTrainSpec(amplitude_scale=amplitude, tau_p=tau_p, centers=centers)

    tau_d = reader.number(raw, "tau_d", "field.tau_d", field_defaults["tau_d"], positive=True)
    carrier_offset = reader.number(raw, "carrier_offset", "field.carrier_offset", 0.0)
    sharing = reader.enum(raw, "noise_sharing", NoiseSharing, context="field", default=NoiseSharing.SHARED)
    if len(reader.problems) > problems_before:
        return None
    return NoisyPulseSpec(
        amplitude_scale=amplitude,
        tau_p=tau_p,
        tau_d=tau_d,
        centers=centers,
        carrier_offset=carrier_offset,
        noise_sharing=sharing,
    )


def _parse_grid(reader: "_Reader", raw: dict[str, Any], defaults: dict[str, Any]) -> Optional[TimeGrid]:
    grid_defaults = defaults["grid"]
    t_start = reader.number(raw, "t_start", "grid.t_start", grid_defaults["t_start"])
    t_end = reader.number(raw, "t_end", "grid.t_end", grid_defaults["t_end"])
    dt = reader.number(raw, "dt", "grid.dt", grid_defaults["dt"], positive=True)
    if None in (t_start, t_end, dt):
        return None
    if t_end <= t_start:
        reader.fail("grid.t_end: must be greater than grid.t_start")
        return None
    try:
        return TimeGrid.from_bounds(t_start, t_end, dt)
    except ValueError as exc:
        reader.fail(f"grid.dt: {exc}")
        return None


def _parse_ensemble(reader: "_Reader", raw: Any, scenario: Scenario) -> Optional[EnsembleConfig]:
    if raw is None:
        return EnsembleConfig() if scenario.is_stochastic else None
    if not isinstance(raw, dict):
        reader.fail("ensemble: must be a mapping")
        return None
    if not scenario.is_stochastic:
        reader.fail(f"ensemble: scenario {scenario.value} is deterministic and takes no ensemble section")
        return None
    defaults = EnsembleConfig()
    n_realizations = reader.integer(raw, "n_realizations", "ensemble.n_realizations", defaults.n_realizations, minimum=2)
    base_seed = reader.integer(raw, "base_seed", "ensemble.base_seed", defaults.base_seed, minimum=0)
    if base_seed is not None and base_seed >= 2**64:
        reader.fail("ensemble.base_seed: must fit in 64 bits")
    target = reader.number(raw, "convergence_target", "ensemble.convergence_target", defaults.convergence_target, positive=True)
    measure = reader.enum(raw, "measure", EnsembleMeasure, context="ensemble", default=defaults.measure)
    chunk_size = reader.integer(raw, "chunk_size", "ensemble.chunk_size", defaults.chunk_size, minimum=1)
    guard = reader.integer(raw, "guard_realizations", "ensemble.guard_realizations", defaults.guard_realizations, minimum=0)
    if None in (n_realizations, base_seed, target, measure, chunk_size, guard):
        return None
    return EnsembleConfig(
        n_realizations=n_realizations,
        base_seed=base_seed,
        convergence_target=target,
        measure=measure,
        chunk_size=chunk_size,
        guard_realizations=guard,
    )


class _Reader:
    """Collects every problem instead of stopping at the first one."""

    def __init__(self) -> None:
        self.problems: list[str] = []

    def fail(self, problem: str) -> None:
        self.problems.append(problem)

    def section(self, raw: dict[str, Any], key: str) -> dict[str, Any]:
        value = raw.get(key)
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(f"{key}: must be a mapping")
            return {}
        return value

    def number(
        self,
        raw: dict[str, Any],
        key: str,
        context: str,
        default: Optional[float],
        *,
        positive: bool = False,
        minimum: Optional[float] = None,
    ) -> Optional[float]:
        if key not in raw or raw[key] is None:
            return default
        return self._check_number(raw[key], context, positive=positive, minimum=minimum)

    def _check_number(
        self,
        value: Any,
        context: str,
        *,
        positive: bool = False,
        minimum: Optional[float] = None,
    ) -> Optional[float]:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"{context}: must be a number")
            return None
        number = float(value)
        if not math.isfinite(number):
            self.fail(f"{context}: must be finite")
            return None
        if positive and number <= 0:
            self.fail(f"{context}: must be positive, got {number:g}")
            return None
        if minimum is not None and number < minimum:
            self.fail(f"{context}: must be >= {minimum:g}, got {number:g}")
            return None
        return number

    def integer(
        self,
        raw: dict[str, Any],
        key: str,
        context: str,
        default: Optional[int],
        *,
        minimum: Optional[int] = None,
    ) -> Optional[int]:
        if key not in raw or raw[key] is None:
            return default
        value = raw[key]
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(f"{context}: must be an integer")
            return None
        if minimum is not None and value < minimum:
            self.fail(f"{context}: must be >= {minimum}, got {value}")
            return None
        return value

    def string(self, raw: dict[str, Any], key: str, context: str, default: str) -> str:
        value = raw.get(key)
        if value is None:
            return default
        if not isinstance(value, str) or not value.strip():
            self.fail(f"{context}: must be a non-empty string")
            return default
        return value.strip()

    def boolean(self, raw: dict[str, Any], key: str, context: str, default: bool) -> bool:
        value = raw.get(key)
        if value is None:
            return default
        if not isinstance(value, bool):
            self.fail(f"{context}: must be true or false")
            return default
        return value

    def enum(self, raw: dict[str, Any], key: str, enum_type: type[Enum], *, context: str, default: Any = None) -> Any:
        value = raw.get(key)
        path = key if context == "config" else f"{context}.{key}"
        if value is None:
            if default is None:
                self.fail(f"{path}: required")
            return default
        if not isinstance(value, str):
            self.fail(f"{path}: must be a string")
            return None
        wanted = _normalize_token(value)
        for member in enum_type:
            if _normalize_token(member.value) == wanted:
                return member
        choices = ", ".join(member.value for member in enum_type)
        self.fail(f"{path}: unknown value {value!r} (choose from {choices})")
        return None

    def centers(self, raw: dict[str, Any], context: str, default: tuple[float, ...]) -> Optional[tuple[float, ...]]:
        value = raw.get("centers")
        if value is None:
            return default
        if not isinstance(value, list) or not value:
            self.fail(f"{context}: must be a non-empty list of times in fs")
            return None
        centers: list[float] = []
        for index, item in enumerate(value):
            number = self._check_number(item, f"{context}[{index}]")
            if number is None:
                return None
            centers.append(number)
        if any(b <= a for a, b in zip(centers, centers[1:])):
            self.fail(f"{context}: centers must be strictly increasing")
            return None
        return tuple(centers)

    def alternatives(
        self,
        raw: dict[str, Any],
        context: str,
        converters: dict[str, Any],
        *,
        default: float,
        minimum: Optional[float] = None,
        allow_none: frozenset[str] | set[str] = frozenset(),
    ) -> Optional[float]:
        present = [key for key in converters if key in raw]
        if len(present) > 1:
            self.fail(f"{context}.{present[1]}: conflicts with {context}.{present[0]}; give only one")
            return None
        if not present:
            return default
        key = present[0]
        value = raw[key]
        if value is None and key in allow_none:
            return converters[key](None)
        number = self._check_number(value, f"{context}.{key}", positive=key != list(converters)[0], minimum=minimum)
        if number is None:
            return None
        try:
            return float(converters[key](number))
        except ValueError as exc:
            self.fail(f"{context}.{key}: {exc}")
            return None


def _normalize_token(value: str) -> str:
    return value.strip().lower().replace("_", "").replace("-", "").replace(" ", "")
