import textwrap

import pytest

from vee_coherence.config import (
    Scenario,
    build_config,
    check_resolution,
    load_config,
    parse_config,
    render_config,
)
from vee_coherence.errors import GridTooCoarse, GridTooShort, ParseError, ValidationError
from vee_coherence.fields import CwSpec, NoisyPulseSpec, PulseTrainSpec
from vee_coherence.state import SinkTarget, TimeGrid
from vee_coherence.units import ghz_to_angular, period_to_angular, thz_to_angular


def test_load_config_fills_scenario_defaults(tmp_path):
    config_path = tmp_path / "config.yaml"
    config_path.write_text(
        textwrap.dedent(
            """\
            # strong sink
            scenario: coherent_pulse_trap
            system:
              sink_time_fs: 20
            """
        ),
        encoding="utf-8",
    )

    config = load_config(str(config_path))
    assert config.scenario is Scenario.COHERENT_PULSE_TRAP
    assert config.system.sink_target is SinkTarget.TRAP
    assert config.system.gamma_t == pytest.approx(1.0 / 20.0)
    assert config.system.omega_21 == pytest.approx(period_to_angular(89.0))
    assert config.system.rabi_scale == pytest.approx(thz_to_angular(10.0))
    assert config.field == PulseTrainSpec(amplitude_scale=1.0, tau_p=10.0, centers=(250.0, 750.0))
    assert config.ensemble is None
    assert config.path == config_path


def test_noisy_defaults_carry_ensemble():
    config = parse_config("scenario: noisy_pulse_trap\n")
    assert isinstance(config.field, NoisyPulseSpec)
    assert config.system.rabi_scale == pytest.approx(ghz_to_angular(631.0))
    assert config.ensemble.n_realizations == 2000
    assert config.grid.t_start == -450.0


def test_no_trap_scenario_has_zero_rate():
    config = parse_config("scenario: noisy_pulse_no_trap\n")
    assert config.system.sink_target is SinkTarget.NONE
    assert config.system.gamma_t == 0.0


def test_scenario_name_is_case_and_separator_tolerant():
    assert parse_config("scenario: CwGround\n").scenario is Scenario.CW_GROUND
    assert parse_config("scenario: cw-trap\n").scenario is Scenario.CW_TRAP


def test_negative_pulse_width_names_the_field():
    text = textwrap.dedent(
        """\
        scenario: coherent_pulse_trap
        field:
          tau_p: -5
        """
    )
    with pytest.raises(ValidationError) as excinfo:
        parse_config(text)
    assert "field.tau_p" in excinfo.value.field_paths


def test_every_problem_is_reported():
    text = textwrap.dedent(
        """\
        scenario: cw_ground
        system:
          sink_target: trap
          dipole_ratio: -1
        grid:
          dt: 0
        """
    )
    with pytest.raises(ValidationError) as excinfo:
        parse_config(text)
    paths = excinfo.value.field_paths
    assert "system.sink_target" in paths
    assert "system.dipole_ratio" in paths
    assert "grid.dt" in paths


def test_conflicting_unit_aliases_rejected():
    text = textwrap.dedent(
        """\
        scenario: cw_trap
        system:
          gamma_t: 0.01
          sink_time_fs: 100
        """
    )
    with pytest.raises(ValidationError, match="conflicts"):
        parse_config(text)


def test_ensemble_section_rejected_for_deterministic_scenario():
    text = textwrap.dedent(
        """\
        scenario: cw_ground
        ensemble:
          n_realizations: 10
        """
    )
    with pytest.raises(ValidationError, match="deterministic"):
        parse_config(text)


def test_field_kind_must_match_scenario():
    text = textwrap.dedent(
        """\
        scenario: cw_ground
        field:
          kind: pulse_train
        """
    )
    with pytest.raises(ValidationError) as excinfo:
        parse_config(text)
    assert excinfo.value.field_paths == ["field.kind"]


def test_coarse_grid_rejected():
    text = textwrap.dedent(
        """\
        scenario: coherent_pulse_trap
        grid:
          dt: 0.5
        """
    )
    with pytest.raises(ValidationError) as excinfo:
        parse_config(text)
    assert excinfo.value.field_paths == ["grid.dt"]


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_config("")
    with pytest.raises(ParseError):
        parse_config("scenario: [unclosed\n")
    with pytest.raises(ParseError):
        parse_config("- just\n- a list\n")


def test_missing_scenario_is_a_validation_error():
    with pytest.raises(ValidationError, match="scenario"):
        build_config({"system": {}})


def test_load_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.yaml")


@pytest.mark.parametrize("scenario", [member.value for member in Scenario])
def test_render_then_parse_is_identity(scenario):
    config = parse_config(f"scenario: {scenario}\n")
    assert parse_config(render_config(config)) == config


def test_render_emits_canonical_units():
    config = parse_config("scenario: cw_trap\nsystem:\n  excited_period_fs: 44.5\n  rabi_frequency_thz: 5\n")
    rendered = render_config(config)
    assert "omega_21:" in rendered
    assert "excited_period_fs" not in rendered
    assert parse_config(rendered).system.omega_21 == pytest.approx(period_to_angular(44.5))


def test_check_resolution_direct():
    config = parse_config("scenario: cw_ground\n")
    check_resolution(config.grid, config.system, CwSpec(amplitude_scale=1.0))
    with pytest.raises(GridTooCoarse, match="tau_c"):
        check_resolution(TimeGrid.from_bounds(0.0, 100.0, 2.0), config.system, CwSpec(amplitude_scale=0.0))
    pulses = PulseTrainSpec(amplitude_scale=1.0, tau_p=10.0, centers=(250.0, 750.0))
    with pytest.raises(GridTooShort):
        check_resolution(TimeGrid.from_bounds(0.0, 500.0, 0.1), config.system, pulses)
