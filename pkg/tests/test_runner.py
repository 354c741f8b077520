import math
import textwrap
from pathlib import Path

import numpy as np
import pytest

from vee_coherence.config import Scenario, build_config, parse_config
from vee_coherence.ensemble import DEFAULT_CONVERGENCE_TARGET, DEFAULT_REALIZATIONS, convergence_report
from vee_coherence.errors import InvalidSpec
from vee_coherence.observables import PulseWindow, Quantity, count_bursts, steady_state_summary, window_peak
from vee_coherence.runner import (
    COHERENT_PULSE_WINDOWS,
    GRID_GUARD_TOLERANCE,
    NOISE_CHECK_REALIZATIONS,
    Figure,
    figure_curves,
    noise_check,
    replay,
    reproduce_figure,
    run_scenario,
    simulate,
)
from vee_coherence.state import validate_elements
from vee_coherence.storage import STDERR_COLUMNS, check_csv_schema, read_csv, read_yaml

PULSE_CONFIG = textwrap.dedent(
    """\
    scenario: coherent_pulse_trap
    system:
      sink_time_fs: 20
    field:
      tau_p: 5
      centers: [30, 130]
    grid:
      t_start: 0
      t_end: 160
      dt: 0.1
    output:
      name: pulses
    """
)

NOISY_CONFIG = textwrap.dedent(
    """\
    scenario: noisy_pulse_trap
    field:
      tau_p: 10
      tau_d: 2
      centers: [50]
    grid:
      t_start: 0
      t_end: 100
      dt: 0.1
    ensemble:
      n_realizations: 8
      chunk_size: 4
      guard_realizations: 2
      convergence_target: 10
      base_seed: 42
    output:
      name: noisy
    """
)


def test_run_scenario_writes_csv_and_sidecar(tmp_path: Path) -> None:
    outcome = run_scenario(parse_config(PULSE_CONFIG), threads=1, output_dir=tmp_path)

    assert outcome.csv_path == tmp_path / "pulses.csv"
    assert check_csv_schema(outcome.csv_path, n_points=1601) == []
    assert outcome.grid_deviation is not None
    assert outcome.grid_deviation < GRID_GUARD_TOLERANCE
    assert not outcome.flagged

    sidecar = read_yaml(outcome.sidecar_path)
    assert sidecar["config"]["scenario"] == "coherent_pulse_trap"
    assert sidecar["csv"]["file"] == "pulses.csv"
    assert sidecar["grid_convergence"]["flagged"] is False
    assert sidecar["integration"]["substeps"] == outcome.simulation.substeps
    assert sidecar["grid_convergence"]["substeps"] == 2 * outcome.simulation.substeps
    assert "seeds" not in sidecar


def test_replay_reproduces_csv(tmp_path: Path) -> None:
    outcome = run_scenario(parse_config(PULSE_CONFIG), threads=1, output_dir=tmp_path)
    assert replay(outcome.sidecar_path).matches

    outcome.csv_path.write_text(outcome.csv_path.read_text(encoding="utf-8") + "\n", encoding="utf-8")
    assert not replay(outcome.sidecar_path).matches


def test_weak_field_coherence_fraction_is_pump_independent() -> None:
    peaks = []
    for amplitude in (1.0, 2.0):
        config = parse_config(
            PULSE_CONFIG.replace("  sink_time_fs: 20\n", "  sink_time_fs: 20\n  rabi_frequency_thz: 0.1\n").replace(
                "  tau_p: 5\n", f"  tau_p: 5\n  amplitude_scale: {amplitude}\n"
            )
        )
        record = simulate(config, threads=1).record
        peaks.append((np.nanmax(record.C), np.max(record.abs_rho12)))
    (c_weak, rho_weak), (c_strong, rho_strong) = peaks
    assert abs(c_strong - c_weak) / c_weak < 0.01
    assert rho_strong / rho_weak == pytest.approx(4.0, rel=0.1)


def test_noisy_run_is_thread_independent(tmp_path: Path) -> None:
    config = parse_config(NOISY_CONFIG)
    single = run_scenario(config, threads=1, output_dir=tmp_path / "one")
    pooled = run_scenario(config, threads=3, output_dir=tmp_path / "three")

    assert single.csv_path.read_bytes() == pooled.csv_path.read_bytes()
    header, rows = read_csv(single.csv_path)
    assert header[-3:] == list(STDERR_COLUMNS)
    assert len(rows) == 1001

    sidecar = read_yaml(single.sidecar_path)
    assert sidecar["seeds"]["base_seed"] == 42
    assert sidecar["seeds"]["n_realizations"] == 8
    assert sidecar["ensemble"]["converged"] is True
    assert single.grid_deviation < GRID_GUARD_TOLERANCE


def test_noisy_replay_matches(tmp_path: Path) -> None:
    outcome = run_scenario(parse_config(NOISY_CONFIG), threads=2, output_dir=tmp_path)
    assert replay(outcome.sidecar_path, threads=1).matches


def test_figure_parse_accepts_loose_names():
    assert Figure.parse("Fig-2") is Figure.FIG2
    assert Figure.parse("appendixA") is Figure.APPENDIX_A
    with pytest.raises(ValueError, match="unknown figure"):
        Figure.parse("fig9")


def test_figure_curves_cover_sweeps():
    labels = [label for label, _ in figure_curves(Figure.FIG2)]
    assert labels == ["fig2_sink20fs", "fig2_sink50fs", "fig2_sink140fs", "fig2_sink500fs", "fig2_notrap"]

    fig4 = figure_curves(Figure.FIG4)
    assert [raw["system"]["excited_period_fs"] for _, raw in fig4] == [44.5, 89.0, 178.0]
    assert all(raw["scenario"] == Scenario.CW_GROUND.value for _, raw in fig4)

    fig6 = figure_curves(Figure.FIG6, n_realizations=16)
    assert fig6[-1][1]["scenario"] == Scenario.NOISY_PULSE_NO_TRAP.value
    assert all(raw["ensemble"]["n_realizations"] == 16 for _, raw in fig6)


def test_reproduce_pulse_figure(tmp_path: Path) -> None:
    result = reproduce_figure(Figure.FIG3, tmp_path, threads=2, grid_check=False)
    runs = result.by_label()
    assert len(runs) == 5
    assert all(run.csv_path.exists() for run in result.runs)
    assert not result.flagged

    no_trap = runs["fig3_notrap"].record
    strong = runs["fig3_sink20fs"].record
    weak = runs["fig3_sink500fs"].record
    assert np.max(np.abs(no_trap.rhott)) == 0.0
    assert strong.rhott[-1] > weak.rhott[-1]

    gains = result.gains
    assert gains["fig3_sink20fs"] > gains["fig3_sink140fs"] > 1.05 * gains["fig3_notrap"]
    summary = read_yaml(result.summary_path)
    assert summary["windows"]["baseline"] == [650.0, 700.0]
    assert summary["windows"]["resurgence"] == [720.0, 1000.0]
    assert summary["curves"]["fig3_sink20fs"]["resurgence_gain_C"] == pytest.approx(gains["fig3_sink20fs"])


def test_noise_check_covers_all_separations():
    config = parse_config("scenario: noisy_pulse_trap\nensemble:\n  base_seed: 5\n")
    report = noise_check(config, n_realizations=64, threads=2)
    assert len(report.pairs) >= 50
    assert {pair.kind for pair in report.pairs} == {"diagonal", "intra_pulse", "intra_pulse_far", "cross_pulse"}
    assert all(pair.z_imag == 0.0 for pair in report.pairs if pair.kind == "diagonal")
    assert report.n_realizations == 64


def test_noise_check_needs_noisy_field():
    with pytest.raises(InvalidSpec):
        noise_check(parse_config(PULSE_CONFIG))


@pytest.mark.parametrize("threads", [4, 8])
def test_noisy_csv_is_identical_across_thread_counts(tmp_path: Path, threads: int) -> None:
    config = parse_config(NOISY_CONFIG.replace("chunk_size: 4", "chunk_size: 1"))
    single = run_scenario(config, threads=1, output_dir=tmp_path / "single")
    pooled = run_scenario(config, threads=threads, output_dir=tmp_path / "pooled")
    assert single.csv_path.read_bytes() == pooled.csv_path.read_bytes()


def test_default_untrapped_noisy_pulse_completes() -> None:
    config = build_config(
        {"scenario": "noisy_pulse_no_trap", "ensemble": {"n_realizations": 64}, "output": {"grid_check": False}}
    )
    simulation = simulate(config, threads=4)
    assert simulation.ensemble.n_used == 64
    assert validate_elements(simulation.record.states) == []


def test_undamped_cw_run_completes(tmp_path: Path) -> None:
    config = build_config(
        {
            "scenario": "cw_ground",
            "system": {"gamma_t": 0.0},
            "grid": {"t_end": 1000.0},
            "output": {"name": "undamped", "grid_check": False},
        }
    )
    outcome = run_scenario(config, threads=1, output_dir=tmp_path)
    assert validate_elements(outcome.record.states) == []
    assert read_yaml(outcome.sidecar_path)["integration"]["substeps"] == outcome.simulation.substeps


def test_weak_sink_leaves_two_bursts() -> None:
    curves = dict(figure_curves(Figure.FIG2))
    records = {}
    for label in ("fig2_sink20fs", "fig2_sink140fs"):
        raw = curves[label]
        raw["output"] = {"grid_check": False}
        records[label] = simulate(build_config(raw), threads=1).record
    weak = records["fig2_sink140fs"]
    strong = records["fig2_sink20fs"]
    second = COHERENT_PULSE_WINDOWS.resurgence

    assert count_bursts(weak.abs_rho12) == 2
    assert window_peak(weak, second, Quantity.ABS_RHO12) > window_peak(strong, second, Quantity.ABS_RHO12)


def test_cw_coherence_reaches_steady_state(tmp_path: Path) -> None:
    result = reproduce_figure(Figure.FIG4, tmp_path, threads=3, grid_check=False)
    finals = []
    for period in (44.5, 89.0, 178.0):
        steady = steady_state_summary(result.by_label()[f"fig4_tauc{period:g}fs"].record)
        assert abs(steady.final_rho12) > 1e-8
        assert steady.max_abs_rho12_rate < 1e-6
        finals.append(steady.final_C)
    # Larger splitting, smaller steady coherence.
    assert finals[0] < finals[1] < finals[2]
    summary = read_yaml(result.summary_path)
    assert "steady_state" in summary["curves"]["fig4_tauc89fs"]


def test_cw_trap_drains_coherence(tmp_path: Path) -> None:
    result = reproduce_figure(Figure.APPENDIX_A, tmp_path, threads=2, grid_check=False)
    assert len(result.runs) == 2
    for run in result.runs:
        record = run.record
        assert abs(record.rho12[-1]) < 1e-4 * np.max(record.abs_rho12)
        assert record.rhott[-1] > 0.99
        assert np.all(np.diff(record.rhott) >= -1e-12)


def test_noisy_trap_separates_bursts(tmp_path: Path) -> None:
    result = reproduce_figure(Figure.FIG6, tmp_path, threads=4, n_realizations=64, grid_check=False)
    trapped = result.by_label()["fig6_sink20fs"].record
    between = PulseWindow(250.0, 350.0, "between pulses")
    mask = (trapped.times >= between.start) & (trapped.times <= between.end)

    assert count_bursts(trapped.abs_rho12, min_separation=int(200.0 / trapped.grid.dt)) == 2
    assert np.nanmin(trapped.C[mask]) < 0.02
    assert result.gains["fig6_sink20fs"] > result.gains["fig6_notrap"]


def test_noise_check_passes_at_full_size() -> None:
    report = noise_check(parse_config("scenario: noisy_pulse_trap\n"), threads=4)
    assert report.n_realizations == NOISE_CHECK_REALIZATIONS
    assert report.passed


@pytest.mark.filterwarnings("ignore::vee_coherence.errors.ConvergenceNotReached")
def test_stderr_shrinks_with_inverse_square_root_of_realizations() -> None:
    achieved = {}
    for count in (100, 400):
        config = build_config(
            {"scenario": "noisy_pulse_trap", "ensemble": {"n_realizations": count}, "output": {"grid_check": False}}
        )
        achieved[count] = convergence_report(simulate(config, threads=4).ensemble).relative_stderr
    assert 1.4 <= achieved[100] / achieved[400] <= 2.8
    assert achieved[400] * math.sqrt(400 / DEFAULT_REALIZATIONS) <= DEFAULT_CONVERGENCE_TARGET
