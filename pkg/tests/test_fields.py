import math

import numpy as np
import pytest

from vee_coherence.errors import EmptyEnsemble, GridMismatch, GridTooCoarse, GridTooShort, InvalidSpec, OutOfGrid
from vee_coherence.fields import (
    CwSpec,
    NoiseSharing,
    NoisyPulseSpec,
    PulseTrainSpec,
    analytic_correlation,
    estimate_two_time_correlation,
    eval_cw,
    eval_pulse_train,
    fwhm,
    make_generator,
    neumaier_sum,
    realization_seed,
    stationary_gaussian_noise,
    synthesize_noisy_pulse,
)
from vee_coherence.state import TimeGrid


def _noisy_spec(**overrides):
    values = {"amplitude_scale": 1.0, "tau_p": 10.0, "tau_d": 2.0, "centers": (50.0,)}
    values.update(overrides)
    return NoisyPulseSpec(**values)


def test_pulse_train_peaks_at_centers():
    spec = PulseTrainSpec(amplitude_scale=2.0, tau_p=10.0, centers=(250.0, 750.0))
    grid = TimeGrid.from_bounds(0.0, 1000.0, 0.2)
    field = eval_pulse_train(spec, grid)
    assert field.value_at(250.0) == pytest.approx(2.0)
    assert field.value_at(750.0) == pytest.approx(2.0)
    assert abs(field.value_at(500.0)) < 1e-12
    assert field.value_at(260.0) == pytest.approx(2.0 * math.exp(-1.0))


def test_pulse_train_off_node_uses_closed_form():
    spec = PulseTrainSpec(amplitude_scale=1.0, tau_p=10.0, centers=(50.0,))
    field = eval_pulse_train(spec, TimeGrid.from_bounds(0.0, 100.0, 0.2))
    assert field.value_at(50.1) == pytest.approx(math.exp(-(0.1**2) / 100.0), abs=1e-15)


def test_fwhm_of_gaussian_envelope():
    assert fwhm(10.0) == pytest.approx(16.651, abs=1e-3)


def test_pulse_train_rejects_coarse_grid():
    spec = PulseTrainSpec(amplitude_scale=1.0, tau_p=10.0, centers=(50.0,))
    with pytest.raises(GridTooCoarse):
        eval_pulse_train(spec, TimeGrid.from_bounds(0.0, 100.0, 0.5))


def test_pulse_train_rejects_short_grid():
    spec = PulseTrainSpec(amplitude_scale=1.0, tau_p=10.0, centers=(50.0,))
    with pytest.raises(GridTooShort):
        eval_pulse_train(spec, TimeGrid.from_bounds(10.0, 100.0, 0.2))


def test_pulse_train_rejects_negative_width():
    spec = PulseTrainSpec(amplitude_scale=1.0, tau_p=-5.0, centers=(50.0,))
    with pytest.raises(InvalidSpec, match="tau_p"):
        eval_pulse_train(spec, TimeGrid.from_bounds(0.0, 100.0, 0.2))


def test_cw_field_is_constant_or_rotating():
    grid = TimeGrid.from_bounds(0.0, 10.0, 0.5)
    flat = eval_cw(CwSpec(amplitude_scale=0.5), grid)
    assert np.all(flat.values == 0.5)
    detuned = eval_cw(CwSpec(amplitude_scale=1.0, detuning_from_midpoint=0.2), grid)
    assert detuned.value_at(5.0) == pytest.approx(complex(math.cos(1.0), -math.sin(1.0)))
    assert np.allclose(np.abs(detuned.values), 1.0)


def test_values_outside_grid_raise():
    field = eval_cw(CwSpec(amplitude_scale=1.0), TimeGrid.from_bounds(0.0, 10.0, 0.5))
    with pytest.raises(OutOfGrid):
        field.value_at(10.5)


def test_midpoint_values_shape():
    grid = TimeGrid.from_bounds(0.0, 10.0, 0.5)
    field = eval_cw(CwSpec(amplitude_scale=1.0, detuning_from_midpoint=0.1), grid)
    mids = field.midpoint_values(2)
    assert mids.shape == (40, 2)
    assert mids[0, 0] == pytest.approx(field.profile(np.asarray([0.125]))[0])
    assert mids[-1, 1] == field.values[-1]


def test_noisy_pulse_is_reproducible_per_seed():
    spec = _noisy_spec()
    grid = TimeGrid.from_bounds(0.0, 100.0, 0.1)
    first = synthesize_noisy_pulse(spec, grid, realization_seed(7, 3))
    again = synthesize_noisy_pulse(spec, grid, realization_seed(7, 3))
    other = synthesize_noisy_pulse(spec, grid, realization_seed(7, 4))
    assert np.array_equal(first.values, again.values)
    assert first.seed == again.seed == 7
    assert first.realization == 3
    assert not np.array_equal(first.values, other.values)


def test_noisy_pulse_rejects_unresolved_decorrelation():
    spec = _noisy_spec(tau_d=1.0)
    with pytest.raises(GridTooCoarse, match="tau_d"):
        synthesize_noisy_pulse(spec, TimeGrid.from_bounds(0.0, 100.0, 0.1), 1)


def test_noisy_pulse_rejects_non_positive_decorrelation():
    with pytest.raises(InvalidSpec, match="tau_d"):
        synthesize_noisy_pulse(_noisy_spec(tau_d=0.0), TimeGrid.from_bounds(0.0, 100.0, 0.1), 1)


def test_infinite_decorrelation_gives_constant_phase():
    grid = TimeGrid.from_bounds(0.0, 100.0, 0.1)
    noise = stationary_gaussian_noise(grid, 1e6, make_generator(5))
    assert np.all(noise == noise[0])


def test_stationary_noise_has_unit_variance():
    grid = TimeGrid.from_bounds(0.0, 50.0, 0.1)
    rng = make_generator(11)
    draws = np.stack([stationary_gaussian_noise(grid, 2.0, rng) for _ in range(400)])
    power = np.mean(np.abs(draws) ** 2)
    assert power == pytest.approx(1.0, abs=0.05)


def test_sampled_correlation_matches_kernel():
    spec = _noisy_spec(carrier_offset=0.05)
    grid = TimeGrid.from_bounds(0.0, 100.0, 0.1)
    realizations = [synthesize_noisy_pulse(spec, grid, realization_seed(2024, k)) for k in range(800)]
    pairs = [(500, 500), (500, 520), (480, 510), (450, 550), (500, 540)]
    estimates = estimate_two_time_correlation(realizations, pairs)
    times = grid.times
    for estimate in estimates:
        expected = analytic_correlation(spec, times[estimate.index_a], times[estimate.index_b])
        assert abs(estimate.mean.real - expected.real) <= 5 * estimate.stderr_real + 1e-12
        assert abs(estimate.mean.imag - expected.imag) <= 5 * estimate.stderr_imag + 1e-12


def test_diagonal_correlation_is_real():
    spec = _noisy_spec()
    grid = TimeGrid.from_bounds(0.0, 100.0, 0.1)
    realizations = [synthesize_noisy_pulse(spec, grid, realization_seed(1, k)) for k in range(4)]
    estimate = estimate_two_time_correlation(realizations, [(500, 500)])[0]
    assert estimate.mean.imag == 0.0
    assert estimate.stderr_imag == 0.0


def test_analytic_correlation_shared_and_independent():
    shared = _noisy_spec(centers=(50.0, 550.0), tau_d=20.0)
    independent = _noisy_spec(centers=(50.0, 550.0), tau_d=1e7, noise_sharing=NoiseSharing.INDEPENDENT)
    assert analytic_correlation(shared, 50.0, 50.0) == pytest.approx(1.0)
    assert analytic_correlation(shared, 50.0, 60.0) == pytest.approx(math.exp(-1.0) * math.exp(-100.0 / 800.0))
    # Infinite decorrelation keeps the same phase across pulses only when the noise is shared.
    assert abs(analytic_correlation(independent, 50.0, 550.0)) < 1e-100


def test_estimate_requires_two_realizations():
    grid = TimeGrid.from_bounds(0.0, 100.0, 0.1)
    realization = synthesize_noisy_pulse(_noisy_spec(), grid, 1)
    with pytest.raises(EmptyEnsemble):
        estimate_two_time_correlation([realization], [(0, 0)])


def test_estimate_rejects_mixed_grids_and_bad_indices():
    spec = _noisy_spec()
    grid = TimeGrid.from_bounds(0.0, 100.0, 0.1)
    other = TimeGrid.from_bounds(0.0, 100.0, 0.05)
    a = synthesize_noisy_pulse(spec, grid, 1)
    b = synthesize_noisy_pulse(spec, other, 2)
    with pytest.raises(GridMismatch):
        estimate_two_time_correlation([a, b], [(0, 0)])
    with pytest.raises(OutOfGrid):
        estimate_two_time_correlation([a, a], [(0, grid.n_points)])


def test_neumaier_sum_recovers_cancelled_terms():
    terms = [np.array([1e16]), np.array([1.0]), np.array([-1e16])]
    assert neumaier_sum(terms)[0] == 1.0
    complex_terms = [np.array([1e16 + 1e16j]), np.array([1.0 + 2.0j]), np.array([-1e16 - 1e16j])]
    assert neumaier_sum(complex_terms)[0] == 1.0 + 2.0j


def test_noisy_off_node_values_reuse_one_interpolant():
    grid = TimeGrid.from_bounds(0.0, 100.0, 0.1)
    field = synthesize_noisy_pulse(_noisy_spec(), grid, realization_seed(7, 0))
    interpolant = field._interpolant
    first = field.values_at(np.asarray([50.05, 50.15]))
    again = field.values_at(np.asarray([50.05, 50.15]))
    assert field._interpolant is interpolant
    assert np.array_equal(first, again)
    assert field.value_at(50.0) == field.values[500]
