import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from scipy import integrate

from corrinit.models import ClosedFormVariant, Estimator, PropagationConfig, PropagationMode
from corrinit.propagation import (
    MAX_EXACT_K, closed_form, deviation_in_stderr, exact_abs_sum_expectation, irwin_hall_pdf,
    mode_ratio, monte_carlo_expectation, quadrature_abs_sum_expectation, sample_output_magnitude,
    sweep, sweep_frame,
)
from corrinit.utils import spawn_generators

CORR = PropagationMode.CORRELATED
UNCORR = PropagationMode.UNCORRELATED
AS_PRINTED = ClosedFormVariant.AS_PRINTED
CORRECTED = ClosedFormVariant.CORRECTED


# --- single draws ---

def test_sample_correlated_is_k_times_shared_weight():
    w0 = np.random.default_rng(5).uniform(-1, 1)
    assert sample_output_magnitude(3, 1, 1.0, CORR, np.random.default_rng(5)) == pytest.approx(abs(3 * w0))


def test_sample_depth_zero_is_one():
    rng = np.random.default_rng(0)
    assert sample_output_magnitude(3, 0, 1.0, CORR, rng) == 1.0
    assert sample_output_magnitude(3, 0, 1.0, UNCORR, rng) == 1.0


def test_width_one_erases_correlation():
    a = sample_output_magnitude(1, 1, 2.0, CORR, np.random.default_rng(11))
    b = sample_output_magnitude(1, 1, 2.0, UNCORR, np.random.default_rng(11))
    assert a == pytest.approx(b, rel=1e-15)
    assert 0 <= a <= 2.0


# --- closed forms ---

def test_closed_form_correlated():
    assert closed_form(3, 5, 1.0, CORR) == pytest.approx(7.59375)
    assert closed_form(3, 5, 1.0, CORR, AS_PRINTED) == closed_form(3, 5, 1.0, CORR, CORRECTED)


def test_closed_form_uncorrelated_examples():
    assert closed_form(3, 1, 1.0, UNCORR, AS_PRINTED) == pytest.approx(math.sqrt(3 / (6 * math.pi)))
    assert closed_form(3, 1, 1.0, UNCORR, CORRECTED) == pytest.approx(math.sqrt(2 / math.pi))


@pytest.mark.parametrize("k", [1, 3, 7])
@pytest.mark.parametrize("l", [0, 1, 2, 5])
def test_as_written_form_is_corrected_over_two_to_the_l(k, l):
    corrected = closed_form(k, l, 1.3, UNCORR, CORRECTED)
    assert closed_form(k, l, 1.3, UNCORR, AS_PRINTED) == pytest.approx(corrected / 2 ** l, rel=1e-12)


@pytest.mark.parametrize("k", range(3, MAX_EXACT_K + 1))
def test_clt_within_five_percent_from_width_three(k):
    exact = exact_abs_sum_expectation(k)
    assert abs(closed_form(k, 1, 1.0, UNCORR) - exact) / exact < 0.05


@pytest.mark.parametrize("k", [10, 11, 12])
def test_clt_within_one_percent_from_width_ten(k):
    exact = exact_abs_sum_expectation(k)
    assert abs(closed_form(k, 1, 1.0, UNCORR) - exact) / exact < 0.01


# --- exact oracle ---

@pytest.mark.parametrize("k, expected", [(1, 0.5), (2, 2 / 3), (3, 0.8125)])
def test_exact_values(k, expected):
    assert exact_abs_sum_expectation(k) == pytest.approx(expected, abs=1e-15)


def test_exact_scales_with_bound():
    assert exact_abs_sum_expectation(3, 2.5) == pytest.approx(2.5 * 0.8125)


@pytest.mark.parametrize("k", [0, MAX_EXACT_K + 1])
def test_exact_rejects_unsupported_width(k):
    with pytest.raises(ValueError):
        exact_abs_sum_expectation(k)


@pytest.mark.parametrize("k", range(1, 7))
def test_quadrature_agrees_with_exact(k):
    assert quadrature_abs_sum_expectation(k, 1.0) == pytest.approx(exact_abs_sum_expectation(k, 1.0), abs=1e-10)


def test_irwin_hall_pdf():
    assert irwin_hall_pdf(0.0, 2) == pytest.approx(0.5)
    assert irwin_hall_pdf(1.0, 2) == pytest.approx(0.25)
    assert irwin_hall_pdf(3.5, 3) == 0.0
    mass, _ = integrate.quad(lambda x: irwin_hall_pdf(x, 4), -4, 4, points=[-2, 0, 2])
    assert mass == pytest.approx(1.0, abs=1e-10)


# --- Monte Carlo ---

def test_depth_zero_report():
    report = monte_carlo_expectation(PropagationConfig(k=3, l=0, trials=100))
    assert report.mc_estimate == 1.0
    assert report.mc_stderr == 0.0
    assert report.closed_form_corrected == 1.0
    assert report.layer_trace == []


@pytest.mark.parametrize("mode", list(PropagationMode))
def test_single_trial_equals_its_sample(mode):
    config = PropagationConfig(k=3, l=2, mode=mode, trials=1, seed=9)
    report = monte_carlo_expectation(config)
    expected = sample_output_magnitude(3, 2, 1.0, mode, spawn_generators(9, 1)[0])
    assert report.mc_estimate == pytest.approx(expected, rel=1e-12)
    assert report.mc_stderr == 0.0
    assert not report.stderr_defined


def test_report_carries_closed_forms_and_exact():
    report = monte_carlo_expectation(PropagationConfig(k=3, l=1, mode=UNCORR, trials=1000))
    assert report.closed_form_as_printed == pytest.approx(math.sqrt(3 / (6 * math.pi)))
    assert report.closed_form_corrected == pytest.approx(math.sqrt(2 / math.pi))
    assert report.exact == pytest.approx(0.8125)
    assert monte_carlo_expectation(PropagationConfig(k=13, l=1, mode=UNCORR, trials=10)).exact is None


def test_monte_carlo_is_deterministic():
    config = PropagationConfig(k=3, l=2, mode=UNCORR, trials=5000, seed=4)
    assert monte_carlo_expectation(config) == monte_carlo_expectation(config)
    other = monte_carlo_expectation(config.model_copy(update={"seed": 5}))
    assert other.mc_estimate != monte_carlo_expectation(config).mc_estimate


@pytest.mark.parametrize("mode", list(PropagationMode))
def test_threaded_run_matches_serial_bit_for_bit(mode):
    serial = PropagationConfig(k=5, l=3, mode=mode, trials=10_000, chunk_size=999, seed=2)
    threaded = serial.model_copy(update={"workers": 4})
    a, b = monte_carlo_expectation(serial), monte_carlo_expectation(threaded)
    assert a.mc_estimate == b.mc_estimate
    assert a.mc_stderr == b.mc_stderr
    assert a.layer_trace == b.layer_trace


def test_correlated_estimate_near_closed_form():
    report = monte_carlo_expectation(PropagationConfig(k=3, l=2, mode=CORR, trials=200_000, seed=1))
    assert deviation_in_stderr(report, 2.25) <= 4


@pytest.mark.parametrize("estimator", list(Estimator))
def test_uncorrelated_estimate_near_exact(estimator):
    config = PropagationConfig(k=3, l=2, mode=UNCORR, trials=200_000, seed=3, estimator=estimator)
    report = monte_carlo_expectation(config)
    assert report.exact == pytest.approx(0.8125 ** 2)
    assert deviation_in_stderr(report) <= 4


def test_factorized_estimator_uses_same_draws():
    config = PropagationConfig(k=3, l=1, mode=UNCORR, trials=2000, seed=6)
    product = monte_carlo_expectation(config)
    factorized = monte_carlo_expectation(config.model_copy(update={"estimator": Estimator.FACTORIZED}))
    # with one layer both estimators reduce to the sample mean
    assert factorized.mc_estimate == pytest.approx(product.mc_estimate, rel=1e-12)
    assert factorized.mc_stderr == pytest.approx(product.mc_stderr, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 6), l=st.integers(1, 4), mode=st.sampled_from(list(PropagationMode)), seed=st.integers(0, 2 ** 16))
def test_trace_ends_at_estimate(k, l, mode, seed):
    report = monte_carlo_expectation(PropagationConfig(k=k, l=l, mode=mode, trials=200, seed=seed))
    assert report.mc_estimate >= 0
    assert len(report.layer_trace) == l
    assert report.layer_trace[-1] == pytest.approx(report.mc_estimate, rel=1e-12)


def test_deviation_without_reference_raises():
    report = monte_carlo_expectation(PropagationConfig(k=13, l=1, mode=UNCORR, trials=10))
    with pytest.raises(ValueError):
        deviation_in_stderr(report)


# --- mode ratio ---

def test_mode_ratio_examples():
    assert mode_ratio(1, 1) == pytest.approx(0.5 / math.sqrt(2 / (3 * math.pi)))
    assert mode_ratio(4, 1) / mode_ratio(1, 1) == pytest.approx(2.0)
    assert mode_ratio(3, 0) == 1.0


def test_mode_ratio_grows_like_root_k_to_the_l():
    for l in (1, 2, 3):
        assert mode_ratio(16, l) / mode_ratio(4, l) == pytest.approx(2.0 ** l)


def test_mode_ratio_strictly_increasing():
    for l in (1, 2, 3):
        ratios = [mode_ratio(k, l) for k in range(2, 12)]
        assert all(a < b for a, b in zip(ratios, ratios[1:]))
    for k in (2, 3, 9):
        ratios = [mode_ratio(k, l) for l in range(1, 6)]
        assert all(a < b for a, b in zip(ratios, ratios[1:]))


# --- sweeps ---

def test_sweep_grid_and_frame():
    reports = sweep([1, 3], [1, 2], trials=500, seed=7)
    assert len(reports) == 8
    frame = sweep_frame(reports)
    assert list(frame.columns) == [
        "k", "l", "mode", "u", "trials", "seed", "estimate", "stderr", "stderr_defined",
        "closed_form_as_printed", "closed_form_corrected", "exact", "deviation_stderr",
    ]
    assert set(frame["mode"]) == {"correlated", "uncorrelated"}
    np.testing.assert_allclose(frame["deviation_stderr"], [deviation_in_stderr(r) for r in reports])


def test_sweep_cells_do_not_depend_on_grid():
    full = sweep([1, 3], [1, 2], trials=500, seed=7)
    single = sweep([3], [2], modes=[UNCORR], trials=500, seed=7)
    match = [r for r in full if r.config.k == 3 and r.config.l == 2 and r.config.mode == UNCORR]
    assert match[0].mc_estimate == single[0].mc_estimate


# --- long runs ---

@pytest.mark.slow
@pytest.mark.parametrize("k", [2, 3, 5])
@pytest.mark.parametrize("l", [1, 3, 5])
def test_correlated_million_trials(k, l):
    report = monte_carlo_expectation(PropagationConfig(k=k, l=l, u=1.0, mode=CORR, trials=1_000_000, seed=0))
    assert deviation_in_stderr(report, (k / 2) ** l) <= 4


@pytest.mark.slow
@pytest.mark.parametrize("k", [1, 2, 3, 5])
@pytest.mark.parametrize("l", [1, 2, 3])
def test_uncorrelated_million_trials(k, l):
    report = monte_carlo_expectation(PropagationConfig(k=k, l=l, u=1.0, mode=UNCORR, trials=1_000_000, seed=0))
    assert deviation_in_stderr(report, exact_abs_sum_expectation(k) ** l) <= 4
