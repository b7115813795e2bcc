import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given, settings
import hypothesis.strategies as st

from corrinit.correlation import (
    UndefinedCorrelationError, affine_invariance_check, compare_profiles, distance_profile, pearson,
    profile_frame,
)
from corrinit.init_core import layer_init, uncorrelated_layer_init
from corrinit.models import InitSpec, LayerTensor, LocationStrategy, Strategy

GRID_DISTANCES = [1.0, math.sqrt(2), 2.0, math.sqrt(5), math.sqrt(8)]

series = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=30)


def _spec(n_filters, in_channels, **kwargs) -> InitSpec:
    return InitSpec(k=3, n_l=n_filters * in_channels * 9, **kwargs)


# --- pearson ---

def test_pearson_examples():
    xs = [0.3, 1.2, -0.7, 2.0]
    assert pearson(xs, xs) == pytest.approx(1.0)
    assert pearson(xs, [-2 * x + 5 for x in xs]) == pytest.approx(-1.0)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)


def test_pearson_clamped():
    xs = np.linspace(0, 1, 50) * 1e8 + 1e-3
    assert -1.0 <= pearson(xs, xs) <= 1.0


def test_pearson_constant_series_undefined():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@pytest.mark.parametrize("xs, ys", [([1.0], [2.0]), ([1.0, 2.0], [1.0, 2.0, 3.0])])
def test_pearson_rejects_bad_lengths(xs, ys):
    with pytest.raises(ValueError):
        pearson(xs, ys)


@settings(max_examples=100)
@given(data=st.data())
def test_pearson_symmetric(data):
    xs = data.draw(series)
    ys = data.draw(st.lists(st.floats(-100, 100, allow_nan=False), min_size=len(xs), max_size=len(xs)))
    assume(np.ptp(xs) > 1 and np.ptp(ys) > 1)
    assert pearson(xs, ys) == pytest.approx(pearson(ys, xs), abs=1e-12)


@settings(max_examples=100)
@given(
    data=st.data(),
    a_x=st.floats(0.5, 4), b_x=st.floats(-10, 10),
    a_y=st.floats(0.5, 4), b_y=st.floats(-10, 10),
)
def test_positive_affine_maps_preserve_pearson(data, a_x, b_x, a_y, b_y):
    xs = data.draw(series)
    ys = data.draw(st.lists(st.floats(-100, 100, allow_nan=False), min_size=len(xs), max_size=len(xs)))
    assume(np.ptp(xs) > 1 and np.ptp(ys) > 1)
    assert affine_invariance_check(xs, ys, a_x, b_x, a_y, b_y) < 1e-12


def test_positive_affine_maps_preserve_pearson_on_1000_series():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 200))
        xs = rng.normal(size=n) * rng.uniform(0.5, 20)
        ys = 0.6 * xs + rng.normal(size=n)
        a_x, a_y = rng.uniform(0.5, 4, size=2)
        b_x, b_y = rng.uniform(-10, 10, size=2)
        worst = max(worst, affine_invariance_check(xs, ys, a_x, b_x, a_y, b_y))
    assert worst < 1e-12


def test_affine_examples():
    rng = np.random.default_rng(0)
    xs, ys = rng.normal(size=40), rng.normal(size=40)
    assert affine_invariance_check(xs, ys, 2.5, -3.0, 2.5, -3.0) < 1e-12
    assert affine_invariance_check(xs, ys, 1, 0, 1, 0) == 0.0


def test_negative_scale_flips_sign():
    rng = np.random.default_rng(1)
    xs = rng.normal(size=60)
    ys = xs + rng.normal(size=60)
    rho = pearson(xs, ys)
    assert affine_invariance_check(xs, ys, 1.0, 0.0, -2.0, 1.0) == pytest.approx(2 * abs(rho), abs=1e-12)


# --- distance profiles ---

def test_center_layer_without_noise_is_perfectly_correlated():
    spec = _spec(32, 4, strategy=LocationStrategy(variant=Strategy.CENTER), alpha=0.0)
    profile = distance_profile(layer_init(32, 4, spec))
    assert [e.distance for e in profile.entries] == pytest.approx(GRID_DISTANCES)
    assert profile.skipped_pairs == 0
    assert profile.n_slots == 128
    for entry in profile.entries:
        assert entry.mean_pearson == pytest.approx(1.0, abs=1e-9)


def test_pair_counts_of_3x3_grid():
    layer = uncorrelated_layer_init(16, 2, 3, seed=3)
    counts = {round(e.distance, 6): e.n_pairs for e in distance_profile(layer).entries}
    assert counts == {1.0: 12, round(math.sqrt(2), 6): 8, 2.0: 6, round(math.sqrt(5), 6): 8, round(math.sqrt(8), 6): 2}


def test_default_correlated_layer_decays_with_distance():
    spec = _spec(64, 16)
    profile = distance_profile(layer_init(64, 16, spec))
    assert profile.at(1.0) > profile.at(2.0)
    assert profile.at(2.0) >= profile.at(math.sqrt(8)) - 0.05


def test_uncorrelated_layer_has_no_correlation():
    n_filters = 10_000
    profile = distance_profile(uncorrelated_layer_init(n_filters, 1, 3, seed=0))
    bound = 3 / math.sqrt(n_filters) + 0.02
    for entry in profile.entries:
        assert abs(entry.mean_pearson) < bound


def test_constant_kernels_are_skipped():
    layer = LayerTensor(shape=(4, 1, 3, 3), values=np.full(36, 0.5))
    profile = distance_profile(layer)
    assert profile.entries == []
    assert profile.skipped_pairs == 36
    assert profile.at(1.0) is None


def test_one_constant_position_skips_its_pairs():
    values = np.random.default_rng(2).normal(size=(20, 1, 3, 3))
    values[:, :, 1, 1] = 0.0
    profile = distance_profile(LayerTensor.from_array(values))
    assert profile.skipped_pairs == 8
    assert sum(e.n_pairs for e in profile.entries) == 28


def test_single_slot_layer_rejected():
    with pytest.raises(ValueError):
        distance_profile(LayerTensor(shape=(1, 1, 3, 3), values=np.arange(9.0)))


def test_profile_frame_and_comparison():
    correlated = distance_profile(layer_init(32, 2, _spec(32, 2, strategy=LocationStrategy(variant=Strategy.CENTER), alpha=0.0)))
    values = np.random.default_rng(4).normal(size=(8, 1, 3, 3))
    values[:, :, 0, 0] = 1.0
    partial = distance_profile(LayerTensor.from_array(values))

    frame = profile_frame(correlated)
    assert list(frame.columns) == ["distance", "mean_pearson", "n_pairs"]
    assert len(frame) == 5

    table = compare_profiles({"center": correlated, "partial": partial})
    assert list(table.columns) == ["distance", "center", "partial"]
    assert len(table) == 5
    assert not pd.isna(table["partial"]).any()
    np.testing.assert_allclose(table["center"], 1.0, atol=1e-9)
