"""
Contact value processing tests.
"""

import numpy as np
import pytest

from services.contact import (
    BIN_CENTERS,
    NUM_BINS,
    ContactDistribution,
    ContactMap,
    binarize,
    class_weights,
    decode_annealed_mean,
    discretize,
    normalize_thermal,
    one_hot,
)
from services.errors import ContactError


# =============================================================================
# THERMAL NORMALIZATION
# =============================================================================

def test_thermal_extremes_are_pinned():
    values = normalize_thermal([21.5, 30.0, 34.25, 25.0]).values
    assert values[2] == 0.95
    assert values[0] == 0.05


def test_thermal_midpoint_maps_to_half():
    assert normalize_thermal([10.0, 15.0, 20.0]).values[1] == pytest.approx(0.5)


def test_thermal_is_affine_invariant():
    raw = np.random.default_rng(0).normal(size=200)
    np.testing.assert_allclose(normalize_thermal(3.7 * raw - 12.0).values, normalize_thermal(raw).values,
                               atol=1e-12)


def test_thermal_is_monotone_and_bounded():
    raw = np.sort(np.random.default_rng(1).uniform(20.0, 35.0, size=500))
    values = normalize_thermal(raw).values
    assert np.all(np.diff(values) > 0)
    assert values.min() >= 0.05 and values.max() <= 0.95


def test_thermal_constant_input_rejected():
    with pytest.raises(ContactError):
        normalize_thermal([3.0, 3.0, 3.0])


def test_contact_map_rejects_out_of_range():
    with pytest.raises(ContactError):
        ContactMap([0.2, 1.1])


# =============================================================================
# BINARIZATION AND BINS
# =============================================================================

def test_binarize_boundary_is_inclusive():
    assert binarize(ContactMap([0.39, 0.4, 0.41])).tolist() == [False, True, True]


def test_binarize_zero_map_is_empty():
    assert not binarize(ContactMap(np.zeros(10))).any()


def test_binarize_count_non_increasing_in_threshold(synthetic_grasp):
    counts = [int(binarize(synthetic_grasp.contact, tau).sum()) for tau in np.linspace(0.0, 1.0, 21)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_discretize_examples():
    assert discretize(ContactMap([0.05, 0.95, 1.0, 0.0, 0.1])).tolist() == [0, 9, 9, 0, 1]


def test_one_hot_round_trip_gives_bin_centers():
    values = np.random.default_rng(2).uniform(size=100)
    decoded = decode_annealed_mean(one_hot(discretize(values))).values
    np.testing.assert_array_equal(decoded, BIN_CENTERS[discretize(values)])


# =============================================================================
# CLASS WEIGHTS
# =============================================================================

def test_uniform_labels_give_unit_weights():
    np.testing.assert_allclose(class_weights(np.arange(NUM_BINS).repeat(7)), np.ones(NUM_BINS), atol=1e-12)


def test_single_bin_weights():
    weights = class_weights(np.full(50, 3), lam=0.4)
    normalizer = 1.0 / (0.6 + 0.04)
    assert weights[3] == pytest.approx((1.0 / 0.64) / normalizer)
    assert weights[0] == pytest.approx((1.0 / 0.04) / normalizer)


def test_weights_normalize_against_frequencies():
    rng = np.random.default_rng(3)
    for _ in range(20):
        labels = rng.integers(0, NUM_BINS, size=rng.integers(1, 400)) // rng.integers(1, 4)
        frequency = np.bincount(labels, minlength=NUM_BINS) / len(labels)
        assert frequency @ class_weights(labels) == pytest.approx(1.0, abs=1e-9)


def test_zero_lambda_gives_empty_bins_no_weight():
    weights = class_weights([0, 0, 1], lam=0.0)
    assert weights[5] == 0.0
    assert weights[1] == pytest.approx(2.0 * weights[0])


def test_empty_labels_rejected():
    with pytest.raises(ContactError):
        class_weights([])


# =============================================================================
# ANNEALED MEAN
# =============================================================================

def test_one_hot_decodes_to_center():
    assert decode_annealed_mean(one_hot([3])).values[0] == 0.35


def test_uniform_distribution_decodes_to_half():
    uniform = ContactDistribution(np.full((1, NUM_BINS), 0.1))
    for temperature in (0.05, 0.1, 1.0, 4.0):
        assert decode_annealed_mean(uniform, temperature).values[0] == pytest.approx(0.5)


def test_two_peak_distribution_is_sharpened():
    p = np.zeros((1, NUM_BINS))
    p[0, 2], p[0, 7] = 0.6, 0.4
    q2 = 0.6 ** 10 / (0.6 ** 10 + 0.4 ** 10)
    expected = q2 * 0.25 + (1.0 - q2) * 0.75
    assert decode_annealed_mean(ContactDistribution(p), 0.1).values[0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.2585, abs=1e-4)


def test_annealing_limits():
    p = np.random.default_rng(4).dirichlet(np.ones(NUM_BINS), size=50)
    p[np.arange(50), p.argmax(axis=1)] += 0.1
    p /= p.sum(axis=1, keepdims=True)
    distribution = ContactDistribution(p)
    np.testing.assert_allclose(decode_annealed_mean(distribution, 1e-3).values, BIN_CENTERS[p.argmax(axis=1)],
                               atol=1e-3)
    np.testing.assert_allclose(decode_annealed_mean(distribution, 1.0).values, p @ BIN_CENTERS, atol=1e-12)


def test_distribution_must_sum_to_one():
    with pytest.raises(ContactError):
        ContactDistribution(np.full((2, NUM_BINS), 0.2))


def test_non_positive_temperature_rejected():
    with pytest.raises(ContactError):
        decode_annealed_mean(one_hot([1]), 0.0)
