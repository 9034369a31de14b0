"""Kernel estimator tests against naive loop oracles and closed forms."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualmem import (
    FeatureDataset,
    KernelConfig,
    cross_information_potential,
    cs_divergence,
    gaussian_kernel,
    information_potential,
    renyi_entropy,
    weighted_cross_ip,
    weighted_cs_divergence,
    weighted_information_potential,
    weighted_renyi_entropy,
)


# --- independent oracles: pure-python double/triple loops -------------------

def naive_kernel(x, y, bandwidth):
    d2 = sum((a - b) ** 2 for a, b in zip(x, y))
    return math.exp(-d2 / (2.0 * bandwidth * bandwidth))


def naive_ip(rows, sigma):
    n = len(rows)
    bw = math.sqrt(2.0) * sigma
    return sum(naive_kernel(a, b, bw) for a in rows for b in rows) / (n * n)


def naive_cross_ip(rows_a, rows_b, sigma):
    bw = math.sqrt(2.0) * sigma
    total = sum(naive_kernel(a, b, bw) for a in rows_a for b in rows_b)
    return total / (len(rows_a) * len(rows_b))


def naive_cs(rows_a, rows_b, sigma):
    d = (
        2.0 * -math.log(naive_cross_ip(rows_a, rows_b, sigma))
        - -math.log(naive_ip(rows_a, sigma))
        - -math.log(naive_ip(rows_b, sigma))
    )
    return max(d, 0.0)


def naive_weighted_ip(rows, w, sigma):
    bw = math.sqrt(2.0) * sigma
    total = sum(
        w[i] * w[j] * naive_kernel(rows[i], rows[j], bw)
        for i in range(len(rows))
        for j in range(len(rows))
    )
    return total / sum(w) ** 2


def naive_weighted_cross(rows, w, sigma):
    bw = math.sqrt(2.0) * sigma
    total = sum(
        w[j] * naive_kernel(rows[i], rows[j], bw)
        for i in range(len(rows))
        for j in range(len(rows))
    )
    return total / (len(rows) * sum(w))


def random_dataset(rng, n=None, d=None):
    n = n or int(rng.integers(2, 30))
    d = d or int(rng.integers(1, 5))
    feats = rng.uniform(0, 1, size=(n, d))
    labels = rng.integers(0, 3, size=n)
    return FeatureDataset(feats, labels)


# --- closed-form examples ----------------------------------------------------

def test_gaussian_kernel_closed_forms():
    assert gaussian_kernel([1.0, 2.0], [1.0, 2.0], 0.3) == 1.0
    sigma = 0.7
    x, y = [0.0], [2 * sigma]
    assert gaussian_kernel(x, y, sigma) == pytest.approx(math.exp(-2.0), rel=1e-12)
    assert gaussian_kernel([0, 0], [3, 4], 5.0) == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_gaussian_kernel_errors():
    with pytest.raises(ValueError):
        gaussian_kernel([1, 2], [1, 2, 3], 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel([1, 2], [1, 2], 0.0)
    with pytest.raises(ValueError):
        gaussian_kernel([1, 2], [1, 2], -1.0)


def test_information_potential_small_cases():
    cfg = KernelConfig(sigma=0.25)
    one = FeatureDataset(np.array([[0.3, 0.4]]), np.array([0]))
    assert information_potential(one, cfg) == 1.0
    dup = FeatureDataset(np.array([[0.3, 0.4], [0.3, 0.4]]), np.array([0, 0]))
    assert information_potential(dup, cfg) == 1.0
    # two points at distance 2*sigma: kernel term exp(-(2s)^2/(4s^2)) = e^-1
    two = FeatureDataset(np.array([[0.0, 0.0], [2 * 0.25, 0.0]]), np.array([0, 1]))
    expected = (1.0 + math.exp(-1.0)) / 2.0
    assert information_potential(two, cfg) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.683940, abs=1e-6)


def test_renyi_entropy_values():
    cfg = KernelConfig(sigma=0.25)
    one = FeatureDataset(np.array([[0.1]]), np.array([0]))
    assert renyi_entropy(one, cfg) == 0.0
    same = FeatureDataset(np.tile([[0.2, 0.9]], (5, 1)), np.zeros(5, dtype=int))
    assert renyi_entropy(same, cfg) == 0.0
    two = FeatureDataset(np.array([[0.0, 0.0], [0.5, 0.0]]), np.array([0, 1]))
    assert renyi_entropy(two, cfg) == pytest.approx(-math.log(0.6839397205857212), rel=1e-12)


def test_cross_ip_and_cs_divergence_singletons():
    cfg = KernelConfig(sigma=0.25)
    a = FeatureDataset(np.array([[0.2, 0.2]]), np.array([0]))
    b_same = FeatureDataset(np.array([[0.2, 0.2]]), np.array([1]))
    assert cross_information_potential(a, b_same, cfg) == 1.0
    assert cs_divergence(a, b_same, cfg) == 0.0
    b_far = FeatureDataset(np.array([[0.2 + 2 * 0.25, 0.2]]), np.array([1]))
    assert cross_information_potential(a, b_far, cfg) == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert cs_divergence(a, b_far, cfg) == pytest.approx(2.0, rel=1e-12)


def test_cross_ip_definitional_coincidence():
    rng = np.random.default_rng(7)
    X = random_dataset(rng, n=12, d=3)
    cfg = KernelConfig(sigma=0.2)
    assert cross_information_potential(X, X, cfg) == pytest.approx(
        information_potential(X, cfg), rel=1e-12
    )


def test_cs_divergence_matches_triple_loop_oracle():
    rng = np.random.default_rng(11)
    cfg = KernelConfig(sigma=0.15)
    X = random_dataset(rng, n=20, d=2)
    Y = random_dataset(rng, n=20, d=2)
    got = cs_divergence(X, Y, cfg)
    want = naive_cs(X.features.tolist(), Y.features.tolist(), 0.15)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_weighted_ip_hand_value():
    cfg = KernelConfig(sigma=0.25)
    X = FeatureDataset(np.array([[0.0, 0.0], [0.5, 0.0]]), np.array([0, 1]))
    got = weighted_information_potential(X, [1.0, 0.5], cfg)
    expected = (1.0 + 0.25 + 2 * 0.5 * math.exp(-1.0)) / 2.25
    assert got == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.719, abs=5e-4)


def test_weighted_reductions_are_exact():
    rng = np.random.default_rng(3)
    cfg = KernelConfig(sigma=0.1)
    X = random_dataset(rng, n=17, d=3)
    ones = np.ones(17)
    assert weighted_information_potential(X, ones, cfg) == information_potential(X, cfg)
    assert weighted_cross_ip(X, ones, cfg) == information_potential(X, cfg)
    w = (rng.uniform(size=17) > 0.5).astype(float)
    if w.sum() == 0:
        w[0] = 1.0
    sub = X.subset(np.flatnonzero(w == 1.0))
    assert weighted_information_potential(X, w, cfg) == information_potential(sub, cfg)
    assert weighted_cross_ip(X, w, cfg) == cross_information_potential(X, sub, cfg)


def test_weighted_ops_match_naive_oracles():
    rng = np.random.default_rng(5)
    cfg = KernelConfig(sigma=0.2)
    X = random_dataset(rng, n=10, d=2)
    w = rng.uniform(0.05, 0.95, size=10)
    rows = X.features.tolist()
    assert weighted_information_potential(X, w, cfg) == pytest.approx(
        naive_weighted_ip(rows, w.tolist(), 0.2), rel=1e-12
    )
    assert weighted_cross_ip(X, w, cfg) == pytest.approx(
        naive_weighted_cross(rows, w.tolist(), 0.2), rel=1e-12
    )


def test_weighted_errors():
    cfg = KernelConfig()
    X = FeatureDataset(np.array([[0.1], [0.2]]), np.array([0, 1]))
    with pytest.raises(ValueError):
        weighted_information_potential(X, [0.0, 0.0], cfg)
    with pytest.raises(ValueError):
        weighted_cross_ip(X, [0.5], cfg)
    with pytest.raises(ValueError):
        weighted_information_potential(X, [0.5, 1.5], cfg)


def test_far_separated_data_stays_finite():
    cfg = KernelConfig(sigma=0.01)
    a = FeatureDataset(np.zeros((3, 2)), np.zeros(3, dtype=int))
    b = FeatureDataset(np.full((3, 2), 100.0), np.zeros(3, dtype=int))
    d = cs_divergence(a, b, cfg)
    assert np.isfinite(d) and d > 0


# --- property tests ----------------------------------------------------------

vectors = st.lists(st.floats(-5, 5), min_size=1, max_size=6)


@settings(max_examples=100, deadline=None)
@given(x=vectors, data=st.data())
def test_kernel_symmetry_and_range(x, data):
    y = data.draw(st.lists(st.floats(-5, 5), min_size=len(x), max_size=len(x)))
    bw = data.draw(st.floats(0.01, 10))
    k_xy = gaussian_kernel(x, y, bw)
    k_yx = gaussian_kernel(y, x, bw)
    assert k_xy == k_yx
    assert 0.0 <= k_xy <= 1.0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_divergence_nonnegative_and_self_zero(seed):
    rng = np.random.default_rng(seed)
    cfg = KernelConfig(sigma=float(rng.uniform(0.05, 0.5)))
    X = random_dataset(rng)
    Y = random_dataset(rng, d=X.d)
    assert cs_divergence(X, X, cfg) == 0.0
    assert cs_divergence(X, Y, cfg) >= 0.0
    assert information_potential(X, cfg) <= 1.0
    assert renyi_entropy(X, cfg) >= 0.0
    assert weighted_renyi_entropy(X, rng.uniform(0.1, 1.0, size=X.n), cfg) >= 0.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_binary_weight_reduction_property(seed):
    rng = np.random.default_rng(seed)
    cfg = KernelConfig(sigma=float(rng.uniform(0.05, 0.5)))
    X = random_dataset(rng)
    w = (rng.uniform(size=X.n) > 0.5).astype(float)
    if w.sum() == 0:
        w[int(rng.integers(0, X.n))] = 1.0
    sub = X.subset(np.flatnonzero(w == 1.0))
    assert weighted_information_potential(X, w, cfg) == information_potential(sub, cfg)
    assert weighted_cross_ip(X, w, cfg) == cross_information_potential(X, sub, cfg)
    assert weighted_cs_divergence(X, w, cfg) == cs_divergence(X, sub, cfg)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_vectorized_matches_naive_loops(seed):
    rng = np.random.default_rng(seed)
    sigma = float(rng.uniform(0.05, 0.5))
    cfg = KernelConfig(sigma=sigma)
    X = random_dataset(rng, n=int(rng.integers(2, 25)))
    Y = random_dataset(rng, n=int(rng.integers(2, 25)), d=X.d)
    rows_x, rows_y = X.features.tolist(), Y.features.tolist()
    assert information_potential(X, cfg) == pytest.approx(naive_ip(rows_x, sigma), rel=1e-10)
    assert cross_information_potential(X, Y, cfg) == pytest.approx(
        naive_cross_ip(rows_x, rows_y, sigma), rel=1e-10
    )
