import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from torus_gossip.stats import (
    ks_to_normal,
    ks_two_sample,
    ks_two_sample_critical,
    normal_distance_report,
    summarize,
    w1_to_normal,
    w1_two_sample,
)


def test_summarize_small_sample_exactly():
    s = summarize([1.0, 2.0, 3.0])
    assert s.n == 3
    assert s.mean == 2.0
    assert s.variance == 1.0
    assert s.se_mean == pytest.approx(1.0 / math.sqrt(3.0))
    # m4 = 2/3 and the (n-3)/(n-1) factor vanishes at n=3
    assert s.se_variance == pytest.approx(math.sqrt(2.0 / 9.0))


def test_summarize_needs_two_points():
    with pytest.raises(ValueError):
        summarize([1.0])


def _midrank_normal_sample(n, mu=0.0, sigma=1.0):
    return mu + sigma * ndtri((np.arange(1, n + 1) - 0.5) / n)


def test_w1_to_normal_vanishes_on_its_own_quantiles():
    x = _midrank_normal_sample(500, mu=2.0, sigma=3.0)
    assert w1_to_normal(x, 2.0, 3.0) == 0.0
    # a pure location shift is recovered exactly
    assert w1_to_normal(x + 0.25, 2.0, 3.0) == pytest.approx(0.25, rel=1e-12)


def test_ks_on_midrank_quantiles_is_half_step():
    n = 400
    x = _midrank_normal_sample(n)
    assert ks_to_normal(x, 0.0, 1.0) == pytest.approx(0.5 / n, abs=1e-12)


def test_point_mass_against_normal():
    assert ks_to_normal([0.0, 0.0, 0.0], 0.0, 1.0) == pytest.approx(0.5)
    # W1 between a point mass at the mean and N(0,1) approaches E|Z|
    w1 = w1_to_normal(np.zeros(20_000), 0.0, 1.0)
    assert w1 == pytest.approx(math.sqrt(2.0 / math.pi), abs=5e-3)


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        w1_to_normal([0.0, 1.0], 0.0, 0.0)
    with pytest.raises(ValueError):
        ks_to_normal([0.0, 1.0], 0.0, -1.0)


def test_two_sample_distances_hand_checked():
    a = [0.0, 1.0]
    b = [1.0, 2.0]
    assert w1_two_sample(a, b) == pytest.approx(1.0)
    assert ks_two_sample(a, b) == pytest.approx(0.5)
    assert w1_two_sample(a, a) == 0.0
    assert ks_two_sample(a, a) == 0.0
    assert ks_two_sample([0.0, 0.1, 0.2], [5.0, 5.1]) == 1.0


@given(
    st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=60),
    st.floats(min_value=-10, max_value=10),
)
@settings(max_examples=150)
def test_w1_shift_identity(sample, shift):
    """Translating a sample moves it by exactly |shift| in W1."""
    a = np.array(sample)
    got = w1_two_sample(a, a + shift)
    assert got == pytest.approx(abs(shift), rel=1e-9, abs=1e-9)


@given(
    st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=40),
    st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=40),
)
@settings(max_examples=150)
def test_two_sample_distances_are_symmetric_and_bounded(xs, ys):
    a, b = np.array(xs), np.array(ys)
    ks = ks_two_sample(a, b)
    assert ks == ks_two_sample(b, a)
    assert 0.0 <= ks <= 1.0
    w1 = w1_two_sample(a, b)
    assert w1 == pytest.approx(w1_two_sample(b, a), rel=1e-12, abs=1e-12)
    assert w1 >= 0.0
    # W1 can never exceed the span of the pooled sample
    span = max(a.max(), b.max()) - min(a.min(), b.min())
    assert w1 <= span + 1e-9


def test_ks_critical_closed_form():
    got = ks_two_sample_critical(500, 500, alpha=0.01)
    assert got == pytest.approx(math.sqrt(-0.5 * math.log(0.005)) * math.sqrt(2 / 500))
    with pytest.raises(ValueError):
        ks_two_sample_critical(10, 10, alpha=1.5)


def test_same_law_samples_score_below_critical():
    rng = np.random.Generator(np.random.PCG64(31337))
    a = rng.standard_normal(4000)
    b = rng.standard_normal(4000)
    assert ks_two_sample(a, b) < ks_two_sample_critical(4000, 4000, alpha=0.01)
    assert w1_two_sample(a, b) < 0.05
    shifted = w1_two_sample(a, b + 0.5)
    assert 0.4 < shifted < 0.6


def test_report_mirrors_components():
    rng = np.random.Generator(np.random.PCG64(8))
    x = rng.standard_normal(300)
    rep = normal_distance_report(x, 0.0, 1.0)
    assert rep.n == 300
    assert rep.w1 == w1_to_normal(x, 0.0, 1.0)
    assert rep.ks == ks_to_normal(x, 0.0, 1.0)
