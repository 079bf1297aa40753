import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nestq.errors import ContractViolation, InvalidArgument
from nestq.gaussian import (
    PROB_ONE,
    FixedProb,
    GaussianParam,
    Interval,
    conditional_partition,
    conditional_prob,
    exp_nonpositive,
    fixed_partition,
    interval_mass,
    interval_prob,
    lower_tail,
    normal_cdf,
    standard_mass,
    to_fixed,
)

mpmath.mp.dps = 50

# frozen from a 50-digit mpmath evaluation
MASS_HALF = 0.38292492254802620727  # P(|z| < 0.5)
MASS_3HALF = 0.86638559746228387   # P(|z| < 1.5)


def ref_mass(a, b):
    phi = lambda x: mpmath.ncdf(x)
    return float(phi(b) - phi(a))


def test_exp_matches_math():
    xs = -np.linspace(0, 740, 50001)
    got = exp_nonpositive(xs)
    want = np.exp(xs)
    ok = want > 1e-300
    assert np.max(np.abs(got[ok] / want[ok] - 1)) < 1e-14
    assert exp_nonpositive(-np.inf) == 0.0


def test_cdf_accuracy_against_mpmath():
    ts = np.linspace(-15, 15, 3001)
    got = normal_cdf(ts)
    want = np.array([float(mpmath.ncdf(t)) for t in ts])
    assert np.max(np.abs(got - want)) < 2e-8


def test_tail_clamped_far_out():
    assert lower_tail(40.0) == 0.0
    assert normal_cdf(-np.inf) == 0.0
    assert normal_cdf(np.inf) == 1.0


def test_unit_interval_prob():
    g = GaussianParam(0.0, 1.0)
    p = interval_prob(g, Interval(-0.5, 0.5))
    exact = MASS_HALF * PROB_ONE  # 25095.37
    assert p.numerator == 25095
    assert abs(p.numerator - exact) <= 1
    assert abs(p.value - 0.382925) < 2 / PROB_ONE


def test_whole_line_is_one():
    g = GaussianParam(3.0, 0.2)
    assert interval_prob(g, Interval(-math.inf, math.inf)).numerator == PROB_ONE


def test_degenerate_and_invalid_rejected():
    with pytest.raises(InvalidArgument):
        Interval(1.0, 1.0)
    with pytest.raises(InvalidArgument):
        Interval(math.nan, 1.0)
    with pytest.raises(InvalidArgument):
        GaussianParam(0.0, 0.0)
    with pytest.raises(InvalidArgument):
        GaussianParam(math.inf, 1.0)
    with pytest.raises(InvalidArgument):
        FixedProb(0)


def test_small_interval_symmetric_about_mean():
    g = GaussianParam(1.25, 0.7)
    eps = 1e-3
    left = interval_mass(g, Interval(1.25 - eps, 1.25))
    right = interval_mass(g, Interval(1.25, 1.25 + eps))
    assert left == right
    assert interval_prob(g, Interval(1.25 - eps, 1.25 + eps)).numerator == to_fixed(left + right)


def test_conditional_center_of_three():
    g = GaussianParam(0.0, 1.0)
    child = conditional_prob(g, Interval(-0.5, 0.5), Interval(-1.5, 1.5))
    exact = MASS_HALF / MASS_3HALF * PROB_ONE  # 28965.59
    assert child.numerator == 28966
    assert abs(child.numerator - exact) <= 1


def test_conditional_partition_sums_exactly():
    g = GaussianParam(0.0, 1.0)
    kids = [Interval(-1.5, -0.5), Interval(-0.5, 0.5), Interval(0.5, 1.5)]
    nums = [p.numerator for p in conditional_partition(g, kids, Interval(-1.5, 1.5))]
    assert nums == [18285, 28966, 18285]
    assert sum(nums) == PROB_ONE


def test_conditional_identity_and_contract():
    g = GaussianParam(0.0, 2.0)
    parent = Interval(-1.0, 3.0)
    assert conditional_prob(g, parent, parent).numerator == PROB_ONE
    with pytest.raises(ContractViolation):
        conditional_prob(g, Interval(-2.0, 0.0), parent)
    with pytest.raises(ContractViolation):
        conditional_partition(g, [Interval(-1.0, 0.0), Interval(0.5, 3.0)], parent)


def test_fixed_partition_floor_and_empty_rows():
    counts = fixed_partition([[1.0, 0.0, 0.0, 1e-30], [0.0, 0.0, 0.0, 0.0]])
    assert counts.sum(axis=1).tolist() == [PROB_ONE, PROB_ONE]
    assert counts.min() >= 1
    assert counts[1].tolist() == [PROB_ONE // 4] * 4


edge = st.floats(-20, 20, allow_nan=False)
sig = st.floats(0.01, 50, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(sig, edge, edge)
def test_symmetry_exact(s, a, b):
    if a == b:
        return
    a, b = min(a, b), max(a, b)
    g = GaussianParam(0.0, s)
    assert interval_prob(g, Interval(a, b)) == interval_prob(g, Interval(-b, -a))


@settings(max_examples=300, deadline=None)
@given(st.floats(-3, 3), sig, edge, edge, edge)
def test_additivity(mu, s, a, b, c):
    a, b, c = sorted((a, b, c))
    if not (a < b < c):
        return
    g = GaussianParam(mu, s)
    whole = interval_mass(g, Interval(a, c))
    parts = interval_mass(g, Interval(a, b)) + interval_mass(g, Interval(b, c))
    assert abs(whole - parts) < 1e-12


@settings(max_examples=300, deadline=None)
@given(st.floats(-3, 3), sig, edge, edge, st.floats(0, 5), st.floats(0, 5))
def test_monotone_in_width(mu, s, a, b, da, db):
    a, b = min(a, b), max(a, b)
    if a == b:
        return
    g = GaussianParam(mu, s)
    inner = interval_prob(g, Interval(a, b)).numerator
    outer = interval_prob(g, Interval(a - da, b + db)).numerator
    assert outer >= inner


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=40))
def test_partition_always_valid(masses):
    counts = fixed_partition([masses])[0]
    assert counts.sum() == PROB_ONE
    assert counts.min() >= 1


def test_deterministic_repeat():
    g = GaussianParam(0.3, 1.7)
    i = Interval(-0.2, 4.1)
    assert len({interval_prob(g, i).numerator for _ in range(5)}) == 1


def test_standard_mass_matches_reference_grid():
    rng = np.random.default_rng(3)
    a = rng.uniform(-8, 8, 400)
    b = a + rng.uniform(1e-3, 6, 400)
    got = standard_mass(a, b)
    want = np.array([ref_mass(x, y) for x, y in zip(a, b)])
    assert np.max(np.abs(got - want)) < 2e-8
