import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sublinlab.expressions import Expression
from sublinlab.geometry import Interval, Rectangle, build_grid
from sublinlab.weights import (NonlinearityH1, WeightError, WeightField, WeightPiece, check_convex_nonpositive,
                               lr_norm, split_pm, validate_h1, weighted_delta_integral)


def grid1(n=256):
    return build_grid(Interval(0, 1), n)


def test_split_examples():
    g = grid1(8)
    mp, mm = split_pm(WeightField.from_function(g, lambda p: p[:, 0] - 0.5))
    i = g.locate([[0.75]])[0]
    assert mp.values[i] == 0.25 and mm.values[i] == 0.0
    mp, mm = split_pm(WeightField.constant(g, -2))
    assert np.all(mp.values == 0) and np.all(mm.values == 2)
    mp, mm = split_pm(WeightField.constant(g, 0))
    assert np.all(mp.values == 0) and np.all(mm.values == 0)


@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_split_identity(vals):
    g = grid1(8)
    m = WeightField(g, np.array(vals))
    mp, mm = split_pm(m)
    assert np.array_equal(mp.values - mm.values, m.values)
    assert np.all(mp.values * mm.values == 0)


def test_lr_norm_examples():
    g = grid1()
    one = WeightField.constant(g, 1.0)
    for r in (2, 3.5, 10):
        assert lr_norm(one, r) == pytest.approx(1.0)
    ind = WeightField.from_pieces(g, [WeightPiece(Interval(0, 0.5), Expression("1")), WeightPiece(None, Expression("0"))])
    # the node x = 0.5 carries a full cell, an O(h) excess
    assert lr_norm(ind, 2) == pytest.approx(math.sqrt(0.5), abs=1 / 256)
    xw = WeightField.from_function(g, lambda p: p[:, 0])
    assert lr_norm(xw, 2) == pytest.approx(1 / math.sqrt(3), abs=1e-5)
    assert lr_norm(xw, math.inf) == 1.0


def test_lr_norm_rejects_small_r():
    with pytest.raises(WeightError):
        lr_norm(WeightField.constant(build_grid(Rectangle(0, 1, 0, 1), 4), 1.0), 2)


def test_lr_norm_empty_region_warns():
    with pytest.warns(RuntimeWarning):
        assert lr_norm(WeightField.constant(grid1(8), 1.0), 2, region=np.zeros(9, bool)) == 0.0


@settings(max_examples=30)
@given(st.floats(-4, 4), st.floats(1.5, 20))
def test_lr_norm_homogeneous_and_monotone(c, r):
    g = grid1(16)
    v = WeightField.from_function(g, lambda p: np.cos(5 * p[:, 0]))
    assert lr_norm(v.scaled(c), r) == pytest.approx(abs(c) * lr_norm(v, r), abs=1e-12)
    small = g.coords[:, 0] < 0.4
    assert lr_norm(v, r, region=small) <= lr_norm(v, r) + 1e-15


def test_weighted_delta_integral_examples():
    g = grid1()
    one = WeightField.constant(g, 1.0)
    assert weighted_delta_integral(one, g.delta, 2) == pytest.approx(1 / 12, rel=1e-4)
    assert weighted_delta_integral(one, g.delta, 0) == pytest.approx(1.0)
    assert weighted_delta_integral(one, g.delta, 1) == pytest.approx(0.25, rel=1e-4)


def test_weighted_delta_integral_second_order():
    errs = [abs(weighted_delta_integral(WeightField.from_function(g, lambda p: np.exp(p[:, 0])), g.delta, 2)
                - (2 * math.e - 2 * math.exp(0.5) - 2))  # int exp(x) min(x,1-x)^2
            for g in (grid1(32), grid1(64))]
    assert math.log2(errs[0] / errs[1]) > 1.9


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_weighted_delta_integral_linear(a, b):
    g = grid1(16)
    m1 = WeightField.from_function(g, lambda p: p[:, 0] ** 2)
    m2 = WeightField.from_function(g, lambda p: np.sin(p[:, 0]))
    both = WeightField(g, a * m1.values + b * m2.values)
    lhs = weighted_delta_integral(both, g.delta, 1.5)
    rhs = a * weighted_delta_integral(m1, g.delta, 1.5) + b * weighted_delta_integral(m2, g.delta, 1.5)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_cell_average_handles_singularity():
    g = grid1(64)
    pieces = [WeightPiece(None, Expression("abs(x - 0.5)^(-0.25)"))]
    with pytest.raises(WeightError):
        WeightField.from_pieces(g, pieces)  # infinite at the node x = 0.5
    m = WeightField.from_pieces(g, pieces, r=2, mode="cell-average")
    assert np.all(np.isfinite(m.values))


def test_uncovered_node_is_an_error():
    with pytest.raises(WeightError):
        WeightField.from_pieces(grid1(8), [WeightPiece(Interval(0, 0.5), Expression("1"))])


def test_h1_examples():
    assert validate_h1(NonlinearityH1.power(0.5)).passed
    assert validate_h1(NonlinearityH1.power_plus_min(0.5)).passed
    linear = NonlinearityH1(0.5, 1.0, 1.0, lambda xi: xi)
    rep = validate_h1(linear)
    assert not rep.passed and rep.violation


def test_h1_rejects_p():
    with pytest.raises(ValueError, match=r"p must lie in \(0,1\)"):
        NonlinearityH1.power(1.5)


@given(st.floats(1e-6, 1e3), st.floats(0.0, 10.0), st.floats(0.05, 0.95))
def test_lipschitz_bound_dominates_secant(lo, width, p):
    f = NonlinearityH1.power_plus_min(p)
    hi = lo + width
    if hi > lo:
        slope = (f(hi) - f(lo)) / (hi - lo)
        rounding = 4 * np.finfo(float).eps * (abs(f(hi)) + abs(f(lo))) / (hi - lo)
        assert slope <= f.lipschitz(np.array([lo]), np.array([hi]))[0] * (1 + 1e-9) + rounding


def test_convexity_examples():
    g = build_grid(Interval(-1, 1), 64)
    region = Interval(-0.5, 0.5)
    assert check_convex_nonpositive(WeightField.from_function(g, lambda p: p[:, 0] ** 2 - 1), region).passed
    rep = check_convex_nonpositive(WeightField.from_function(g, lambda p: -p[:, 0] ** 2), region)
    assert rep.nonpositive and not rep.convex
    g = build_grid(Interval(0, 1), 64)
    rep = check_convex_nonpositive(WeightField.from_function(g, lambda p: p[:, 0]), Interval(0, 1))
    assert not rep.nonpositive and not rep.passed
