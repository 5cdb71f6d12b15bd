from fractions import Fraction

import mpmath as mp
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from euler_implosion.errors import ProfileError
from euler_implosion.params import (ParamSet, eigen_residual, eigenvalues, params_from_a, params_from_alpha,
                                    params_from_lambda, params_from_r, params_from_R, params_from_w_minus,
                                    special_points)

R_UPPER = 3 - 3**0.5
r_values = st.floats(min_value=1.0001, max_value=R_UPPER - 1e-4)


def test_R9_closed_forms():
    p = params_from_R(9, allow_integer=True)
    assert p.alpha == mp.mpf(1) / 4
    assert p.lam == mp.mpf(1) / 2
    assert p.delta == mp.mpf(1) / 2
    for n in range(12):
        assert abs(p.gamma(n) - mp.mpf(9 - n) / 2) < 1e-70
        assert abs(p.gamma_closed(n) - p.gamma(n)) < 1e-70


def test_alpha_quarter_chain():
    # a solves a^2 + (1 - alpha) a - 3 alpha = 0 at alpha = 1/4
    p = params_from_alpha(Fraction(1, 4))
    with mp.workprec(p.prec):
        a = (mp.sqrt(57) - 3) / 8
        assert abs(p.a - a) < mp.mpf(2) ** (16 - p.prec)
        assert abs(p.R - 9) < mp.mpf(2) ** (16 - p.prec)
        r = (a * a + 6 * a + 3) / ((a + 1) * (a + 3))
        assert abs(p.r - r) < mp.mpf(2) ** (16 - p.prec)
    assert abs(float(p.r) - 1.2031767389778907) < 1e-15


@pytest.mark.parametrize("bad", [
    lambda: params_from_r(1),
    lambda: params_from_r(3 - 3**0.5 + 1e-9),
    lambda: params_from_R(1),
    lambda: params_from_R(0.5),
    lambda: params_from_alpha(0),
    lambda: params_from_lambda(1),
    lambda: params_from_a(2),
    lambda: params_from_w_minus(0),
])
def test_out_of_range(bad):
    with pytest.raises(ProfileError) as e:
        bad()
    assert e.value.code == "OUT_OF_RANGE"


def test_integer_R_guard():
    with pytest.raises(ProfileError):
        params_from_R(25)
    assert params_from_R(25, allow_integer=True).A == 5


def test_sonic_point_maps_to_Q2():
    p = params_from_R("25.5")
    with mp.workprec(p.prec):
        assert abs((1 + p.a) * (1 - p.w_minus) - 1) < mp.mpf(2) ** (8 - p.prec)
    sp = special_points(p)
    assert sp.Q4[0] == p.a
    assert sp.P2[1] == p.w_minus


@settings(max_examples=60, deadline=None)
@given(r_values)
def test_round_trip_r_R(r):
    p = params_from_r(r)
    q = params_from_R(p.R, allow_integer=True)
    assert abs(q.r - p.r) < mp.mpf(2) ** (16 - p.prec)
    for entry, key in ((params_from_a, "a"), (params_from_alpha, "alpha"), (params_from_lambda, "lam"),
                       (params_from_w_minus, "w_minus")):
        back = entry(getattr(p, key))
        assert abs(back.r - p.r) < mp.mpf(2) ** (16 - p.prec)


@settings(max_examples=60, deadline=None)
@given(r_values, r_values)
def test_monotone_chain(r1, r2):
    if r1 == r2:
        return
    lo, hi = sorted((r1, r2))
    p, q = params_from_r(lo), params_from_r(hi)
    for k in ("w_minus", "a", "alpha", "lam", "A", "R"):
        assert getattr(p, k) < getattr(q, k), k


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=1.001, max_value=1e6))
def test_eigen_residual(R):
    p = params_from_R(R, allow_integer=True)
    lp, lm = eigenvalues(p)
    for root in (lp, lm):
        assert abs(eigen_residual(p, root)) < mp.mpf(2) ** (24 - p.prec) * (1 + abs(root)) ** 2
    # R is the ratio of the two eigenvalues
    assert abs(lm / lp - p.R) < mp.mpf(2) ** (24 - p.prec) * p.R


@settings(max_examples=30, deadline=None)
@given(r_values)
def test_as_dict_round_trip(r):
    p = params_from_r(r)
    q = ParamSet.from_dict(p.as_dict())
    assert q == p
