import math

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from euler_implosion.errors import ProfileError
from euler_implosion.fields import N_operator, eval_tu_fields, u_b
from euler_implosion.integrate import (PolyODE, eval_poly, far_field_coeffs, far_field_w, integrate_from_series,
                                       integrate_P6_to_Q2, integrate_sw_to_origin, integrate_to_Q6, start_far_field,
                                       sw_rhs, tu_poly_ode, u_F_mp, x_parametrize, x_series)
from euler_implosion.params import params_from_R, special_points
from euler_implosion.series import compute_sonic_series, tau0_of
from euler_implosion.shoot import default_tau_star

RES_TOL = 1e-8
TAU_STAR = float(default_tau_star(25))


@pytest.fixture(scope="module")
def branch(p25):
    return integrate_P6_to_Q2(p25, TAU_STAR)


def test_far_field_leading_terms(p25):
    b = far_field_coeffs(p25, K=20)
    with mp.workprec(p25.prec):
        # coefficients of w - (r - 1)
        assert b[0] == 0
        assert abs(b[1] - (p25.r - 1) * (2 - p25.r) / 5) < mp.mpf(2) ** (16 - p25.prec)
    pt, err = start_far_field(p25, 1e3)
    assert pt.sigma == 1e3
    assert abs(pt.w - float(p25.r - 1 + b[1] / 1e6)) < 1e-15
    assert err == pytest.approx(abs(float(b[2])) / 1e12)


def test_far_field_series_solves_ode(p25):
    with mp.workprec(p25.prec):
        for sig in (mp.mpf(5), mp.mpf(50)):
            w, dw, tail = far_field_w(p25, sig, K=60, prec=p25.prec)
            assert abs(N_operator(p25, w, dw, sig)) < mp.mpf(10) ** -30 * sig**3


def test_polyode_exponential():
    ode = PolyODE({(0, 0): 1}, {(0, 1): 1}, prec=200)
    with mp.workprec(200):
        r = ode.solve(mp.mpf(0), mp.mpf(1), mp.mpf(1), tol=mp.mpf(10) ** -40)
        assert abs(r.y - mp.e) < mp.mpf(10) ** -38


def test_taylor_matches_dop853(p25, branch):
    _, uF, err = branch
    ref = u_F_mp(p25, TAU_STAR, prec=256)
    assert abs(uF - float(ref.u)) <= err
    assert ref.err < 1e-40


def test_sigma_max_convergence(p25, branch):
    _, u1, _ = branch
    _, u2, _ = integrate_P6_to_Q2(p25, TAU_STAR, sigma_max=2e3)
    assert abs(u1 - u2) < 1e-12 * abs(u1)


def test_branch_residual_and_sandwich(p25, branch):
    curve, uF, _ = branch
    assert np.max(curve.residual) < RES_TOL
    assert float(u_b(p25, TAU_STAR)) > uF
    inside = (curve.t > 0) & (curve.t < float(p25.alpha))
    assert inside.sum() > 100


def test_two_term_start_agrees(p25, branch):
    _, u1, err = branch
    _, u2, _ = integrate_P6_to_Q2(p25, TAU_STAR, start="two_term")
    assert abs(u1 - u2) < 1e-10


def test_blow_up_toward_Q6(p25):
    ref = u_F_mp(p25, TAU_STAR, prec=320)
    pts = integrate_to_Q6(params_from_R(p25.R, prec=320), TAU_STAR, ref.u)
    us = [u for _, u, _ in pts]
    assert all(b > a for a, b in zip(us, us[1:]))
    assert us[-1] > 5000
    # u ~ c/(alpha - tau): the scaled value settles
    c = [float(x) for _, _, x in pts]
    assert abs(c[-1] - c[-2]) < 0.01 * c[-1]


def test_frame_consistency(p25, branch):
    # the TU stretch of the branch integrated again in the SW frame
    curve, uF, _ = branch
    fp = p25.f
    tau_sw = curve.events["tau_switch"]
    sig_sw = curve.events["sigma_switch"]
    w_sw = fp.w_minus - tau_sw / (1 + fp.a)
    w_target = fp.w_minus - TAU_STAR / (1 + fp.a)

    def ev(s, y):
        return y[0] - w_target

    ev.terminal = True
    sol = solve_ivp(sw_rhs(p25), [math.log(sig_sw), math.log(1e-3)], [w_sw, 0.0], method="DOP853", rtol=1e-12,
                    atol=1e-14, events=ev)
    sig = math.exp(sol.t_events[0][0])
    assert abs((1 + fp.a) ** 2 * sig**2 - uF) < 10 * 1e-12 * uF + 1e-13


def test_series_handoff_taylor(s25):
    t0 = mp.mpf(tau0_of(s25))
    ode = tu_poly_ode(s25.params, prec=s25.precision_bits)
    tol = mp.mpf(10) ** -30
    with mp.workprec(s25.precision_bits):
        r = ode.solve(t0 / 2, s25.value(t0 / 2), t0, tol=tol)
        assert abs(r.y - s25.value(t0)) <= 10 * tol


def test_fold_event(p25, s25):
    t0 = tau0_of(s25)
    c = integrate_from_series(p25, s25, -t0 / 2)
    sp = special_points(p25)
    tA, uA = c.events["tau_A"], c.events["u_A"]
    assert float(sp.Q5[0]) < tA < 0
    assert abs(uA - c.events["u_b_at_A"]) < 1e-9 * uA
    assert abs(eval_tu_fields(p25, tA, uA).delta_tau) < 1e-9
    assert np.max(c.residual) < RES_TOL


def test_tail_too_large(p25, s25):
    with pytest.raises(ProfileError) as e:
        integrate_from_series(p25, s25, -0.9 * s25.radius_estimate())
    assert e.value.code == "TAIL_TOO_LARGE"


def test_x_series_matches_direct_quotient(p25, s25):
    xs = x_series(s25.params, s25)
    with mp.workprec(s25.precision_bits):
        for tau in (mp.mpf("0.01"), mp.mpf("-0.01")):
            u = s25.value(tau)
            f = eval_tu_fields(s25.params, tau, u)
            want = -((1 + tau) ** 2 - u) / f.delta_tau
            dx = eval_poly([n * c for n, c in enumerate(xs)][1:], tau)
            assert abs(dx - want) < mp.mpf(10) ** -20 * abs(want)


def test_sw_start_outside_region(p25):
    with pytest.raises(ProfileError) as e:
        integrate_sw_to_origin(p25, (0.5, 0.95))
    assert e.value.code == "OUT_OF_RANGE"


def test_sw_to_origin_from_profile_point(p25, profile25):
    # restart from a profile sample past the fold
    gp = profile25
    k = int(np.searchsorted(gp.x, 0.5))
    c = integrate_sw_to_origin(p25, (gp.sigma[k], gp.w[k]), x_start=gp.x[k])
    assert c.events["barrier_margin_min"] > 0
    assert c.events["w_at_floor"] < 1e-3
    assert np.max(c.residual) < RES_TOL
    m = x_parametrize(p25, c.t, c.x, c.y)
    assert m["f_negative"]
    assert m["slope_small_sigma"] == pytest.approx(-1 / float(p25.r), rel=0.02)


def test_x_parametrize_rejects_non_monotone(p25):
    with pytest.raises(ProfileError) as e:
        x_parametrize(p25, [0.1, 0.2, 0.3], [1.0, 2.0, 0.0], [0.1, 0.2, 0.3])
    assert e.value.code == "NON_MONOTONE"
