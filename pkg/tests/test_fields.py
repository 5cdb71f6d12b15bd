import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from euler_implosion.errors import ProfileError
from euler_implosion.fields import (L_operator, barrier_catalog, certify_sign, delta2_curves, eval_sw_fields,
                                    eval_tu_fields, psi, psi_inverse, root_curves_w, standard_certificates, u_b,
                                    u_g)
from euler_implosion.params import params_from_R, params_from_r

P = params_from_R("25.5")


def test_origin_and_sonic_line():
    f = eval_sw_fields(P, 0.0, 0.0)
    assert (f.delta, f.delta1, f.delta2) == (1.0, 0.0, 0.0)
    for s in (0.1, 0.4, 0.9):
        assert abs(eval_sw_fields(P, s, 1 - s).delta) < 1e-15


def test_Q2_triple_point():
    f = eval_tu_fields(P, mp.mpf(0), mp.mpf(1))
    assert f.delta_u == 0 and f.delta_tau == 0


def test_barriers_pass_through_Q2():
    assert u_g(P, mp.mpf(0)) == 1
    assert u_b(P, mp.mpf(0)) == 1


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.0, max_value=1.5), st.floats(min_value=-0.5, max_value=1.5))
def test_psi_conjugacy(sigma, w):
    with mp.workprec(P.prec):
        t, u = psi(P, mp.mpf(sigma), mp.mpf(w))
        s2, w2 = psi_inverse(P, t, u)
    assert abs(s2 - sigma) < 1e-60 and abs(w2 - w) < 1e-60


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.01, max_value=1.2), st.floats(min_value=1.0001, max_value=1.2678))
def test_cubic_roots(sigma, r):
    p = params_from_r(r)
    for w in root_curves_w(p, sigma):
        assert abs(eval_sw_fields(p, sigma, w).delta1) < 1e-12


def test_sonic_point_is_a_cubic_root():
    p = P
    with mp.workprec(p.prec):
        roots = root_curves_w(p, 1 - p.w_minus)
        assert min(abs(w - p.w_minus) for w in roots) < 1e-60


def test_delta2_curves():
    p = params_from_r(1.25)   # inside ((9 - 3 sqrt 5)/2, 3 - sqrt 3)
    r = 1.25
    # just above the double root, where the two branches meet at (r + 3)/5
    s0 = math.sqrt(-(r * r - 9 * r + 9) / 15) * (1 + 1e-12)
    lo, hi = delta2_curves(p, s0)
    assert abs(lo - (r + 3) / 5) < 1e-5 and abs(hi - (r + 3) / 5) < 1e-5
    for s in (0.5, 1.0):
        for w in delta2_curves(p, s):
            assert abs(eval_sw_fields(p, s, w).delta2) < 1e-12
    assert delta2_curves(p, 0.0) is None


def test_closed_form_L_matches_generic():
    cat = barrier_catalog(P)
    for name, c in cat.items():
        if c.L_closed is None:
            continue
        for tau in np.linspace(-0.9, 0.4, 41):
            with mp.workprec(P.prec):
                tau = mp.mpf(tau)
                if c.pole is not None and abs(tau - c.pole) < 1e-3:
                    continue
                g = L_operator(P, c, tau)
                assert abs(g - c.L_closed(tau)) < mp.mpf(10) ** -60 * (1 + abs(g)), name


def test_certify_sign_detects_zero():
    good = certify_sign("x^2+1", lambda t: t * t + 1, -1, 1, 1, n=64)
    bad = certify_sign("x", lambda t: t, -1, 1, 1, n=64)
    assert good.ok and not bad.ok and bad.bad_cells


def test_standard_certificates():
    certs = standard_certificates(P, 512)
    assert len(certs) == 3 and all(c.ok for c in certs)


def test_psi_inverse_rejects_negative_u():
    with pytest.raises(ProfileError):
        psi_inverse(P, mp.mpf(0), mp.mpf(-1))
