import dataclasses

import mpmath as mp
import numpy as np
import pytest

from euler_implosion.errors import VerificationError
from euler_implosion.profile import (STITCH_TOL, radial_residual, sonic_slopes, verify_barriers,
                                     verify_repulsivity)
from euler_implosion.series import a1_of, compute_sonic_series


def test_stitches(profile25):
    assert profile25.stitch
    assert all(v <= STITCH_TOL for v in profile25.stitch.values())


def test_sonic_point_at_origin(profile25):
    gp = profile25
    z = gp.meta["x_zero_index"]
    assert gp.x[z] == 0
    assert gp.sigma[z] == pytest.approx(1 - float(gp.params.w_minus), abs=1e-12)
    assert np.all(np.diff(gp.x) > 0)
    assert np.all(np.diff(gp.sigma) < 0)


def test_sonic_slope_oracle(p25):
    # independent route: c_- = dw/dsigma at P2 equals -2/a_1 through the change of variables
    sl = sonic_slopes(p25)
    with mp.workprec(p25.prec):
        assert abs(sl.c_minus + 2 / a1_of(p25)) < mp.mpf(10) ** -40


def test_sonic_slopes_match_samples(profile25):
    gp = profile25
    z = gp.meta["x_zero_index"]
    h = gp.x[z + 1] - gp.x[z - 1]
    wp = (gp.w[z + 1] - gp.w[z - 1]) / h
    sp = (gp.sigma[z + 1] - gp.sigma[z - 1]) / h
    assert wp == pytest.approx(float(gp.slopes.w_prime), rel=1e-3)
    assert sp == pytest.approx(float(gp.slopes.sigma_prime), rel=1e-3)


def test_repulsivity(profile25):
    rep = verify_repulsivity(profile25)
    assert rep.ok, rep.failures
    r = float(profile25.params.r)
    assert rep.eta_min > 0 and rep.eta_lower > 0
    assert abs(rep.limit_right - 1) < 1e-3
    assert abs(rep.limit_left - (2 - r)) < 1e-3
    assert abs(rep.decay_right + r) < 0.01 * r
    assert abs(rep.decay_left + 1) < 0.01
    assert rep.sign_pattern_ok and len(rep.delta1_zeros) == 2
    assert rep.barrier_margin_min > 0
    assert rep.radial_residual_max <= 1e-8


def test_fold_and_sigma1(profile25):
    gp = profile25
    assert 0 < gp.x_A
    assert abs(gp.sigma_1 - gp.sigma_A) < 1e-8
    k = int(np.argmax(np.where(gp.x > 0, gp.w, -np.inf)))
    assert abs(gp.x[k] - gp.x_A) < 2e-2


def test_radial_residual_helper(profile25):
    gp = profile25
    res = radial_residual(float(gp.params.r), gp.Z, gp.w, gp.sigma, gp.w_prime, gp.sigma_prime)
    assert np.nanmax(res) <= 1e-8


def test_corrupted_margin_fails(profile25):
    bad = dataclasses.replace(profile25, margin_ii=profile25.margin_ii - 2)
    with pytest.raises(VerificationError) as e:
        verify_repulsivity(bad)
    assert e.value.code == "MARGIN_NONPOSITIVE"
    assert not verify_repulsivity(bad, strict=False).ok


def test_table_columns(profile25):
    t = profile25.table()
    assert t.shape == (len(profile25.x), len(profile25.COLUMNS))
    assert np.all(np.isfinite(t))


def test_barrier_certificates(p25):
    s = compute_sonic_series(p25, 40)
    rep = verify_barriers(p25, s, 25, n=512)
    assert rep.ok, rep.failures
    assert rep.tau_N < 0
    assert rep.dropped_coeff_max < 1e-60
