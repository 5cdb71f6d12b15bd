"""The global profile at R = R_N and its verification.

The profile is stitched from four pieces, all expressed as samples of
(x, sigma, w):

* the sonic series for |tau| <= tau_h, with x(tau) from the quotient series;
* the P6 branch in double precision for tau >= tau_h (x < 0);
* the extended precision run through the fold Q_A for tau <= -tau_h;
* a double precision sigma-w run from just before Q_A down to sigma_floor.

Derivatives are field quotients sigma' = -Delta_2/Delta, w' = -Delta_1/Delta
except at x = 0, where the closed-form sonic slopes are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import mpmath as mp
import numpy as np
from mpmath import iv

from .errors import ProfileError, VerificationError
from .fields import Dual, SignCertificate, _ivprec, _kind, certify_sign, eval_sw_fields, standard_certificates
from .integrate import arc_grid, eval_poly, fold_mp, integrate_P6_to_Q2, integrate_sw_to_origin, x_series
from .params import ParamSet, params_from_R
from .series import SonicSeries, compute_sonic_series

STITCH_TOL = 1e-8
LIMIT_TOL = 1e-3
DECAY_TOL = 0.01


# ---------------------------------------------------------------- sonic slopes

@dataclass(frozen=True)
class SonicSlopes:
    e1: object
    e2: object
    e3: object
    e4: object
    c_minus: object
    w_prime: object
    sigma_prime: object


def sonic_slopes(p: ParamSet) -> SonicSlopes:
    """Partial derivatives of Delta_1, Delta_2 at P2 and the slopes of the profile at x = 0."""
    with mp.workprec(p.prec):
        r, wm = p.r, p.w_minus
        s2 = 1 - wm
        e1 = -2 * (3 * wm - 3 * (r - 1)) * s2
        e2 = 3 * wm * wm - 2 * (1 + r) * wm + r - 3 * s2 * s2
        e3 = -2 * s2 * s2
        e4 = s2 * (10 * wm - (6 + 2 * r)) / 3
        c = (e3 - e2 - mp.sqrt((e3 - e2) ** 2 + 4 * e1 * e4)) / (2 * abs(e4))
        wp = (e1 + e2 * c) / (2 * s2 * (1 + c))
        sp = (e3 + e4 * c) / (2 * s2 * (1 + c))
        return SonicSlopes(e1, e2, e3, e4, c, wp, sp)


# ---------------------------------------------------------------- profile

@dataclass
class GlobalProfile:
    params: ParamSet
    x: np.ndarray
    sigma: np.ndarray
    w: np.ndarray
    sigma_prime: np.ndarray
    w_prime: np.ndarray
    Z: np.ndarray
    U_E: np.ndarray
    S_E: np.ndarray
    margin_ii: np.ndarray
    margin_iii: np.ndarray
    delta: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    segment: np.ndarray
    radial_residual: np.ndarray
    x_A: float
    sigma_1: float
    sigma_A: float
    tau_h: float
    slopes: SonicSlopes
    stitch: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def eta_min(self):
        return float(min(self.margin_ii.min(), self.margin_iii.min()))

    COLUMNS = ("x", "sigma", "w", "sigma_prime", "w_prime", "Z", "U_E", "S_E", "margin_ii", "margin_iii")

    def table(self):
        return np.column_stack([getattr(self, c) for c in self.COLUMNS])


SEGMENTS = {0: "P6 sigma-w", 1: "P6 tau-u", 2: "series", 3: "fold", 4: "sigma-w to P4"}


def _series_samples(p, s, xc, tau_h, n):
    with mp.workprec(s.precision_bits):
        a = p.a
        taus = [mp.mpf(tau_h) * k / n for k in range(-n, n + 1)]
        u = [s.value(t) for t in taus]
        sig = [mp.sqrt(v) / (1 + a) for v in u]
        w = [p.w_minus - t / (1 + a) for t in taus]
        x = [eval_poly(xc, t) for t in taus]
        return (np.array([float(v) for v in x]), np.array([float(v) for v in sig]),
                np.array([float(v) for v in w]), np.array([float(t) for t in taus]))


def build_profile(R, N: Optional[int] = None, n_side: int = 4096, sigma_max=1e4, sigma_floor=1e-6,
                  rtol=1e-12, prec: int = 256, K: int = 400, n_series: int = 256, tau_h=None,
                  stitch_tol=STITCH_TOL) -> GlobalProfile:
    """Assemble the profile at R (a ShootResult or a number)."""
    if hasattr(R, "status"):
        if R.status != "CONVERGED":
            raise ProfileError("OUT_OF_RANGE", f"shoot status {R.status}, a CONVERGED result is needed")
        N, R = R.N, R.R_N
    p = params_from_R(R, prec=prec)
    fp = p.f
    a, wm = fp.a, fp.w_minus
    s = compute_sonic_series(p, K, precision_bits=prec, residual=False)
    rho = s.radius_estimate()
    tau_h = 0.5 * rho if tau_h is None else float(tau_h)
    if s.tail_estimate(tau_h) > 1e-30:
        raise ProfileError("TAIL_TOO_LARGE", f"series tail {s.tail_estimate(tau_h):.3g} at tau_h={tau_h:.4g}")
    xc = x_series(s.params, s)
    stitch = {}

    # series around Q2
    x_s, sig_s, w_s, tau_s = _series_samples(s.params, s, xc, tau_h, n_series)

    # P6 branch, run down to tau_h/2 so that [tau_h/2, tau_h] overlaps the series
    curve, _, _ = integrate_P6_to_Q2(p, tau_h / 2, sigma_max=sigma_max, rtol=rtol, n_samples=8,
                                     check_sandwich=True)
    sw, tu = curve.dense["sw"], curve.dense["tu"]
    tau_sw = curve.events["tau_switch"]
    x_off = float(eval_poly(xc, mp.mpf(tau_h))) - tu(tau_h)[1]
    ov = np.linspace(tau_h / 2, tau_h, 17)
    u_ser = np.array([float(s.value(t)) for t in ov])
    x_ser = np.array([float(eval_poly(xc, mp.mpf(t))) for t in ov])
    stitch["P6_u"] = float(np.max(np.abs(np.array([tu(t)[0] for t in ov]) - u_ser) / u_ser))
    stitch["P6_x"] = float(np.max(np.abs(np.array([tu(t)[1] for t in ov]) + x_off - x_ser)))
    n_tu = n_side // 4
    s_grid = arc_grid(sw, math.log(sigma_max), math.log(curve.events["sigma_switch"]), n_side - n_tu)
    y_sw = np.array([sw(v) for v in s_grid])
    t_grid = np.linspace(tau_sw, tau_h, n_tu + 1)[1:-1]
    y_tu = np.array([tu(t) for t in t_grid])
    x_L = np.concatenate([y_sw[:, 1], y_tu[:, 1]]) + x_off
    sig_L = np.concatenate([np.exp(s_grid), np.sqrt(y_tu[:, 0]) / (1 + a)])
    w_L = np.concatenate([y_sw[:, 0], wm - t_grid / (1 + a)])
    seg_L = np.concatenate([np.zeros(len(s_grid)), np.ones(len(t_grid))])

    # through the fold in extended precision
    fold = fold_mp(s.params, s, -tau_h, prec=prec, n_trace=max(200, n_side // 16))
    tr = fold.trace
    k0 = max(1, len(tr) - 20)
    with mp.workprec(prec):
        uf = np.array([float(t[0]) for t in tr])
        tauf = np.array([float(t[1]) for t in tr])
        xf = np.array([float(t[2]) for t in tr])
    sig_f = np.sqrt(uf) / (1 + a)
    w_f = wm - tauf / (1 + a)
    sigma_A = float(mp.sqrt(fold.u_A) / (1 + s.params.a))

    # sigma-w run from just before Q_A to the origin
    right = integrate_sw_to_origin(p, (sig_f[k0], w_f[k0]), x_start=xf[k0], sigma_floor=sigma_floor,
                                   rtol=rtol, n_samples=n_side)
    dense = right.dense
    chk = [(sig_f[k], w_f[k], xf[k]) for k in range(k0 + 1, len(tr))]
    stitch["fold_w"] = float(max(abs(dense(math.log(sg))[0] - ww) for sg, ww, _ in chk)) if chk else 0.0
    stitch["fold_x"] = float(max(abs(dense(math.log(sg))[1] - xx) for sg, _, xx in chk)) if chk else 0.0
    sig1 = right.events["sigma_1"]
    if len(sig1) != 1:
        raise ProfileError("STITCH_MISMATCH", f"expected one Delta_1 sign change after the fold, got {len(sig1)}")
    stitch["sigma_1_vs_sigma_A"] = abs(sig1[0] - sigma_A)
    for key in ("P6_u", "P6_x", "fold_w", "fold_x", "sigma_1_vs_sigma_A"):
        if not stitch[key] <= stitch_tol:
            raise ProfileError("STITCH_MISMATCH", f"{key} = {stitch[key]:.3g} > {stitch_tol:g}", **stitch)

    x = np.concatenate([x_L, x_s, xf[1:k0], right.x[1:]])
    sig = np.concatenate([sig_L, sig_s, sig_f[1:k0], right.t[1:]])
    w = np.concatenate([w_L, w_s, w_f[1:k0], right.y[1:]])
    seg = np.concatenate([seg_L, np.full(len(x_s), 2), np.full(k0 - 1, 3), np.full(len(right.x) - 1, 4)])
    order = np.argsort(x)
    x, sig, w, seg = x[order], sig[order], w[order], seg[order]
    keep = np.concatenate([[True], np.diff(x) > 1e-13])
    x, sig, w, seg = x[keep], sig[keep], w[keep], seg[keep]

    fl = eval_sw_fields(p, sig, w)
    zero = int(np.argmin(np.abs(x)))
    slopes = sonic_slopes(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        sp = -fl.delta2 / fl.delta
        wp = -fl.delta1 / fl.delta
    sp[zero] = float(slopes.sigma_prime)
    wp[zero] = float(slopes.w_prime)

    Z = np.exp(x)
    U = -Z * w
    S = 3 * Z * sig
    F = sig + sp
    m2 = 1 - w - wp - np.abs(F)
    m3 = 1 - w - np.abs(F)
    res = radial_residual(fp.r, Z, w, sig, wp, sp)
    gp = GlobalProfile(p, x, sig, w, sp, wp, Z, U, S, m2, m3, fl.delta, fl.delta1, fl.delta2, seg, res,
                       float(fold.x_A), float(sig1[0]), sigma_A, tau_h, slopes, stitch,
                       {"N": N, "R": mp.nstr(p.R, 20), "sigma_max": sigma_max, "sigma_floor": sigma_floor,
                        "rtol": rtol, "prec": prec, "K": K, "series_radius": rho,
                        "x_zero_index": zero, "u_A": float(fold.u_A), "tau_A": float(fold.tau_A)})
    return gp


def radial_residual(r, Z, w, sig, wp, sp):
    """Both radial equations for (U_E, S_E) = (-Z w, 3 Z sigma).

    Relative to the local scale: the sum of the magnitudes of every product
    entering the equation, with U_Z = -(w + w') and S_Z = 3(sigma + sigma')
    expanded into their two terms.
    """
    U, S = -Z * w, 3 * Z * sig
    UZ = -(w + wp)
    SZ = 3 * (sig + sp)
    aUZ = np.abs(w) + np.abs(wp)
    aSZ = 3 * (np.abs(sig) + np.abs(sp))
    e1 = (r - 1) * U + (Z + U) * UZ + S * SZ / 3
    e2 = (r - 1) * S + (Z + U) * SZ + (UZ + 2 * U / Z) * S / 3
    s1 = np.abs((r - 1) * U) + np.abs(Z + U) * aUZ + np.abs(S) * aSZ / 3
    s2 = np.abs((r - 1) * S) + np.abs(Z + U) * aSZ + (aUZ + np.abs(2 * U / Z)) * np.abs(S) / 3
    return np.maximum(np.abs(e1) / (s1 + 1e-300), np.abs(e2) / (s2 + 1e-300))


# ---------------------------------------------------------------- verification

@dataclass
class RepulsivityReport:
    eta_min: float
    eta_lower: float
    margin_ii_min: float
    margin_iii_min: float
    argmin_x: float
    limit_right: float
    limit_left: float
    limit_left_expected: float
    decay_right: float
    decay_left: float
    c_lower: float
    F_identity_max: float
    x_B: Optional[float]
    F_at_x_B: Optional[float]
    sign_pattern_ok: bool
    delta1_zeros: list
    barrier_margin_min: float
    w_max_x: float
    radial_residual_max: float
    S_E_envelope_min: float
    ok: bool
    failures: list


def _lipschitz_lower(x, m):
    # per-cell lower bound (m_i + m_{i+1})/2 - L h/2 with L the largest neighbouring slope, doubled
    h = np.diff(x)
    slope = np.abs(np.diff(m)) / h
    L = slope.copy()
    L[1:] = np.maximum(L[1:], slope[:-1])
    L[:-1] = np.maximum(L[:-1], slope[1:])
    return float(np.min((m[:-1] + m[1:]) / 2 - L * h))


def _tail_slope(x, y, frac=0.05, side="right"):
    n = max(20, int(len(x) * frac))
    sl = slice(-n, None) if side == "right" else slice(0, n)
    return float(np.polyfit(x[sl], y[sl], 1)[0])


def verify_repulsivity(gp: GlobalProfile, strict=True) -> RepulsivityReport:
    """Margins (i)-(iii), their limits, the F identity, tail decay and the sign pattern of the fields."""
    fp = gp.params.f
    r, wm, wp_ = fp.r, fp.w_minus, fp.w_plus
    x, sig, w = gp.x, gp.sigma, gp.w
    z = gp.meta["x_zero_index"]
    nz = np.ones(len(x), bool)
    nz[z] = False
    fails = []

    m2, m3 = gp.margin_ii, gp.margin_iii
    eta = gp.eta_min
    eta_lo = min(_lipschitz_lower(x, m2), _lipschitz_lower(x, m3))
    if not eta > 0:
        fails.append(f"margin <= 0 at x={x[np.argmin(np.minimum(m2, m3))]:.6g}")
    lim_r = float(min(m2[-1], m3[-1]))
    lim_l = float(min(m2[0], m3[0]))
    if abs(lim_r - 1) > LIMIT_TOL:
        fails.append(f"right limit {lim_r:.6g} != 1")
    if abs(lim_l - (2 - r)) > LIMIT_TOL:
        fails.append(f"left limit {lim_l:.6g} != {2 - r:.6g}")

    ls = np.log(sig)
    dec_r = _tail_slope(x, ls, side="right")
    dec_l = _tail_slope(x, ls, side="left")
    if abs(dec_r + r) > DECAY_TOL * r:
        fails.append(f"right decay {dec_r:.6g} != -r")
    if abs(dec_l + 1) > DECAY_TOL:
        fails.append(f"left decay {dec_l:.6g} != -1")
    env = np.minimum(np.exp(-r * x), np.exp(-x))
    c_lower = float(np.min(sig / env))

    F = sig + gp.sigma_prime
    with np.errstate(divide="ignore", invalid="ignore"):
        F_id = -2 * sig * (w - wm) * (w - wp_) / (3 * gp.delta)
        # sigma + sigma' cancels in both tails, so measure against its unexpanded terms
        rel = np.abs(F - F_id) / (np.abs(sig) + np.abs(gp.sigma_prime) + 1e-300)
    F_max = float(np.max(rel[nz]))

    right = x > 0
    xr, wr = x[right], w[right]
    kmax = int(np.argmax(wr))
    x_wmax = float(xr[kmax])
    after = np.nonzero(wr[kmax:] < wm)[0]
    x_B = F_B = None
    if len(after):
        k = kmax + after[0]
        t = (wm - wr[k - 1]) / (wr[k] - wr[k - 1])
        x_B = float(xr[k - 1] + t * (xr[k] - xr[k - 1]))
        F_B = float(np.interp(x_B, xr[k - 1:k + 1], F[right][k - 1:k + 1]))

    # field signs; samples within 1e-7 of x = 0 and x = x_A are excluded
    near = (np.abs(x) < 1e-7) | (np.abs(x - gp.x_A) < 1e-7)
    left = (x < 0) & ~near
    pos = (x > 0) & ~near
    d, d1, d2 = gp.delta, gp.delta1, gp.delta2
    pattern = (np.all(d[left] < 0) and np.all(d1[left] > 0) and np.all(d2[left] < 0)
               and np.all(d[pos] > 0) and np.all(d2[pos] > 0)
               and np.all(d1[pos & (x < gp.x_A)] < 0) and np.all(d1[pos & (x > gp.x_A)] > 0))
    sgn = np.sign(d1)
    zeros = [float(x[k]) for k in range(len(x) - 1) if sgn[k] != sgn[k + 1] or sgn[k] == 0]
    if not pattern:
        fails.append("sign pattern of (Delta, Delta_1, Delta_2)")
    if len(zeros) != 2:
        fails.append(f"Delta_1 changes sign {len(zeros)} times")
    if abs(x_wmax - gp.x_A) > 1e-2:
        fails.append(f"argmax w at x={x_wmax:.6g}, x_A={gp.x_A:.6g}")

    a = fp.a
    bm = w[x > 0] - a * (1 + a) * sig[x > 0] ** 2
    b_min = float(bm.min())
    if not b_min > 0:
        fails.append("w <= a(1+a) sigma^2 for some x > 0")
    rr = float(np.max(gp.radial_residual[nz]))
    if rr > 1e-8:
        fails.append(f"radial residual {rr:.3g}")
    S_env = float(np.min(gp.S_E / np.sqrt(1 + gp.Z**2) ** (1 - r)))
    if not S_env > 0:
        fails.append("S_E envelope")
    if F_max > 1e-8:
        fails.append(f"F identity {F_max:.3g}")

    rep = RepulsivityReport(eta, eta_lo, float(m2.min()), float(m3.min()),
                            float(x[np.argmin(np.minimum(m2, m3))]), lim_r, lim_l, 2 - r, dec_r, dec_l,
                            c_lower, F_max, x_B, F_B, bool(pattern), zeros, b_min, x_wmax, rr, S_env,
                            not fails, fails)
    if strict and not eta > 0:
        raise VerificationError("MARGIN_NONPOSITIVE", fails[0], report=rep)
    return rep


# ---------------------------------------------------------------- barrier certificates

def _pmul(a, b):
    out = [mp.mpf(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return out


def _padd(*ps):
    n = max(len(q) for q in ps)
    return [mp.fsum(q[k] for q in ps if k < len(q)) for k in range(n)]


def _pscale(c, a):
    return [c * x for x in a]


def L_poly(p: ParamSet, coeffs):
    """Coefficients of L[u] = Delta_tau u' - Delta_u for the polynomial u with the given coefficients."""
    with mp.workprec(p.prec):
        al = p.alpha
        u = list(coeffs)
        du = [n * u[n] for n in range(1, len(u))] or [mp.mpf(0)]
        dtau = _padd(_pmul([3 * al, -3], u), [-3 * al, -(4 * al - 1), -(al - 2), mp.mpf(1)])
        lin = [mp.mpf(2), -4 * (al - 4) / 3, mp.mpf(10) / 3]
        dU = _padd(_pscale(-2, _pmul(u, u)), _pmul(lin, u))
        return _padd(_pmul(dtau, du), _pscale(-1, dU))


def poly_fn(coeffs):
    """Horner evaluation usable on mpf, float and interval jets."""
    cs = list(coeffs)
    ivc = {}

    def g(t):
        if _kind(t) == "iv":
            key = iv.prec
            if key not in ivc:
                ivc[key] = [iv.mpf(c) for c in cs]
            c = ivc[key]
            acc = Dual(iv.mpf(0), iv.mpf(0)) if isinstance(t, Dual) else iv.mpf(0)
        else:
            c = cs
            acc = Dual(mp.mpf(0), mp.mpf(0)) if isinstance(t, Dual) else mp.mpf(0)
        for v in reversed(c):
            acc = acc * t + v
        return acc

    return g


@dataclass
class BarrierReport:
    N: int
    L_uN: SignCertificate
    dropped_coeff_max: float
    tau_N: object
    u_N_at_left: object
    u_N_positive: SignCertificate
    below_u_g: SignCertificate
    U_O: Optional[SignCertificate]
    ok: bool
    failures: list


def verify_barriers(p: ParamSet, s: SonicSeries, N: int, n: int = 4096, strict=True) -> BarrierReport:
    """Certificates for the truncation u_(N) = sum_{n<=N} a_n tau^n on the tau < 0 side."""
    if s.K < N + 1:
        raise ProfileError("OUT_OF_RANGE", f"series order {s.K} < N+1 = {N + 1}")
    prec = s.precision_bits
    P = s.params
    fails = []
    with mp.workprec(prec):
        c = list(s.coeffs[: N + 1])
        L = L_poly(P, c)
        # the first N+1 coefficients of L[u_(N)] vanish by construction of a_n
        scale = max(abs(v) for v in L)
        dropped = max(abs(v) for v in L[: N + 1]) / scale
        g = L[N + 1:]
        lo = -4 / mp.sqrt(P.R)
        # tau^{N+1} > 0 for odd N, so L[u_(N)] < 0 iff g < 0
        cert_L = certify_sign("L[u_N]<0 on [-4/sqrt(R),0)", poly_fn(g), lo, 0, -1, n, prec)
        uN = poly_fn(c)
        left = -mp.mpf(9) / 5 / mp.sqrt(P.R)
        u_left = uN(left)
        tau_N = None
        if u_left < 0:
            # first sign change met when walking left from tau = 0
            grid = [left * k / n for k in range(n + 1)]
            k = next(k for k in range(1, n + 1) if uN(grid[k]) <= 0)
            a_, b_ = grid[k], grid[k - 1]
            for _ in range(prec):
                m_ = (a_ + b_) / 2
                if uN(m_) > 0:
                    b_ = m_
                else:
                    a_ = m_
                if b_ - a_ <= abs(a_) * mp.mpf(2) ** (8 - prec):
                    break
            tau_N = b_
        else:
            fails.append("u_N(-9/(5 sqrt R)) >= 0")
        if tau_N is not None:
            cert_pos = certify_sign("u_N>0 on (tau_N,0]", uN, tau_N * (1 - mp.mpf(2) ** -40), 0, 1, n, prec)
        else:
            cert_pos = SignCertificate("u_N>0 on (tau_N,0]", left, 0, 1, 0, 0.0, 0.0, False, ())
        # u_g - u_(N) vanishes at 0; divided by tau it must stay negative for tau < 0
        ug = [mp.mpf(1), -2 * (P.alpha - 4) / 3, mp.mpf(5) / 3]
        diff = _padd(ug, _pscale(-1, c))[1:]
        cert_g = certify_sign("u_N<u_g on (-9/(5sqrt R),0)", poly_fn(diff), left, 0, -1, n, prec)
    cert_O = None
    if P.R > 5:
        cert_O = [c_ for c_ in standard_certificates(P, n) if c_.name.startswith("L[U_O]")][0]
    for cert in (cert_L, cert_pos, cert_g, cert_O):
        if cert is not None and not cert.ok:
            fails.append(cert.name)
    rep = BarrierReport(N, cert_L, float(dropped), tau_N, u_left, cert_pos, cert_g, cert_O, not fails, fails)
    if strict and fails:
        raise VerificationError("CERTIFICATE_FAILED", ", ".join(fails), report=rep)
    return rep
