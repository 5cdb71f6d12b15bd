"""Integration of the sigma-w and tau-u systems away from the sonic point.

Two back ends:

* double precision, scipy's DOP853 with dense output, used to build the
  global profile.  The x coordinate is carried as an extra state so every
  stretch knows its own abscissa.
* extended precision, a Taylor-series integrator for the polynomial ODE
  Delta_tau(tau, u) u' = Delta_u(tau, u), started from the analytic
  far-field expansion at P6.  The shooting gap u_L - u_F is far below
  binary64 resolution for the R of interest, so this path is the one used
  for shooting.

In the sigma-w frame the independent variable is s = ln sigma, which keeps
both the P6 tail (sigma -> inf) and the P4 tail (sigma -> 0) well scaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import gmpy2
import mpmath as mp
import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ProfileError
from .fields import eval_sw_fields, eval_tu_fields, u_b, u_g
from .params import ParamSet


@dataclass
class SolutionCurve:
    """A sampled trajectory.

    ``t`` is the abscissa (tau in TU, sigma in SW), ``y`` the ordinate (u or w),
    ``x`` the self-similar coordinate where known.
    """

    frame: str
    t: np.ndarray
    y: np.ndarray
    x: Optional[np.ndarray]
    residual: np.ndarray
    direction: int
    termination: str
    events: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    dense: Optional[Callable] = field(default=None, repr=False)

    def sigma_w(self, p: ParamSet):
        if self.frame == "SW":
            return self.t, self.y
        a = float(p.a)
        return np.sqrt(self.y) / (1 + a), float(p.w_minus) - self.t / (1 + a)


# ---------------------------------------------------------------- far field

def far_field_coeffs(p: ParamSet, K: int = 200, prec: Optional[int] = None):
    """Taylor coefficients of W = w - (r - 1) in z = 1/sigma^2 along the P6 branch.

    From z (E z - 3) W' = -(3/2)(z P(w) - 3 W), with P(w) = w(w-1)(w-r) and
    E(w) = 5w^2 - (6+2r)w + 3r, matching powers of z gives
    b_k (3k + 9/2) = sum_{i=1}^{k-1} E_{i-1} (k-i) b_{k-i} + (3/2) P_{k-1}.
    b_0 = 0 and b_1 = (r-1)(2-r)/5.
    """
    prec = prec or p.prec
    with mp.workprec(prec):
        r = mp.mpf(p.r)
        w = [r - 1] + [mp.mpf(0)] * K          # w series
        w2 = [w[0] ** 2] + [mp.mpf(0)] * K
        w3 = [w[0] ** 3] + [mp.mpf(0)] * K
        b = [mp.mpf(0)] * (K + 1)

        def E(i):
            return 5 * w2[i] - (6 + 2 * r) * w[i] + (3 * r if i == 0 else 0)

        def P(i):
            # w^3 - (1 + r) w^2 + r w
            return w3[i] - (1 + r) * w2[i] + r * w[i]

        for k in range(1, K + 1):
            acc = mp.fsum(E(i - 1) * (k - i) * b[k - i] for i in range(1, k))
            b[k] = (acc + mp.mpf(3) / 2 * P(k - 1)) / (3 * k + mp.mpf(9) / 2)
            w[k] = b[k]
            w2[k] = mp.fsum(w[j] * w[k - j] for j in range(k + 1))
            w3[k] = mp.fsum(w2[j] * w[k - j] for j in range(k + 1))
        return b


def far_field_radius(b):
    """Root-test estimate of the z-radius of convergence from the last half of b."""
    ks, ls = [], []
    K = len(b) - 1
    for k in range(K // 2, K + 1):
        if b[k] != 0:
            ks.append(k)
            ls.append(float(mp.log(abs(b[k]))))
    slope = np.polyfit(ks, ls, 1)[0]
    return math.exp(-slope)


def far_field_w(p: ParamSet, sigma, b=None, K=200, prec=None):
    """w_F(sigma), dw_F/dsigma and a truncation estimate from the z-series."""
    prec = prec or p.prec
    if b is None:
        b = far_field_coeffs(p, K, prec)
    with mp.workprec(prec):
        z = 1 / mp.mpf(sigma) ** 2
        W = mp.mpf(0)
        dW = mp.mpf(0)
        for k in range(len(b) - 1, 0, -1):
            W = W * z + b[k]
            dW = dW * z + k * b[k]
        W *= z
        # dW/dz = dW (as accumulated); dz/dsigma = -2 z^{3/2}
        dwds = dW * (-2 * z * mp.sqrt(z))
        K = len(b) - 1
        tail = abs(b[K]) * z ** K * 2
        return p.r - 1 + W, dwds, tail


def start_far_field(p: ParamSet, sigma_max=1e3):
    """Two-term start at P6: (sigma_max, r - 1 + (r-1)(2-r)/(5 sigma_max^2)) and its O(sigma^-4) size."""
    from .fields import PhasePointSW

    with mp.workprec(p.prec):
        s = mp.mpf(sigma_max)
        w = p.r - 1 + (p.r - 1) * (2 - p.r) / (5 * s * s)
        b = far_field_coeffs(p, 2)
        err = abs(b[2]) / s**4
    return PhasePointSW(s, w), err


# ---------------------------------------------------------------- Taylor integrator

def _to_mpfr(x):
    sign, man, exp, _ = mp.mpf(x)._mpf_
    v = gmpy2.mul_2exp(gmpy2.mpfr(man), exp)
    return -v if sign else v


def _to_mpf(x):
    m, e = x.as_mantissa_exp()
    return mp.ldexp(mp.mpf(int(m)), int(e))


@dataclass
class TaylorResult:
    t: object
    y: object
    steps: int
    err: object
    trace: list
    x: object = None
    stopped: bool = False


class PolyODE:
    """P(t, y) y' = Q(t, y) with P, Q polynomials given as {(i, j): coeff} for t^i y^j.

    An optional companion P(t, y) x' = Qx(t, y) is carried along by quadrature.
    The Taylor kernel runs on gmpy2 mpfr numbers; inputs and outputs are mpf.
    """

    def __init__(self, P: dict, Q: dict, prec: int, Qx: Optional[dict] = None):
        self.prec = prec
        self.ctx = gmpy2.context(precision=prec)
        with mp.workprec(prec), gmpy2.context(self.ctx):
            self.P = {k: _to_mpfr(v) for k, v in P.items() if v != 0}
            self.Q = {k: _to_mpfr(v) for k, v in Q.items() if v != 0}
            self.Qx = {k: _to_mpfr(v) for k, v in (Qx or {}).items() if v != 0}
        keys = list(self.P) + list(self.Q) + list(self.Qx)
        self.deg_t = max(i for i, _ in keys)
        self.deg_y = max(j for _, j in keys)

    def _shift(self, poly, t0):
        # poly(t0 + h, y) = sum_j y^j sum_l c[j][l] h^l
        out = {}
        for (i, j), c in poly.items():
            row = out.setdefault(j, [gmpy2.mpfr(0)] * (self.deg_t + 1))
            for l in range(i + 1):
                row[l] += c * math.comb(i, l) * t0 ** (i - l)
        return [(j, [(l, c) for l, c in enumerate(row) if c != 0]) for j, row in out.items()]

    def _coeffs(self, t0, y0, m):
        Ps, Qs = self._shift(self.P, t0), self._shift(self.Q, t0)
        zero = gmpy2.mpfr(0)
        Y = [y0]
        Ypow = [[gmpy2.mpfr(1)] + [zero] * m] + [[zero] * (m + 1) for _ in range(self.deg_y)]
        Ypow[1][0] = y0
        for j in range(2, self.deg_y + 1):
            Ypow[j][0] = Ypow[j - 1][0] * y0

        def mono(rows, k):
            acc = zero
            for j, row in rows:
                Yj = Ypow[j]
                for l, c in row:
                    if l <= k:
                        acc += c * Yj[k - l]
            return acc

        Pk = []
        for k in range(m):
            Pk.append(mono(Ps, k))
            acc = mono(Qs, k)
            for i in range(1, k + 1):
                acc -= Pk[i] * ((k - i + 1) * Y[k - i + 1])
            if Pk[0] == 0:
                raise ProfileError("STEP_UNDERFLOW", "P vanishes at the expansion point")
            yk = acc / ((k + 1) * Pk[0])
            Y.append(yk)
            Ypow[1][k + 1] = yk
            for j in range(2, self.deg_y + 1):
                prev = Ypow[j - 1]
                Ypow[j][k + 1] = gmpy2.fsum([prev[l] * Y[k + 1 - l] for l in range(k + 2)])
        if not self.Qx:
            return Y, None
        # x' = Qx/P: X_0 is supplied by the caller, X_{k+1} from the same P_k
        Qxs = self._shift(self.Qx, t0)
        X = [zero]
        for k in range(m):
            acc = mono(Qxs, k)
            for i in range(1, k + 1):
                acc -= Pk[i] * ((k - i + 1) * X[k - i + 1])
            X.append(acc / ((k + 1) * Pk[0]))
        return Y, X

    def coeffs(self, t0, y0, m):
        """Taylor coefficients y_0..y_m of the solution through (t0, y0), as mpf."""
        with mp.workprec(self.prec), gmpy2.context(self.ctx):
            Y, _ = self._coeffs(_to_mpfr(t0), _to_mpfr(y0), m)
            return [_to_mpf(c) for c in Y]

    def solve(self, t0, y0, t1, tol, order=None, safety=0.5, max_steps=20000, h_min=None, x0=0,
              stop: Optional[Callable] = None, h_max=None):
        """Integrate from t0 to t1.

        ``stop(t, y)`` (mpf arguments) ends the run at its first sign change,
        located by bisection on the step polynomial.
        """
        with mp.workprec(self.prec), gmpy2.context(self.ctx):
            tol = mp.mpf(tol)
            m = order or max(20, int(-mp.log10(tol) * 0.8))
            t0f, t1f, y = _to_mpfr(t0), _to_mpfr(t1), _to_mpfr(y0)
            x = _to_mpfr(x0)
            tolf = _to_mpfr(tol)
            sgn = 1 if t1f > t0f else -1
            t = t0f
            err = gmpy2.mpfr(0)
            trace = [(mp.mpf(t0), mp.mpf(y0), mp.mpf(x0))]
            h_min = _to_mpfr(h_min) if h_min else abs(t1f - t0f) * gmpy2.mpfr(2) ** (-self.prec // 2)
            g_prev = stop(mp.mpf(t0), mp.mpf(y0)) if stop else None

            def horner(C, hh):
                acc = gmpy2.mpfr(0)
                for c in reversed(C):
                    acc = acc * hh + c
                return acc

            for step in range(max_steps):
                Y, X = self._coeffs(t, y, m)
                scale = max(gmpy2.mpfr(1), abs(y))
                cands = [(tolf * scale / abs(Y[j])) ** (gmpy2.mpfr(1) / j) for j in (m - 1, m) if Y[j] != 0]
                h = safety * min(cands) if cands else abs(t1f - t)
                if h_max is not None:
                    h = min(h, _to_mpfr(h_max))
                if h < h_min:
                    raise ProfileError("STEP_UNDERFLOW", f"Taylor step {float(h):.3g} at t={float(t):.12g}")
                last = h >= abs(t1f - t)
                if last:
                    h = abs(t1f - t)
                hh = sgn * h
                y_new = horner(Y, hh)
                err += abs(Y[m]) * h**m + abs(Y[m - 1]) * h ** (m - 1)
                t_new = t1f if last else t + hh
                if stop:
                    g_new = stop(_to_mpf(t_new), _to_mpf(y_new))
                    if g_new * g_prev < 0:
                        lo, hi = gmpy2.mpfr(0), h
                        for _ in range(self.prec):
                            mid = (lo + hi) / 2
                            gm = stop(_to_mpf(t + sgn * mid), _to_mpf(horner(Y, sgn * mid)))
                            if gm * g_prev > 0:
                                lo = mid
                            else:
                                hi = mid
                            if hi - lo <= abs(t) * gmpy2.mpfr(2) ** (-self.prec + 8):
                                break
                        hs = sgn * (lo + hi) / 2
                        ts, ys = t + hs, horner(Y, hs)
                        xs = x + horner(X, hs) if X else None
                        trace.append((_to_mpf(ts), _to_mpf(ys), _to_mpf(xs) if X else None))
                        return TaylorResult(_to_mpf(ts), _to_mpf(ys), step + 1, _to_mpf(err), trace,
                                            _to_mpf(xs) if X else None, True)
                    g_prev = g_new
                if X:
                    x = x + horner(X, hh)
                t, y = t_new, y_new
                trace.append((_to_mpf(t), _to_mpf(y), _to_mpf(x) if X else None))
                if last:
                    return TaylorResult(mp.mpf(t1), _to_mpf(y), step + 1, _to_mpf(err), trace,
                                        _to_mpf(x) if X else None)
            raise ProfileError("STEP_UNDERFLOW", f"more than {max_steps} Taylor steps")


def _tu_polys(alpha):
    al = alpha
    dtau = {(0, 1): 3 * al, (1, 1): -3, (0, 0): -3 * al, (1, 0): -(4 * al - 1), (2, 0): -(al - 2), (3, 0): 1}
    du = {(0, 2): -2, (0, 1): 2, (1, 1): -4 * (al - 4) / 3, (2, 1): mp.mpf(10) / 3}
    # -(1 + tau)^2 + u, the numerator of dx/dtau
    mD = {(0, 0): -1, (1, 0): -2, (2, 0): -1, (0, 1): 1}
    return dtau, du, mD


def _swap(poly):
    return {(j, i): c for (i, j), c in poly.items()}


def tu_poly_ode(p: ParamSet, prec: Optional[int] = None, with_x=False) -> PolyODE:
    """Delta_tau(tau, u) u' = Delta_u(tau, u) as a PolyODE (t = tau, y = u)."""
    prec = prec or p.prec
    with mp.workprec(prec):
        dtau, du, mD = _tu_polys(mp.mpf(p.alpha))
        return PolyODE(dtau, du, prec, mD if with_x else None)


def tu_poly_ode_u(p: ParamSet, prec: Optional[int] = None) -> PolyODE:
    """Delta_u(tau, u) tau' = Delta_tau(tau, u) with u as the independent variable, x carried along."""
    prec = prec or p.prec
    with mp.workprec(prec):
        dtau, du, mD = _tu_polys(mp.mpf(p.alpha))
        return PolyODE(_swap(du), _swap(dtau), prec, _swap(mD))


def x_series(p: ParamSet, s):
    """Coefficients of x(tau) = sum_{n>=1} c_n tau^n along u_L, with x(0) = 0.

    dx/dtau = -D/Delta_tau with D = (1 + tau)^2 - u; both vanish at Q2, so the
    common factor tau is cancelled before dividing the series.
    """
    a = s.coeffs
    K = len(a) - 1
    with mp.workprec(s.precision_bits):
        al = s.params.alpha
        d = [mp.mpf(0)] * (K + 1)
        e = [mp.mpf(0)] * (K + 1)
        for n in range(K + 1):
            d[n] = -a[n] + (1 if n in (0, 2) else 2 if n == 1 else 0)
            e[n] = 3 * al * a[n] - (3 * a[n - 1] if n >= 1 else 0)
        e[0] -= 3 * al
        e[1] -= 4 * al - 1
        e[2] -= al - 2
        if K >= 3:
            e[3] += 1
        q = []
        for n in range(K):
            acc = d[n + 1] - mp.fsum(e[k + 1] * q[n - k] for k in range(1, n + 1))
            q.append(acc / e[1])
        return [mp.mpf(0)] + [-q[n] / (n + 1) for n in range(K)]


def eval_poly(c, t):
    acc = mp.mpf(0)
    for v in reversed(c):
        acc = acc * t + v
    return acc


@dataclass
class FoldResult:
    tau_A: object
    u_A: object
    x_A: object
    trace: list
    err: object
    steps: int


def fold_mp(p: ParamSet, s, tau_from, prec: Optional[int] = None, tol=None, n_trace=200) -> FoldResult:
    """u_L from tau_from < 0 to the Delta_tau = 0 crossing Q_A, in extended precision.

    Runs with u as the independent variable, which is regular through the fold
    of u(tau).  This stretch amplifies perturbations by roughly
    (tau_A/tau_from)^R, beyond what binary64 can absorb.  The trace lists
    (u, tau, x) with at most ``n_trace`` steps over the stretch.
    """
    prec = prec or s.precision_bits
    with mp.workprec(prec):
        tol = mp.mpf(tol) if tol is not None else default_tol(prec)
        tau_from = mp.mpf(tau_from)
        u0 = s.value(tau_from)
        xc = x_series(p, s)
        x0 = eval_poly(xc, tau_from)
        ode = tu_poly_ode_u(p, prec)
        al = mp.mpf(p.alpha)

        def dtau(u, t):
            return 3 * (al - t) * u - 3 * al - (4 * al - 1) * t - (al - 2) * t * t + t**3

        # u drops along the branch; the fold sits well above u = u0/4
        span = 3 * u0 / 4
        res = ode.solve(u0, tau_from, u0 - span, tol, x0=x0, stop=dtau, h_max=span / n_trace)
        if not res.stopped:
            raise ProfileError("EVENT_MISSED", "no Delta_tau = 0 crossing before u = u0/4")
        return FoldResult(res.y, res.t, res.x, res.trace, res.err, res.steps)


@dataclass
class UFResult:
    u: object
    err: object
    tau_star: object
    sigma0: object
    tau0: object
    far_field_tail: object
    steps: int
    prec: int


def default_tol(prec):
    """Local Taylor tolerance: 60% of the working bits, leaving room for accumulated rounding."""
    return mp.mpf(2) ** (-int(0.6 * prec))


def far_field_start_tu(p: ParamSet, prec: Optional[int] = None, K_far=None, tol=None):
    """(tau0, u0, tail, sigma0): the far-field series summed at z0 = radius/4, mapped by Psi."""
    prec = prec or p.prec
    with mp.workprec(prec):
        if K_far is None:
            # each term gains a factor of about 1/4
            tol = mp.mpf(tol) if tol is not None else mp.mpf(2) ** (-prec)
            K_far = int(-mp.log(tol, 2) / 2) + 8
        b = far_field_coeffs(p, K_far, prec)
        z0 = mp.mpf(far_field_radius(b)) / 4
        sigma0 = 1 / mp.sqrt(z0)
        w0, _, tail = far_field_w(p, sigma0, b=b, prec=prec)
        a = mp.mpf(p.a)
        tau0 = -(1 + a) * (w0 - p.w_minus)
        u0 = (1 + a) ** 2 * sigma0**2
        return tau0, u0, tail * (1 + a), sigma0


def u_F_mp(p: ParamSet, tau_star, prec: Optional[int] = None, tol=None, K_far=None, order=None) -> UFResult:
    """u_F(tau*) in extended precision.

    The far-field z-series is summed at z0 = radius/4, mapped to (tau, u) and
    then integrated with the Taylor method down to tau*.
    """
    prec = prec or p.prec
    with mp.workprec(prec):
        tol = mp.mpf(tol) if tol is not None else default_tol(prec)
        tau0, u0, tail, sigma0 = far_field_start_tu(p, prec, K_far, tol)
        if not 0 < tau_star < tau0:
            raise ProfileError("OUT_OF_RANGE", f"tau*={mp.nstr(tau_star, 8)} not in (0, {mp.nstr(tau0, 8)})")
        res = tu_poly_ode(p, prec).solve(tau0, u0, tau_star, tol, order=order)
        # the start is an error in tau at fixed u; |du/dtau| there is O(u0) and the
        # backward flow toward Q2 does not amplify it
        err = res.err * max(1, abs(res.y)) + tail * u0
        return UFResult(res.y, err, mp.mpf(tau_star), sigma0, tau0, tail, res.steps, prec)


def u_F_on_grid(p: ParamSet, taus, prec: Optional[int] = None, tol=None, K_far=None):
    """u_F at each tau of a decreasing grid (all inside (0, tau0)), one pass."""
    prec = prec or p.prec
    with mp.workprec(prec):
        tol = mp.mpf(tol) if tol is not None else default_tol(prec)
        tau0, u0, tail, _ = far_field_start_tu(p, prec, K_far, tol)
        ode = tu_poly_ode(p, prec)
        t, u, out, err = tau0, u0, [], tail * u0
        for tau in sorted((mp.mpf(x) for x in taus), reverse=True):
            res = ode.solve(t, u, tau, tol)
            t, u = tau, res.y
            err += res.err * max(1, abs(u))
            out.append((tau, u, err))
        return out


# ---------------------------------------------------------------- double precision

def _fl(p):
    return p.f


def sw_rhs(p: ParamSet, with_x=True):
    fp = _fl(p)
    r = fp.r

    def rhs(s, y):
        sig = math.exp(s)
        w = y[0]
        s2 = sig * sig
        D = (w - 1) ** 2 - s2
        D1 = w * (w - 1) * (w - r) - (3 * w - 3 * (r - 1)) * s2
        D2 = sig * (5 * w * w - (6 + 2 * r) * w + 3 * r - 3 * s2) / 3
        out = [sig * D1 / D2]
        if with_x:
            out.append(-sig * D / D2)
        return out

    return rhs


def tu_rhs(p: ParamSet, with_x=True):
    al = _fl(p).alpha

    def rhs(t, y):
        u = y[0]
        Du = -2 * u * u + 2 * u - 4 * (al - 4) * t * u / 3 + 10 * t * t * u / 3
        Dt = 3 * (al - t) * u - 3 * al - (4 * al - 1) * t - (al - 2) * t * t + t**3
        out = [Du / Dt]
        if with_x:
            out.append(-((1 + t) ** 2 - u) / Dt)
        return out

    return rhs


def _residuals(sol, rhs_fields, ts):
    """|P y' - Q| / (|P| max(|y|, 1)), with y' from a 4th-order difference of the dense output."""
    out = np.empty(len(ts))
    for k, t in enumerate(ts):
        # step from the local spacing, so the stencil stays inside the integrated range
        gap = abs(ts[1] - ts[0]) if k == 0 and len(ts) > 1 else abs(ts[k] - ts[k - 1]) if k else abs(t)
        h = 1e-3 * max(gap, 1e-9)
        ys = [sol(t + c * h)[0] for c in (-2, -1, 1, 2)]
        dy = (ys[0] - 8 * ys[1] + 8 * ys[2] - ys[3]) / (12 * h)
        y = sol(t)[0]
        P, Q = rhs_fields(t, y)
        out[k] = abs(P * dy - Q) / (abs(P) * max(abs(y), 1.0) + 1e-300)
    return out


def _tu_fields_f(p):
    al = _fl(p).alpha

    def f(t, u):
        Du = -2 * u * u + 2 * u - 4 * (al - 4) * t * u / 3 + 10 * t * t * u / 3
        Dt = 3 * (al - t) * u - 3 * al - (4 * al - 1) * t - (al - 2) * t * t + t**3
        return Dt, Du

    return f


def _sw_fields_s(p):
    # in s = ln sigma: (Delta_2/sigma) dw/ds = Delta_1
    r = _fl(p).r

    def f(s, w):
        sig = math.exp(s)
        s2 = sig * sig
        D1 = w * (w - 1) * (w - r) - (3 * w - 3 * (r - 1)) * s2
        D2 = sig * (5 * w * w - (6 + 2 * r) * w + 3 * r - 3 * s2) / 3
        return D2 / sig, D1

    return f


def integrate_P6_to_Q2(p: ParamSet, tau_star, sigma_max=1e3, rtol=1e-12, atol=1e-14,
                       start="series", n_samples=400, check_sandwich=True):
    """P6 -> Q2 branch in double precision, stopped at tau = tau*.

    Runs in SW (s = ln sigma) from sigma_max to the switch tau = alpha/2, then in
    TU down to tau*.  x is integrated relative to x(sigma_max) = 0; callers fix
    the offset.  Returns (curve, u_F(tau*), error estimate).
    """
    fp = _fl(p)
    a, al, wm = fp.a, fp.alpha, fp.w_minus
    tau_star = float(tau_star)
    if not 0 < tau_star < al:
        raise ProfileError("OUT_OF_RANGE", "tau* must lie in (0, alpha)")
    if start == "series":
        w0, _, ff_err = far_field_w(p, sigma_max, K=24, prec=max(p.prec, 128))
        w0, ff_err = float(w0), float(ff_err)
    else:
        pt, ff_err = start_far_field(p, sigma_max)
        w0, ff_err = float(pt.w), float(ff_err)
    tau_switch = max(al / 2, tau_star)
    w_switch = wm - tau_switch / (1 + a)

    def ev_switch(s, y):
        return y[0] - w_switch

    ev_switch.terminal = True
    ev_switch.direction = 1
    sw = solve_ivp(sw_rhs(p), [math.log(sigma_max), math.log(1e-3)], [w0, 0.0], method="DOP853",
                   rtol=rtol, atol=atol, events=ev_switch, dense_output=True)
    if sw.status != 1:
        raise ProfileError("EVENT_MISSED", "P6 branch never reached tau = alpha/2")
    s_sw, (w_sw, x_sw) = sw.t_events[0][0], sw.y_events[0][0]
    sig_sw = math.exp(s_sw)
    u_sw = (1 + a) ** 2 * sig_sw**2
    tu = solve_ivp(tu_rhs(p), [tau_switch, tau_star], [u_sw, x_sw], method="DOP853", rtol=rtol, atol=atol,
                   dense_output=True)
    if tu.status != 0:
        raise ProfileError("STEP_UNDERFLOW", tu.message)
    uF = float(tu.y[0, -1])

    # samples: SW part mapped to TU, then the TU part
    s_grid = np.linspace(math.log(sigma_max), s_sw, n_samples // 2)
    sig = np.exp(s_grid)
    wv = np.array([sw.sol(s)[0] for s in s_grid])
    xs_sw = np.array([sw.sol(s)[1] for s in s_grid])
    t_grid = np.linspace(tau_switch, tau_star, n_samples // 2)[1:]
    uv = np.array([tu.sol(t)[0] for t in t_grid])
    xs_tu = np.array([tu.sol(t)[1] for t in t_grid])
    taus = np.concatenate([-(1 + a) * (wv - wm), t_grid])
    us = np.concatenate([(1 + a) ** 2 * sig**2, uv])
    xs = np.concatenate([xs_sw, xs_tu])
    res = np.concatenate([_residuals(lambda s: sw.sol(s), _sw_fields_s(p), s_grid[1:-1]),
                          _residuals(lambda t: tu.sol(t), _tu_fields_f(p), t_grid[1:-1])])
    if check_sandwich:
        inside = (taus > 0) & (taus < al)
        lo = u_g(p, taus[inside])
        hi = u_b(p, taus[inside])
        uu = us[inside]
        bad = np.nonzero(~((lo < uu) & (uu < hi)))[0]
        if len(bad):
            k = bad[0]
            raise ProfileError("SANDWICH_VIOLATION", f"u_F left (u_g, u_b) at tau={taus[inside][k]:.6g}")
    err = 10 * rtol * abs(uF) + ff_err * (1 + a) ** 2 * sigma_max**2
    curve = SolutionCurve("TU", taus, us, xs, res, -1, "reached target",
                          events={"tau_switch": tau_switch, "sigma_switch": sig_sw},
                          meta={"sigma_max": sigma_max, "far_field_err": ff_err, "rtol": rtol},
                          dense={"sw": sw.sol, "tu": tu.sol})
    return curve, uF, err


def integrate_to_Q6(p: ParamSet, tau_from, u_from, decades: int = 4, prec: Optional[int] = None, tol=None):
    """Continue the P6 branch from (tau_from, u_from) toward tau = alpha, where u blows up.

    Run backwards the branch is repelled from P6, and a double precision run
    levels off at a finite u.  This one uses the Taylor integrator; u_from
    must carry the working precision (e.g. from u_F_mp).  Returns the
    checkpoints alpha (1 - 10^-k), k = 1..decades, as (tau, u, u (alpha - tau)).
    """
    prec = prec or p.prec
    tol = default_tol(prec) if tol is None else tol
    ode = tu_poly_ode(p, prec)
    out = []
    with mp.workprec(prec):
        al = mp.mpf(p.alpha)
        t0, u0 = mp.mpf(tau_from), mp.mpf(u_from)
        if not 0 < t0 < al:
            raise ProfileError("OUT_OF_RANGE", "tau_from must lie in (0, alpha)")
        for k in range(1, decades + 1):
            t1 = al * (1 - mp.mpf(10) ** -k)
            if t1 <= t0:
                continue
            r = ode.solve(t0, u0, t1, tol=tol, max_steps=200000)
            t0, u0 = t1, r.y
            out.append((t0, u0, u0 * (al - t0)))
    return out


def tu_rhs_u(p: ParamSet):
    """The TU system with u as the independent variable: y = (tau, x)."""
    f = _tu_fields_f(p)

    def rhs(u, y):
        t = y[0]
        Dt, Du = f(t, u)
        return [Dt / Du, -((1 + t) ** 2 - u) / Du]

    return rhs


def _tu_fields_u(p):
    # (Delta_u) dtau/du = Delta_tau
    f = _tu_fields_f(p)

    def g(u, t):
        Dt, Du = f(t, u)
        return Du, Dt

    return g


def integrate_from_series(p: ParamSet, s, tau_from, direction=-1, tau_end=None, x_from=0.0,
                          rtol=1e-12, atol=1e-14, tail_tol=1e-13, n_samples=400, steep=8.0):
    """Continue u_L from the series value at tau_from, away from Q2.

    For direction -1 the run stops where Delta_tau = 0 (the image Q_A of the
    point where w' = 0).  u(tau) folds there, so once |du/dtau| exceeds
    ``steep`` the run switches to u as the independent variable; the crossing
    is then transversal and is refined by root bracketing on the dense output.
    """
    al = _fl(p).alpha
    tail = s.tail_estimate(tau_from)
    if tail > tail_tol:
        raise ProfileError("TAIL_TOO_LARGE", f"series tail {tail:.3g} at tau={tau_from:.6g}")
    u0 = float(s.value(tau_from))
    fDt = _tu_fields_f(p)
    if direction > 0:
        tau_end = tau_end if tau_end is not None else al * 0.999
        sol = solve_ivp(tu_rhs(p), [tau_from, tau_end], [u0, x_from], method="DOP853", rtol=rtol, atol=atol,
                        dense_output=True)
        ts = np.linspace(tau_from, tau_end, n_samples)
        ys = np.array([sol.sol(t) for t in ts])
        res = _residuals(lambda t: sol.sol(t), fDt, ts[1:-1])
        return SolutionCurve("TU", ts, ys[:, 0], ys[:, 1], res, 1, "reached target", {},
                             {"tail": tail, "rtol": rtol}, sol.sol)

    a_ = float(p.a)
    tau_end = tau_end if tau_end is not None else (a_ * a_ - 3) / (2 * (a_ + 3)) - 0.5

    def ev_steep(t, y):
        Dt, Du = fDt(t, y[0])
        return abs(Du) - steep * abs(Dt)

    ev_steep.terminal = True
    ev_steep.direction = 1
    sol1 = solve_ivp(tu_rhs(p), [tau_from, tau_end], [u0, x_from], method="DOP853", rtol=rtol, atol=atol,
                     events=ev_steep, dense_output=True)
    if sol1.status != 1:
        raise ProfileError("EVENT_MISSED", "u(tau) never steepened toward a Delta_tau = 0 fold")
    t1, (u1, x1) = sol1.t_events[0][0], sol1.y_events[0][0]
    Dt1, Du1 = fDt(t1, u1)
    # tau keeps decreasing up to the fold, so du has the sign of -du/dtau
    du_sign = -np.sign(Du1 / Dt1)
    u_stop = u1 + du_sign * max(1.0, abs(u1))

    def ev_fold(u, y):
        return fDt(y[0], u)[0]

    ev_fold.terminal = True
    sol2 = solve_ivp(tu_rhs_u(p), [u1, u_stop], [t1, x1], method="DOP853", rtol=rtol, atol=atol,
                     events=ev_fold, dense_output=True)
    if sol2.status != 1 or not len(sol2.t_events[0]):
        raise ProfileError("EVENT_MISSED", "no Delta_tau = 0 crossing on the tau < 0 side")
    uA = sol2.t_events[0][0]
    g = lambda u: fDt(sol2.sol(u)[0], u)[0]
    lo_u, hi_u = sorted((sol2.t[-2], sol2.t[-1]))
    try:
        if g(lo_u) * g(hi_u) < 0:
            uA = brentq(g, lo_u, hi_u, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    except ValueError as e:
        raise ProfileError("EVENT_MISSED", f"Delta_tau = 0 bracket could not be refined: {e}")
    tauA, xA = sol2.sol(uA)
    n1 = n_samples // 2
    ts1 = np.linspace(tau_from, t1, n1)
    us2 = np.linspace(u1, uA, n_samples - n1)[1:]
    y1 = np.array([sol1.sol(t) for t in ts1])
    y2 = np.array([sol2.sol(u) for u in us2])
    taus = np.concatenate([ts1, y2[:, 0]])
    us = np.concatenate([y1[:, 0], us2])
    xs = np.concatenate([y1[:, 1], y2[:, 1]])
    res = np.concatenate([_residuals(lambda t: sol1.sol(t), fDt, ts1[1:-1]),
                          _residuals(lambda u: sol2.sol(u), _tu_fields_u(p), us2[:-1])])
    events = {"tau_A": float(tauA), "u_A": float(uA), "x_A": float(xA), "tau_switch": float(t1),
              "u_b_at_A": float(u_b(p, float(tauA)))}
    return SolutionCurve("TU", taus, us, xs, res, -1, "crossed Delta_tau=0 at Q_A", events,
                         {"tail": tail, "rtol": rtol}, {"tau": sol1.sol, "u": sol2.sol})


def arc_grid(dense, s0, s1, n, fine=4):
    """n abscissas in [s0, s1] equidistributed in arc length of (s, x(s)); dense(s) returns (w, x)."""
    sf = np.linspace(s0, s1, fine * n)
    xf = np.array([dense(v)[1] for v in sf])
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(sf), np.diff(xf)))])
    return np.interp(np.linspace(0, arc[-1], n), arc, sf)


def integrate_sw_to_origin(p: ParamSet, start, x_start=0.0, sigma_floor=1e-6, rtol=1e-12, atol=1e-14,
                           n_samples=800):
    """From (sigma, w) with Delta_2 > 0, follow dw/dsigma = Delta_1/Delta_2 as sigma decreases to sigma_floor."""
    fp = _fl(p)
    a = fp.a
    sig0, w0 = float(start[0]), float(start[1])
    f2 = _sw_fields_s(p)
    if f2(math.log(sig0), w0)[0] <= 0:
        raise ProfileError("OUT_OF_RANGE", "start point not inside Delta_2 > 0")

    def ev_d2(s, y):
        return f2(s, y[0])[0]

    ev_d2.terminal = True
    ev_d2.direction = -1

    def ev_d1(s, y):
        return f2(s, y[0])[1]

    s0, s1 = math.log(sig0), math.log(sigma_floor)
    sol = solve_ivp(sw_rhs(p), [s0, s1], [w0, x_start], method="DOP853", rtol=rtol, atol=atol,
                    events=[ev_d2, ev_d1], dense_output=True)
    if len(sol.t_events[0]):
        raise ProfileError("SONIC_ESCAPE_FAILED", f"Delta_2 = 0 reached at sigma={math.exp(sol.t_events[0][0]):.6g}")
    if sol.status != 0:
        raise ProfileError("STEP_UNDERFLOW", sol.message)
    d1_events = [math.exp(t) for t in sol.t_events[1]]
    ss = arc_grid(sol.sol, s0, s1, n_samples)
    ys = np.array([sol.sol(s) for s in ss])
    sig = np.exp(ss)
    margin = ys[:, 0] - a * (1 + a) * sig**2
    if np.any(margin <= 0):
        k = int(np.argmax(margin <= 0))
        raise ProfileError("BARRIER_VIOLATION", f"w <= a(1+a) sigma^2 at sigma={sig[k]:.6g}")
    res = _residuals(lambda s: sol.sol(s), f2, ss[1:-1])
    # w ~ C sigma^k near the origin: extrapolate log w against log sigma
    tail = slice(-max(10, n_samples // 20), None)
    k_fit, logc = np.polyfit(ss[tail], np.log(ys[tail, 0]), 1)
    events = {"sigma_1": d1_events, "w_limit_exponent": k_fit, "w_at_floor": float(ys[-1, 0]),
              "barrier_margin_min": float(margin.min())}
    return SolutionCurve("SW", sig, ys[:, 0], ys[:, 1], res, -1, "approached P4", events,
                         {"sigma_floor": sigma_floor, "rtol": rtol}, sol.sol)


def x_parametrize(p: ParamSet, sigma, x, w):
    """Check and package a sampled x(sigma) map (sigma strictly monotone along the samples).

    Returns a dict with the sorted map, the sign of f = -Delta/Delta_2 and the
    tail slopes of x against ln sigma.
    """
    sigma, x, w = map(np.asarray, (sigma, x, w))
    order = np.argsort(sigma)
    sg, xs, ws = sigma[order], x[order], w[order]
    if np.any(np.diff(xs) >= 0):
        k = int(np.argmax(np.diff(xs) >= 0))
        raise ProfileError("NON_MONOTONE", f"x(sigma) not strictly decreasing near sigma={sg[k]:.6g}")
    fld = eval_sw_fields(p, sg, ws)
    f = -fld.delta / fld.delta2
    sig2 = float(p.sigma2) if hasattr(p, "sigma2") else 1 - float(p.w_minus)
    away = np.abs(sg - sig2) > 1e-6
    f_negative = bool(np.all(f[away] < 0))
    n = max(10, len(sg) // 20)
    lo_slope = np.polyfit(np.log(sg[:n]), xs[:n], 1)[0]
    hi_slope = np.polyfit(np.log(sg[-n:]), xs[-n:], 1)[0]
    return {"sigma": sg, "x": xs, "f_negative": f_negative, "slope_small_sigma": lo_slope,
            "slope_large_sigma": hi_slope}
