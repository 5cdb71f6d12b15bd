"""Phase-plane fields, the coordinate change Psi, root curves and barrier curves.

All evaluators are plain polynomial/rational expressions, so they accept
floats, numpy arrays, mpf scalars, mpmath intervals and the :class:`Dual`
numbers below.  Parameters are converted to the argument's number type by
:func:`coefs`.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import mpmath as mp
import numpy as np
from mpmath import iv

from .errors import ProfileError
from .params import D, ELL, ParamSet


class PhasePointSW(NamedTuple):
    sigma: object
    w: object


class PhasePointTU(NamedTuple):
    tau: object
    u: object


class SWFields(NamedTuple):
    delta: object
    delta1: object
    delta2: object


class TUFields(NamedTuple):
    delta_u: object
    delta_tau: object


class Coefs(NamedTuple):
    r: object
    a: object
    alpha: object
    w_minus: object


# ---------------------------------------------------------------- number types

class Dual:
    """First-order forward-mode jet: value plus derivative."""

    __slots__ = ("v", "d")

    def __init__(self, v, d=0):
        self.v = v
        self.d = d

    def _lift(self, o):
        return o if isinstance(o, Dual) else Dual(o, 0)

    def __add__(self, o):
        o = self._lift(o)
        return Dual(self.v + o.v, self.d + o.d)

    __radd__ = __add__

    def __sub__(self, o):
        o = self._lift(o)
        return Dual(self.v - o.v, self.d - o.d)

    def __rsub__(self, o):
        return self._lift(o) - self

    def __neg__(self):
        return Dual(-self.v, -self.d)

    def __mul__(self, o):
        o = self._lift(o)
        return Dual(self.v * o.v, self.d * o.v + self.v * o.d)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = self._lift(o)
        q = self.v / o.v
        return Dual(q, (self.d - q * o.d) / o.v)

    def __rtruediv__(self, o):
        return self._lift(o) / self

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("Dual only supports integer powers")
        if n == 0:
            return Dual(self.v * 0 + 1, self.d * 0)
        if n < 0:
            return 1 / self ** (-n)
        return Dual(self.v**n, n * self.v ** (n - 1) * self.d)


@contextmanager
def _ivprec(prec):
    # the interval context has no workprec manager of its own
    old = iv.prec
    iv.prec = prec
    try:
        yield
    finally:
        iv.prec = old


def _kind(x):
    if isinstance(x, Dual):
        return _kind(x.v)
    if isinstance(x, iv.mpf):
        return "iv"
    if isinstance(x, (mp.mpf, mp.mpc)):
        return "mp"
    return "float"


@lru_cache(maxsize=256)
def _coefs_cached(p: ParamSet, kind: str, ivprec: int):
    vals = (p.r, p.a, p.alpha, p.w_minus)
    if kind == "mp":
        return Coefs(*vals)
    if kind == "iv":
        with _ivprec(ivprec):
            return Coefs(*(iv.mpf(v) for v in vals))
    return Coefs(*(float(v) for v in vals))


def coefs(p: ParamSet, like=None, kind=None) -> Coefs:
    """Parameters (r, a, alpha, w_-) in the number type of ``like``."""
    kind = kind or _kind(like)
    c = _coefs_cached(p, kind, iv.prec if kind == "iv" else 0)
    if isinstance(like, Dual):
        # interval types refuse to combine with foreign operands, so lift
        # the constants to jets as well
        return Coefs(*(Dual(v, 0) for v in c))
    return c


def _sqrt(x):
    k = _kind(x)
    if k == "iv":
        return iv.sqrt(x)
    if k == "mp":
        return mp.sqrt(x)
    return np.sqrt(x)


# ---------------------------------------------------------------- fields

def eval_sw_fields(p: ParamSet, sigma, w) -> SWFields:
    c = coefs(p, sigma if _kind(sigma) != "float" else w)
    r, d, ell = c.r, D, ELL
    s2 = sigma * sigma
    delta = (w - 1) ** 2 - s2
    delta1 = w * (w - 1) * (w - r) - (d * w - ell * (r - 1)) * s2
    delta2 = sigma * ((ell + d - 1) * w * w - (ell + d + ell * r - r) * w + ell * r - ell * s2) / ell
    return SWFields(delta, delta1, delta2)


def eval_tu_fields(p: ParamSet, tau, u) -> TUFields:
    al = coefs(p, tau if _kind(tau) != "float" else u).alpha
    delta_u = -2 * u * u + 2 * u - 4 * (al - 4) * tau * u / 3 + 10 * tau * tau * u / 3
    delta_tau = 3 * (al - tau) * u - 3 * al - (4 * al - 1) * tau - (al - 2) * tau * tau + tau**3
    return TUFields(delta_u, delta_tau)


def delta_tau_du(p: ParamSet, tau):
    """d(Delta_tau)/du, which does not depend on u."""
    return 3 * (coefs(p, tau).alpha - tau)


def N_operator(p: ParamSet, w, dw, sigma):
    """N[w](sigma) = Delta_2 w' - Delta_1 along a curve w(sigma)."""
    f = eval_sw_fields(p, sigma, w)
    return f.delta2 * dw - f.delta1


def L_operator(p: ParamSet, u, tau, du=None):
    """L[u](tau) = Delta_tau u' - Delta_u.

    ``u`` is either a :class:`Curve` or a callable, in which case ``du`` must
    be the derivative callable.
    """
    if isinstance(u, Curve):
        uv, dv = u.value(tau), u.deriv(tau)
    else:
        uv, dv = u(tau), du(tau)
    f = eval_tu_fields(p, tau, uv)
    return f.delta_tau * dv - f.delta_u


# ---------------------------------------------------------------- coordinates

def psi(p: ParamSet, sigma, w) -> PhasePointTU:
    c = coefs(p, sigma if _kind(sigma) != "float" else w)
    return PhasePointTU(-(1 + c.a) * (w - c.w_minus), (1 + c.a) ** 2 * sigma * sigma)


def psi_inverse(p: ParamSet, tau, u) -> PhasePointSW:
    if np.any(np.asarray(u < 0)):
        raise ProfileError("NEGATIVE_U", "psi_inverse needs u >= 0")
    c = coefs(p, tau if _kind(tau) != "float" else u)
    return PhasePointSW(_sqrt(u) / (1 + c.a), c.w_minus - tau / (1 + c.a))


# ---------------------------------------------------------------- root curves

def root_curves_w(p: ParamSet, sigma):
    """Three real roots of w -> Delta_1(sigma, w), sorted ascending."""
    use_mp = _kind(sigma) == "mp"
    if use_mp:
        ctx, r = mp, p.r
    else:
        ctx, r, sigma = math, float(p.r), float(sigma)
    s2 = sigma * sigma
    # w^3 + b w^2 + c w + e
    b, c, e = -(1 + r), r - 3 * s2, 3 * (r - 1) * s2
    shift = -b / 3
    pp = c - b * b / 3
    qq = 2 * b**3 / 27 - b * c / 3 + e
    if pp >= 0:
        raise ProfileError("ROOT_FAILURE", "cubic does not have three real roots", sigma=sigma)
    m = 2 * ctx.sqrt(-pp / 3)
    arg = 3 * qq / (pp * m)
    if abs(arg) > 1:
        if abs(arg) - 1 > 1e-12:
            raise ProfileError("ROOT_FAILURE", "cubic does not have three real roots", sigma=sigma)
        arg = 1 if arg > 0 else -1
    th = ctx.acos(arg) / 3
    pi = ctx.pi
    roots = sorted(shift + m * ctx.cos(th - 2 * pi * k / 3) for k in range(3))
    out = []
    for w in roots:
        # one Newton polish; the trigonometric formula loses a few ulps
        f = ((w + b) * w + c) * w + e
        df = (3 * w + 2 * b) * w + c
        if df != 0:
            w = w - f / df
        out.append(w)
    return tuple(out)


def delta2_curves(p: ParamSet, sigma):
    """(w2_minus, w2_plus) on Delta_2 = 0, or None where the discriminant is negative."""
    use_mp = _kind(sigma) == "mp"
    ctx = mp if use_mp else math
    r = p.r if use_mp else float(p.r)
    disc = r * r - 9 * r + 9 + 15 * sigma * sigma
    if disc < 0:
        return None
    sq = ctx.sqrt(disc)
    return ((r + 3 - sq) / 5, (r + 3 + sq) / 5)


# ---------------------------------------------------------------- barriers

@dataclass(frozen=True)
class Curve:
    """A curve tau -> u(tau) with analytic first derivative."""

    name: str
    value: Callable
    deriv: Callable
    L_closed: Optional[Callable] = None
    pole: Optional[object] = None

    def __call__(self, tau):
        return self.value(tau)


def _check_pole(den, name):
    if isinstance(den, Dual):
        den = den.v
    if isinstance(den, iv.mpf):
        if den.a <= 0 <= den.b:
            raise ProfileError("POLE", f"{name} evaluated on an interval containing its pole")
    elif np.any(np.asarray(den) == 0):
        raise ProfileError("POLE", f"{name} evaluated at its pole")


def u_g(p, tau):
    al = coefs(p, tau).alpha
    return 1 - 2 * (al - 4) * tau / 3 + 5 * tau * tau / 3


def du_g(p, tau):
    al = coefs(p, tau).alpha
    return -2 * (al - 4) / 3 + 10 * tau / 3


def L_u_g(p, tau):
    al = coefs(p, tau).alpha
    return -4 * tau * (tau + 1 - al) * (2 * tau + 1 - al) * (5 * tau + 4 - al) / 3


def u_b(p, tau):
    al = coefs(p, tau).alpha
    den = al - tau
    _check_pole(den, "u_b")
    return (1 + tau) * (-tau * tau + (al - 1) * tau + 3 * al) / (3 * den)


def du_b(p, tau):
    al = coefs(p, tau).alpha
    den = al - tau
    _check_pole(den, "u_b")
    q = -tau * tau + (al - 1) * tau + 3 * al
    num = (1 + tau) * q
    dnum = q + (1 + tau) * (-2 * tau + al - 1)
    return (dnum * den + num) / (3 * den * den)


def U_O(p, tau):
    return 1 - tau / coefs(p, tau).a


def dU_O(p, tau):
    return tau * 0 - 1 / coefs(p, tau).a


def L_U_O_reduced(p, tau):
    """L[U_O]/(tau(tau - a)), a linear function of tau."""
    a = coefs(p, tau).a
    return (7 * a * (a + 3) * tau - 4 * a**3 + 27 * a - 9) / (3 * a * a * (a + 3))


def L_U_O(p, tau):
    a = coefs(p, tau).a
    return tau * (tau - a) * L_U_O_reduced(p, tau)


def _sigma1_bracket(al, tau):
    c = 3 * al + 1
    den = c - 2 * tau
    return (2 * (al + 1) * tau + 2 * c) / den + 1 + tau, den


def U_sigma1(p, tau):
    al = coefs(p, tau).alpha
    B, den = _sigma1_bracket(al, tau)
    _check_pole(den, "U_sigma1")
    return B * B / 9


def dU_sigma1(p, tau):
    al = coefs(p, tau).alpha
    B, den = _sigma1_bracket(al, tau)
    _check_pole(den, "U_sigma1")
    c = 3 * al + 1
    dB = 2 * c * (al + 3) / (den * den) + 1
    return 2 * B * dB / 9


def phi1(p, tau):
    al = coefs(p, tau).alpha
    c = 1 + 3 * al
    return (9 * (1 - al) ** 2 * c * c
            + 6 * (1 - al) * c * (2 + 11 * al - 5 * al * al) * tau
            + c * (19 + 112 * al - 83 * al * al) * tau**2
            + 4 * (-9 + 2 * al + 67 * al * al) * tau**3
            - 4 * (9 + 29 * al) * tau**4
            + 16 * tau**5)


def L_U_sigma1_reduced(p, tau):
    """L[U_sigma1]/tau."""
    al = coefs(p, tau).alpha
    B, den = _sigma1_bracket(al, tau)
    _check_pole(den, "U_sigma1")
    return -16 * (tau + 1 - al) * B * phi1(p, tau) / (81 * den**4)


def L_U_sigma1(p, tau):
    return tau * L_U_sigma1_reduced(p, tau)


def U_sigma2(p, tau):
    al = coefs(p, tau).alpha
    c = 3 * al + 1
    den = c - 2 * tau
    _check_pole(den, "U_sigma2")
    return 4 * (1 + tau) * (c + (al + 1) * tau) / (3 * den) - (1 + tau) ** 2 / 3


def dU_sigma2(p, tau):
    al = coefs(p, tau).alpha
    c = 3 * al + 1
    den = c - 2 * tau
    _check_pole(den, "U_sigma2")
    m = (1 + tau) * (c + (al + 1) * tau)
    dm = c + (al + 1) * (1 + 2 * tau)
    return 4 * (dm * den + 2 * m) / (3 * den * den) - 2 * (1 + tau) / 3


def L_U_sigma2_reduced(p, tau):
    """L[U_sigma2]/(tau (alpha - 1 - 2 tau)); both factors vanish at an end of (tau_Q5, 0)."""
    al = coefs(p, tau).alpha
    c = 3 * al + 1
    den = c - 2 * tau
    _check_pole(den, "U_sigma2")
    br = -(1 + al) * tau * tau + c * (-1 + al - 2 * tau)
    return 16 * (tau + 1) * (-1 + al - tau) * br / (3 * den**3)


def L_U_sigma2(p, tau):
    al = coefs(p, tau).alpha
    return tau * (-1 + al - 2 * tau) * L_U_sigma2_reduced(p, tau)


def U_sigma2_minus_u_b(p, tau):
    al = coefs(p, tau).alpha
    return (-2 * tau * (1 + tau) * (-2 * tau + al - 1) * (-tau + al - 1)
            / (3 * (-2 * tau + 3 * al + 1) * (al - tau)))


def _bind(p, f):
    return lambda tau: f(p, tau)


def barrier_catalog(p: ParamSet) -> dict:
    """The closed-form comparison curves, keyed by name."""
    with mp.workprec(p.prec):
        s_pole = (3 * p.alpha + 1) / 2
    return {
        "u_g": Curve("u_g", _bind(p, u_g), _bind(p, du_g), _bind(p, L_u_g)),
        "u_b": Curve("u_b", _bind(p, u_b), _bind(p, du_b), None, p.alpha),
        "U_O": Curve("U_O", _bind(p, U_O), _bind(p, dU_O), _bind(p, L_U_O)),
        "U_sigma1": Curve("U_sigma1", _bind(p, U_sigma1), _bind(p, dU_sigma1),
                          _bind(p, L_U_sigma1), s_pole),
        "U_sigma2": Curve("U_sigma2", _bind(p, U_sigma2), _bind(p, dU_sigma2),
                          _bind(p, L_U_sigma2), s_pole),
    }


def poly_curve(name, coeffs) -> Curve:
    """u(tau) = sum coeffs[n] tau^n, e.g. the truncated sonic series u_(N)."""
    coeffs = list(coeffs)

    def horner(tau):
        acc = tau * 0
        for c in reversed(coeffs):
            acc = acc * tau + c
        return acc

    def deriv(tau):
        # n*c formed at evaluation time so it follows the caller's precision
        acc = tau * 0
        for n in range(len(coeffs) - 1, 0, -1):
            acc = acc * tau + n * coeffs[n]
        return acc

    return Curve(name, horner, deriv)


def u2_curve(p: ParamSet, a1, a2, a3) -> Curve:
    """u_(2) = 1 + a1 tau + a2 tau^2 with its closed-form L expression."""
    with mp.workprec(p.prec):
        V = -p.gamma(3) * a3
        W = -4 * a2 * a2 - 4 * a2 / 3
    base = poly_curve("u_2", [mp.mpf(1), a1, a2])

    def L(tau):
        if _kind(tau) == "float":
            return float(V) * tau**3 + float(W) * tau**4
        return V * tau**3 + W * tau**4

    return Curve("u_2", base.value, base.deriv, L)


# ---------------------------------------------------------------- certificates

class SignCertificate(NamedTuple):
    name: str
    lo: object
    hi: object
    sign: int
    n: int
    min_sample: float
    min_bound: float
    ok: bool
    bad_cells: tuple


def certify_sign(name, g, lo, hi, sign, n=4096, prec=256, ivprec=64) -> SignCertificate:
    """Certify sign*g > 0 on the closed interval [lo, hi].

    g is sampled at n+1 uniform nodes in extended precision.  On each cell a
    Lipschitz constant is taken from an interval enclosure of g' (forward-mode
    jets over mpmath intervals), giving the lower bound
    (s g_i + s g_{i+1} - L h)/2 for s*g on the cell.  When that bound is not
    positive, the interval enclosure of g itself on the cell is tried.
    """
    with mp.workprec(prec):
        lo, hi = mp.mpf(lo), mp.mpf(hi)
        h = (hi - lo) / n
        xs = [lo + i * h for i in range(n + 1)]
        vals = [sign * g(x) for x in xs]
    min_sample = float(min(vals))
    bounds = []
    bad = []
    with _ivprec(ivprec):
        for i in range(n):
            cell = iv.mpf([xs[i], xs[i + 1]])
            jet = g(Dual(cell, iv.mpf(1)))
            L = mp.mpf(abs(jet.d).b)
            bound = (vals[i] + vals[i + 1] - L * h) / 2
            if not bound > 0:
                enc = sign * jet.v
                bound = max(bound, mp.mpf(enc.a))
            bounds.append(bound)
            if not bound > 0:
                bad.append(i)
    min_bound = float(min(bounds))
    return SignCertificate(name, lo, hi, sign, n, min_sample, min_bound, not bad, tuple(bad[:20]))


def standard_certificates(p: ParamSet, n=4096):
    """Sign certificates for U_sigma1, U_sigma2 and (when R > 5) U_O.

    Factors vanishing at the interval ends are divided out, so each reduced function is certified on a closed interval.
    """
    with mp.workprec(p.prec):
        tq5 = (p.a**2 - 3) / (2 * (p.a + 3))
    out = [
        # L[U_sigma1] = tau * g with g < 0 on [0, alpha]
        certify_sign("L[U_sigma1]<0 on (0,alpha)", _bind(p, L_U_sigma1_reduced), 0, p.alpha, -1, n, p.prec),
        # L[U_sigma2] = tau (alpha - 1 - 2 tau) g and the prefactor is positive there
        certify_sign("L[U_sigma2]>0 on (tau_Q5,0)", _bind(p, L_U_sigma2_reduced), tq5, 0, 1, n, p.prec),
    ]
    if p.R > 5:
        # L[U_O] = tau (tau - a) g with tau (tau - a) < 0 on (0, a)
        out.append(certify_sign("L[U_O]<0 on (0,a)", _bind(p, L_U_O_reduced), 0, p.a, 1, n, p.prec))
    return out
