"""Parameter algebra at d = ell = 3.

Every quantity is derived from one entry point and evaluated in extended
precision with mpmath, because gamma_n = delta*(R - n) has to stay accurate
when R sits very close to an integer.  The chain is

    r  <->  w_-  <->  a  <->  alpha  <->  lambda = sqrt(alpha)  <->  R = A^2

with A = (1 + lambda)/(1 - lambda).  Each link is a strictly increasing
bijection, so any entry point determines the whole set.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import mpmath as mp

from .errors import ProfileError

D = 3
ELL = 3
DEFAULT_PREC = int(os.environ.get("EULER_IMPLOSION_PREC", "256"))


def to_mpf(x, prec=None):
    """Convert int/float/str/Fraction/mpf to mpf without going through float."""
    with mp.workprec(prec or DEFAULT_PREC):
        if isinstance(x, Fraction):
            return mp.mpf(x.numerator) / x.denominator
        return mp.mpf(x)


class FloatParams(NamedTuple):
    r: float
    w_minus: float
    w_plus: float
    a: float
    alpha: float
    lam: float
    A: float
    R: float
    delta: float


@dataclass(frozen=True)
class ParamSet:
    """The full parameter cluster; immutable once built."""

    r: mp.mpf
    w_minus: mp.mpf
    w_plus: mp.mpf
    a: mp.mpf
    alpha: mp.mpf
    lam: mp.mpf
    A: mp.mpf
    R: mp.mpf
    delta: mp.mpf
    prec: int = DEFAULT_PREC
    d: int = field(default=D, init=False)
    ell: int = field(default=ELL, init=False)

    @property
    def f(self) -> FloatParams:
        return FloatParams(*(float(getattr(self, k)) for k in FloatParams._fields))

    def gamma(self, n):
        """delta*(R - n), the coefficient in front of a_n."""
        with mp.workprec(self.prec):
            return self.delta * (self.R - n)

    def gamma_closed(self, n):
        """The same number written as 8(A^2 - n)/(A + 1)^2."""
        with mp.workprec(self.prec):
            return 8 * (self.A**2 - n) / (self.A + 1) ** 2

    def as_dict(self):
        out = {k: mp.nstr(getattr(self, k), _digits(self.prec)) for k in FloatParams._fields}
        out.update(prec=self.prec, d=self.d, ell=self.ell)
        return out

    @classmethod
    def from_dict(cls, data):
        prec = int(data["prec"])
        vals = {k: to_mpf(data[k], prec) for k in FloatParams._fields}
        return cls(prec=prec, **vals)


def _digits(prec):
    # enough decimal digits to round-trip a `prec`-bit mantissa
    return int(prec * 0.30103) + 3


def _finish(lam, prec, r=None, a=None, w_minus=None):
    # builds everything from lambda; any value already known exactly is kept
    with mp.workprec(prec):
        alpha = lam * lam
        A = (1 + lam) / (1 - lam)
        R = A * A
        delta = 2 * (1 - lam) ** 2
        if a is None:
            if w_minus is not None:
                a = w_minus / (1 - w_minus)
            else:
                # positive root of a^2 + (1 - alpha) a - 3 alpha = 0, cancellation free
                b = 1 - alpha
                a = 6 * alpha / (b + mp.sqrt(b * b + 12 * alpha))
        if w_minus is None:
            w_minus = a / (1 + a)
        if r is None:
            r = (a * a + 6 * a + 3) / ((a + 1) * (a + 3))
        w_plus = r - w_minus
        return ParamSet(r=r, w_minus=w_minus, w_plus=w_plus, a=a, alpha=alpha, lam=lam,
                        A=A, R=R, delta=delta, prec=prec)


def _out_of_range(name, value, lo, hi):
    raise ProfileError("OUT_OF_RANGE", f"{name}={mp.nstr(value, 17)} not in ({lo}, {hi})")


def params_from_r(r, prec=None) -> ParamSet:
    prec = prec or DEFAULT_PREC
    with mp.workprec(prec):
        r = to_mpf(r, prec)
        upper = 3 - mp.sqrt(3)
        if not (1 < r < upper):
            _out_of_range("r", r, 1, "3-sqrt(3)")
        disc = r * r - 6 * r + 6
        if disc <= 0:
            _out_of_range("r", r, 1, "3-sqrt(3)")
        sq = mp.sqrt(disc)
        # w_- = (r - sq)/2 rewritten via w_- w_+ = 3(r - 1)/2
        w_minus = 3 * (r - 1) / (r + sq)
        a = w_minus / (1 - w_minus)
        alpha = a * (a + 1) / (a + 3)
        lam = mp.sqrt(alpha)
        return _finish(lam, prec, r=r, a=a, w_minus=w_minus)


def params_from_w_minus(w_minus, prec=None) -> ParamSet:
    prec = prec or DEFAULT_PREC
    with mp.workprec(prec):
        w_minus = to_mpf(w_minus, prec)
        upper = (3 - mp.sqrt(3)) / 2
        if not (0 < w_minus < upper):
            _out_of_range("w_minus", w_minus, 0, "(3-sqrt(3))/2")
        a = w_minus / (1 - w_minus)
        lam = mp.sqrt(a * (a + 1) / (a + 3))
        return _finish(lam, prec, a=a, w_minus=w_minus)


def params_from_a(a, prec=None) -> ParamSet:
    prec = prec or DEFAULT_PREC
    with mp.workprec(prec):
        a = to_mpf(a, prec)
        if not (0 < a < mp.sqrt(3)):
            _out_of_range("a", a, 0, "sqrt(3)")
        lam = mp.sqrt(a * (a + 1) / (a + 3))
        return _finish(lam, prec, a=a)


def params_from_alpha(alpha, prec=None) -> ParamSet:
    prec = prec or DEFAULT_PREC
    with mp.workprec(prec):
        alpha = to_mpf(alpha, prec)
        if not (0 < alpha < 1):
            _out_of_range("alpha", alpha, 0, 1)
        p = _finish(mp.sqrt(alpha), prec)
        # keep the caller's alpha bit-exact
        return _replace(p, alpha=alpha)


def params_from_lambda(lam, prec=None) -> ParamSet:
    prec = prec or DEFAULT_PREC
    with mp.workprec(prec):
        lam = to_mpf(lam, prec)
        if not (0 < lam < 1):
            _out_of_range("lambda", lam, 0, 1)
        return _finish(lam, prec)


def params_from_R(R, prec=None, allow_integer=False) -> ParamSet:
    """Canonical entry point: the shooting variable R = lambda_-/lambda_+."""
    prec = prec or DEFAULT_PREC
    with mp.workprec(prec):
        R = to_mpf(R, prec)
        if not R > 1:
            _out_of_range("R", R, 1, "inf")
        if not allow_integer and R == mp.floor(R):
            raise ProfileError("OUT_OF_RANGE", f"R={mp.nstr(R, 17)} is an integer "
                               "(pass allow_integer=True to accept it)")
        A = mp.sqrt(R)
        p = _finish((A - 1) / (A + 1), prec)
        return _replace(p, R=R, A=A)


def _replace(p, **kw):
    vals = {k: getattr(p, k) for k in FloatParams._fields}
    vals.update(kw)
    return ParamSet(prec=p.prec, **vals)


def eigenvalues(p: ParamSet):
    """Roots of lambda^2 + 4(alpha+1) lambda + 4(alpha-1)^2 = 0 at Q2, as (lambda_+, lambda_-)."""
    with mp.workprec(p.prec):
        lp = -2 * (p.lam - 1) ** 2
        lm = -2 * (p.lam + 1) ** 2
        return lp, lm


def eigen_residual(p: ParamSet, root):
    with mp.workprec(p.prec):
        return root**2 + 4 * (p.alpha + 1) * root + 4 * (p.alpha - 1) ** 2


class SpecialPoints(NamedTuple):
    P1: tuple
    P2: tuple
    P3: tuple
    P4: tuple
    P5: tuple
    P5p: tuple
    P6: tuple
    Q2: tuple
    Q4: tuple
    Q5: tuple
    Q6: tuple
    sigma2: mp.mpf
    tauQ6: mp.mpf
    P3_branch: str


def special_points(p: ParamSet) -> SpecialPoints:
    with mp.workprec(p.prec):
        r, wm, wp, a = p.r, p.w_minus, p.w_plus, p.a
        P3 = (1 - wp, wp)
        # P3 solves Delta_2 = 0 with discriminant (5 w_+ - r - 3)^2, so the
        # branch is decided by the sign of 5 w_+ - (r + 3)
        gap = 5 * wp - (r + 3)
        branch = "w2_plus" if gap > 0 else ("w2_minus" if gap < 0 else "double")
        return SpecialPoints(
            P1=(mp.mpf(0), mp.mpf(1)),
            P2=(1 - wm, wm),
            P3=P3,
            P4=(mp.mpf(0), mp.mpf(0)),
            P5=(mp.sqrt(3) * r / 6, r / 2),
            P5p=(mp.mpf(0), r),
            P6=(mp.inf, r - 1),
            Q2=(mp.mpf(0), mp.mpf(1)),
            Q4=(a, mp.mpf(0)),
            Q5=((a * a - 3) / (2 * (a + 3)), (a * a + 6 * a + 3) ** 2 / (12 * (a + 3) ** 2)),
            Q6=(p.alpha, mp.inf),
            sigma2=1 - wm,
            tauQ6=p.alpha,
            P3_branch=branch,
        )
