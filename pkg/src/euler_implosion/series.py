"""Power series of the analytic solution through the sonic point Q2.

Writing u_L(tau) = sum a_n tau^n and matching coefficients of
L[u_L] = 0 gives a_0 = 1, a_1 = (2 lambda + 4)/(3 lambda) and, for n >= 2,

    delta (R - n) a_n = E_n(a_0, ..., a_{n-1})

where E_n is linear in a_{n-1}, a_{n-2} plus two quadratic convolutions.
Everything here runs in mpmath at a configurable precision.  The limiting
sequence (A -> infinity) is also produced in exact rational arithmetic, and
the long S_inf run uses a normalized float64 recurrence (see
:func:`s_infinity`).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import mpmath as mp
import numpy as np

from .errors import ProfileError
from .params import ParamSet, params_from_R

INTEGER_GUARD = 1e-6
GUARD_FLOOR = 32
MAX_BITS = 1 << 15
K_RAT = 64


# ---------------------------------------------------------------- sonic series

@dataclass(frozen=True)
class SonicSeries:
    params: ParamSet
    coeffs: tuple
    K: int
    precision_bits: int
    guard_bits: float
    abs_err: tuple = field(repr=False)
    residual: float = 0.0

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, n):
        return self.coeffs[n]

    def value(self, tau, order=None):
        order = self.K if order is None else order
        with mp.workprec(self.precision_bits):
            tau = mp.mpf(tau)
            acc = mp.mpf(0)
            for c in reversed(self.coeffs[: order + 1]):
                acc = acc * tau + c
            return acc

    def deriv(self, tau, order=None):
        order = self.K if order is None else order
        with mp.workprec(self.precision_bits):
            tau = mp.mpf(tau)
            acc = mp.mpf(0)
            for n in range(order, 0, -1):
                acc = acc * tau + n * self.coeffs[n]
            return acc

    def radius_estimate(self):
        """Root-test radius from a log-linear fit over the last half of the coefficients."""
        ns, ls = [], []
        for n in range(max(2, self.K // 2), self.K + 1):
            c = self.coeffs[n]
            if c != 0:
                ns.append(n)
                ls.append(float(mp.log(abs(c))))
        if len(ns) < 2:
            return math.inf
        slope = np.polyfit(ns, ls, 1)[0]
        return math.exp(-slope)

    def tail_estimate(self, tau):
        """Geometric bound on sum_{n > K} |a_n tau^n| from the fitted radius."""
        rho = abs(float(tau)) / self.radius_estimate()
        if rho >= 1:
            return math.inf
        with mp.workprec(self.precision_bits):
            last = max(abs(self.coeffs[n]) * abs(mp.mpf(tau)) ** n for n in range(self.K - 3, self.K + 1))
        return float(last) * rho / (1 - rho)

    def residual_on(self, tau, order=None):
        """L[u_(order)](tau) for the truncated polynomial."""
        from .fields import L_operator

        with mp.workprec(self.precision_bits):
            return L_operator(self.params, lambda t: self.value(t, order), mp.mpf(tau),
                              lambda t: self.deriv(t, order))

    def curve(self, N=None):
        from .fields import poly_curve

        N = self.K if N is None else N
        return poly_curve(f"u_({N})", self.coeffs[: N + 1])


def a1_of(p: ParamSet):
    with mp.workprec(p.prec):
        return (2 * p.lam + 4) / (3 * p.lam)


def _E_coeffs(alpha, n):
    # multipliers of a_{n-1}, a_{n-2}, S1 = sum_{j=2}^{n-1} a_j a_{n+1-j}, S2 = sum_{j=1}^{n-1} a_j a_{n-j}
    return ((alpha - 2) * (n - 1) - 4 * (alpha - 4) / 3,
            -(n - mp.mpf(16) / 3),
            -3 * alpha * (n + 1) / 2,
            mp.mpf(3) * n / 2 - 2)


def _sym_conv(a, lo, hi, k, absval=False):
    # sum_{j=lo}^{hi} a_j a_{k-j} with lo + hi = k, summed over half the range
    if hi < lo:
        return mp.mpf(0)
    m = (lo + hi) // 2
    left = a[lo: m + 1] if (lo + hi) % 2 else a[lo:m]
    right = [a[k - j] for j in range(lo, lo + len(left))]
    if absval:
        s = 2 * mp.fsum(abs(x * y) for x, y in zip(left, right))
    else:
        s = 2 * mp.fdot(left, right)
    if (lo + hi) % 2 == 0:
        mid = a[m] * a[k - m]
        s += abs(mid) if absval else mid
    return s


def _raw_series(p: ParamSet, K: int, bits: int):
    with mp.workprec(bits):
        alpha, lam = p.alpha, p.lam
        a = [mp.mpf(1), (2 * lam + 4) / (3 * lam)]
        scale = [mp.mpf(1), abs(a[1])]
        for n in range(2, K + 1):
            c1, c2, c3, c4 = _E_coeffs(alpha, n)
            S1 = _sym_conv(a, 2, n - 1, n + 1)
            S2 = _sym_conv(a, 1, n - 1, n)
            gam = p.delta * (p.R - n)
            E = c1 * a[n - 1] + c2 * a[n - 2] + c3 * S1 + c4 * S2
            a.append(E / gam)
            mag = (abs(c1 * a[n - 1]) + abs(c2 * a[n - 2]) + abs(c3) * _sym_conv(a, 2, n - 1, n + 1, True)
                   + abs(c4) * _sym_conv(a, 1, n - 1, n, True))
            scale.append(mag / abs(gam))
        return a[: K + 1], scale


def _lift(p: ParamSet, bits: int) -> ParamSet:
    if bits == p.prec:
        return p
    return params_from_R(p.R, prec=bits, allow_integer=True)


def check_resonance(p: ParamSet, K: int, guard=INTEGER_GUARD):
    lo = max(2, int(mp.floor(p.R - guard)))
    for n in range(lo, min(K, int(mp.ceil(p.R + guard))) + 1):
        if abs(p.R - n) < guard:
            raise ProfileError("INTEGER_RESONANCE", f"R={mp.nstr(p.R, 20)} within {guard} of n={n} <= K={K}")


def compute_sonic_series(p: ParamSet, K: int, precision_bits: Optional[int] = None,
                         guard_floor: int = GUARD_FLOOR, integer_guard: float = INTEGER_GUARD,
                         max_bits: int = MAX_BITS, residual: bool = True) -> SonicSeries:
    """Coefficients a_0..a_K at the given parameters.

    The series is computed at ``bits`` and again at ``bits + 64``; their
    difference, measured against the magnitude of the terms entering each
    a_n, gives the guard bits.  Precision doubles until at least
    ``guard_floor`` bits survive.
    """
    if K < 1:
        raise ProfileError("OUT_OF_RANGE", "K must be >= 1")
    check_resonance(p, K, integer_guard)
    bits = max(precision_bits or p.prec, 64)
    while True:
        lo, _ = _raw_series(_lift(p, bits), K, bits)
        hi_bits = bits + 64
        hp = _lift(p, hi_bits)
        hi, scale = _raw_series(hp, K, hi_bits)
        with mp.workprec(hi_bits):
            errs = [abs(x - y) for x, y in zip(lo, hi)]
            worst = max((e / s for e, s in zip(errs, scale) if s != 0), default=mp.mpf(0))
            guard = float(bits if worst == 0 else -mp.log(worst, 2))
        if guard >= guard_floor:
            break
        bits *= 2
        if bits > max_bits:
            raise ProfileError("PRECISION_EXHAUSTED", f"only {guard:.1f} guard bits at {bits // 2} bits")
    s = SonicSeries(hp, tuple(hi), K, hi_bits, guard, tuple(errs))
    return _with_residual(s) if residual else s


def _with_residual(s: SonicSeries) -> SonicSeries:
    p, a = s.params, s.coeffs
    worst = mp.mpf(0)
    with mp.workprec(s.precision_bits):
        for n in range(2, s.K + 1):
            c1, c2, c3, c4 = _E_coeffs(p.alpha, n)
            E = c1 * a[n - 1] + c2 * a[n - 2] + c3 * _sym_conv(a, 2, n - 1, n + 1) + c4 * _sym_conv(a, 1, n - 1, n)
            g = p.gamma(n)
            r = abs(g * a[n] - E) / (abs(E) + abs(g * a[n]) or 1)
            worst = max(worst, r)
    return SonicSeries(s.params, s.coeffs, s.K, s.precision_bits, s.guard_bits, s.abs_err, float(worst))


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def catalan_fit(s: SonicSeries, beta=1.5):
    """Smallest K_c with |a_n| <= C_{n-1} K_c^{n-beta} for all 2 <= n <= K."""
    kc = mp.mpf(1)
    with mp.workprec(s.precision_bits):
        for n in range(2, s.K + 1):
            if s.coeffs[n] == 0:
                continue
            kc = max(kc, (abs(s.coeffs[n]) / catalan(n - 1)) ** (1 / (n - mp.mpf(beta))))
    return float(kc)


def tau0_of(s: SonicSeries, tol=1e-12, beta=1.5):
    """Largest |tau| with the series tail below 1e-3*tol, capped at 1/(2 K_c)."""
    cap = 1 / (2 * catalan_fit(s, beta))
    t = min(cap, 0.9 * s.radius_estimate())
    while t > 1e-12 and s.tail_estimate(t) > 1e-3 * tol:
        t *= 0.9
    return t


# ---------------------------------------------------------------- reformulation

@dataclass
class ComparisonTables:
    params: ParamSet
    A_: tuple
    B_: tuple
    k1: object
    k2: object
    s1: object
    s2: object
    p1: object
    p2: object
    q1: object
    q2: object
    n: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    p: list = field(default_factory=list)
    q: list = field(default_factory=list)
    M: list = field(default_factory=list)
    mu_star: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    Mhat: list = field(default_factory=list)
    negative_discriminant: list = field(default_factory=list)
    recurrence_residual: float = float("nan")
    M_positive: Optional[bool] = None
    mu_star_increasing: Optional[bool] = None

    def gamma_t(self, t):
        P = self.params
        return 8 * (P.A**2 - t) / (P.A + 1) ** 2

    def p_t(self, t):
        return self.p1 * t + self.p2

    def q_t(self, t):
        return self.q1 * t + self.q2


def reformulate(p: ParamSet, s: SonicSeries, nmax: Optional[int] = None) -> ComparisonTables:
    """Coefficients of the four-term form of the recurrence; tables run over [0, nmax] (default ceil(R) - 1)."""
    if s.K < 5:
        raise ProfileError("OUT_OF_RANGE", "reformulation needs a_2..a_5")
    with mp.workprec(s.precision_bits):
        P = s.params
        al, A = P.alpha, P.A
        a = s.coeffs
        A1 = 3 * al * a[2] - 3 * a[1] - al + 2
        B1 = 3 * al * a[2] + 4 * a[1] + (7 * al - 22) / 3
        A2 = 3 * al * a[3] - 3 * a[2] + 1
        B2 = 3 * al * a[3] + 4 * a[2] - mp.mpf(16) / 3
        A3 = 3 * al * a[4] - 3 * a[3]
        B3 = 3 * al * a[4] + 4 * a[3]
        A4 = 3 * al * a[5] - 3 * a[4]
        B4 = 3 * al * a[5] + 4 * a[4]
        den = A2 * A2 - A1 * A3
        if abs(den) <= mp.mpf(2) ** (-s.precision_bits + 32) * (A2 * A2 + abs(A1 * A3)):
            raise ProfileError("DEGENERATE_K", "A2^2 - A1 A3 vanishes")
        k1 = (A1 * A4 - A2 * A3) / den
        k2 = (A3 * A3 - A4 * A2) / den
        s1 = -B3 + (A2 - B2) * k1 + (2 * A1 - B1) * k2
        s2 = -B4 + (A3 - B3) * k1 + (2 * A2 - B2) * k2
        Ap2 = (A + 1) ** 2
        p1 = -A1 / 2 + 4 * k1 / Ap2
        p2 = -B1 / 2 - 4 * k1 * (A * A + 1) / Ap2
        q1 = -A2 - A1 * k1 + 8 * k2 / Ap2
        q2 = -B2 + (A1 - B1) * k1 - 8 * k2 * (A * A + 2) / Ap2
        t = ComparisonTables(P, (A1, A2, A3, A4), (B1, B2, B3, B4), k1, k2, s1, s2, p1, p2, q1, q2)
        top = int(mp.ceil(P.R)) - 1
        nmax = top if nmax is None else min(int(nmax), top)
        for n in range(0, nmax + 1):
            t.n.append(n)
            t.gamma.append(t.gamma_t(n))
            t.p.append(t.p_t(n))
            t.q.append(t.q_t(n))
        t.recurrence_residual = float(reformulated_residual(t, s))
    return t


def eps_tilde(t: ComparisonTables, a, n):
    """The four-convolution remainder of the reformulated recurrence."""
    al, k1, k2 = t.params.alpha, t.k1, t.k2

    def conv(lo, hi, k):
        return mp.fsum(a[j] * a[k - j] for j in range(lo, hi + 1))

    return (-3 * al * (n + 1) / 2 * conv(6, n - 5, n + 1)
            + (mp.mpf(3 * n - 4) / 2 - 3 * al * k1 * n / 2) * conv(5, n - 5, n)
            + (mp.mpf(3 * n - 7) / 2 * k1 - 3 * al * k2 * (n - 1) / 2) * conv(4, n - 5, n - 1)
            + mp.mpf(3 * n - 10) / 2 * k2 * conv(3, n - 5, n - 2))


def reformulated_residual(t: ComparisonTables, s: SonicSeries):
    """max over 10 <= n <= K of the relative defect of the reformulated recurrence."""
    a = s.coeffs
    worst = mp.mpf(0)
    with mp.workprec(s.precision_bits):
        for n in range(10, s.K + 1):
            lhs = t.gamma_t(n) * a[n]
            terms = [2 * t.p_t(n) * a[n - 1], t.q_t(n) * a[n - 2], t.s1 * a[n - 3], t.s2 * a[n - 4],
                     eps_tilde(t, a, n)]
            scale = abs(lhs) + sum(abs(x) for x in terms)
            worst = max(worst, abs(lhs - mp.fsum(terms)) / scale)
    return worst


def comparison_sequences(p: ParamSet, t: ComparisonTables, a1=None, strict=True) -> ComparisonTables:
    """Fill M_n, mu*_n, mu_n, lambda_n and Mhat_n for n in [0, ceil(R) - 1].

    A negative discriminant under mu*_n (n + 1/2 < R) means R is below the
    regime where these sequences are meaningful.  With ``strict`` it raises;
    otherwise the entry is left as None and listed in ``negative_discriminant``.
    """
    P = t.params
    with mp.workprec(P.prec):
        a1 = a1_of(P) if a1 is None else a1
        R = P.R
        nmax = t.n[-1]
        M = [mp.mpf(1), a1]
        for n in range(2, nmax + 1):
            M.append((2 * t.p[n] * M[n - 1] + t.q[n] * M[n - 2]) / t.gamma[n])
        t.M = M[: nmax + 1]
        t.mu_star, t.mu, t.lam = [], [], []
        for n in range(0, nmax + 1):
            disc = t.gamma_t(n + mp.mpf(1) / 2) * t.q_t(n + mp.mpf(3) / 2) + t.p_t(n + 1) ** 2
            if disc < 0:
                if n + mp.mpf(1) / 2 < R:
                    if strict:
                        raise ProfileError("NEGATIVE_DISCRIMINANT", f"n={n}: {mp.nstr(disc, 8)}")
                    t.negative_discriminant.append(n)
                t.mu_star.append(None)
                t.mu.append(None)
                t.lam.append(None)
                continue
            ms = mp.sqrt(disc)
            mu = ms + t.p_t(n + mp.mpf(1) / 2)
            t.mu_star.append(ms)
            t.mu.append(mu)
            t.lam.append(t.q_t(n + 1) / mu)
        t.Mhat = [None, a1]
        for n in range(2, nmax + 1):
            prev = t.Mhat[n - 1]
            t.Mhat.append(None if prev is None or t.mu[n - 1] is None else t.mu[n - 1] * prev / t.gamma[n])
        t.M_positive = all(m > 0 for m in t.M)
        ms = [m for m in t.mu_star if m is not None]
        t.mu_star_increasing = all(y > x for x, y in zip(ms, ms[1:]))
    return t


def comparison_tables(p: ParamSet, s: Optional[SonicSeries] = None, strict=True,
                      nmax: Optional[int] = None) -> ComparisonTables:
    if s is None:
        s = compute_sonic_series(p, max(10, int(mp.ceil(p.R)) + 1))
    return comparison_sequences(p, reformulate(p, s, nmax), strict=strict)


# ---------------------------------------------------------------- a_{N+1}

@dataclass(frozen=True)
class ANextReport:
    N: int
    a_next: object
    negative: bool
    scale_ratio: float
    ratio_band: tuple
    ratio_range: tuple


def a_next_after_R(p: ParamSet, s: Optional[SonicSeries] = None) -> ANextReport:
    """a_{N+1} for R in (N, N+1), its scale |a_{N+1}|(N+1-R)/(A^3 M_N) and the a_n/M_n band."""
    N = int(mp.floor(p.R))
    if s is None or s.K < N + 1:
        s = compute_sonic_series(p, N + 1)
    t = comparison_tables(p, s, strict=False)
    P = s.params
    with mp.workprec(s.precision_bits):
        a_next = s.coeffs[N + 1]
        scale = abs(a_next) * (N + 1 - P.R) / (P.A**3 * t.M[N])
        lo = int(mp.ceil(mp.sqrt(P.R)))
        ratios = [s.coeffs[n] / t.M[n] for n in range(lo, N + 1)]
    return ANextReport(N, a_next, bool(a_next < 0), float(scale),
                       (float(min(ratios)), float(max(ratios))), (lo, N))


# ---------------------------------------------------------------- A -> infinity

def limiting_exact(K: int):
    """a_0^inf..a_K^inf as Fractions."""
    a = [Fraction(1), Fraction(2)]
    for n in range(2, K + 1):
        s1 = sum((a[j] * a[n + 1 - j] for j in range(2, n)), Fraction(0))
        s2 = sum((a[j] * a[n - j] for j in range(1, n)), Fraction(0))
        e = ((5 - n) * a[n - 1] - (n - Fraction(16, 3)) * a[n - 2]
             - Fraction(3, 2) * (n + 1) * s1 + (Fraction(3, 2) * n - 2) * s2)
        a.append(e / 8)
    return a[: K + 1]


@dataclass(frozen=True)
class LimitTables:
    exact: tuple
    a: tuple
    mu: tuple
    lam: tuple
    Mhat: tuple
    ahat: tuple
    ratio: tuple
    prec: int


def limiting_tables(K: int, K_rat: int = K_RAT, prec: int = 256) -> LimitTables:
    """Limiting coefficients (exact up to K_rat, mpf after) and the ratio trace.

    Index 0 of mu/lam/Mhat/ahat/ratio is unused (None).
    """
    if K < 2:
        raise ProfileError("OUT_OF_RANGE", "K >= 2 required")
    ex = limiting_exact(min(K, K_rat))
    with mp.workprec(prec):
        a = [mp.mpf(x.numerator) / x.denominator for x in ex]
        for n in range(len(a), K + 1):
            S1 = _sym_conv(a, 2, n - 1, n + 1)
            S2 = _sym_conv(a, 1, n - 1, n)
            a.append(((5 - n) * a[n - 1] - (n - mp.mpf(16) / 3) * a[n - 2]
                      - mp.mpf(3) * (n + 1) / 2 * S1 + (mp.mpf(3) * n / 2 - 2) * S2) / 8)
        mu = [None] + [mp.sqrt(8 * n + mp.mpf(4) / 3) for n in range(1, K + 1)]
        lam = [None] + [(n - mp.mpf(1) / 3) / mu[n] for n in range(1, K + 1)]
        Mhat = [None, mp.mpf(2)]
        for n in range(2, K + 1):
            Mhat.append(mu[n - 1] / 8 * Mhat[n - 1])
        ahat = [None] + [a[n] + lam[n] * a[n - 1] for n in range(1, K + 1)]
        ratio = [None] + [ahat[n] / Mhat[n] for n in range(1, K + 1)]
    return LimitTables(tuple(ex), tuple(a), tuple(mu), tuple(lam), tuple(Mhat), tuple(ahat), tuple(ratio), prec)


# ---------------------------------------------------------------- S_inf

@dataclass(frozen=True)
class SInfinityResult:
    value: float
    error: float
    ratio_trace: np.ndarray = field(repr=False)
    K: int
    C_fit: float
    last_ratio: float
    tail_bound: float
    truncation_bound: float
    envelope_ok: bool
    passed: bool


_SEED = 12


def _sinf_increments(K):
    # ell_n = log(mu_n / 8); Mhat_n = Mhat_{n-1} exp(ell_{n-1})
    n = np.arange(K + 2, dtype=np.float64)
    return np.log(np.sqrt(8 * n + 4.0 / 3.0) / 8)


def _sinf_state(K, J):
    ell = _sinf_increments(K)
    # logMhat_j for the small-index block, summed from the start
    Lsmall = np.zeros(J + 8)
    Lsmall[1] = math.log(2.0)
    for j in range(2, J + 8):
        Lsmall[j] = Lsmall[j - 1] + ell[j - 1]
    return ell, Lsmall


def _sinf_seed(c, ell):
    ex = limiting_exact(_SEED)
    logM = 0.0
    for n in range(0, _SEED + 1):
        if n == 1:
            logM = math.log(2.0)
        elif n > 1:
            logM += ell[n - 1]
        c[n] = float(ex[n]) / math.exp(logM)


def _edge_sum(c, ell, Lsmall, cmax, n, k, lo, hi, J):
    """sum_{j=lo}^{hi} c_j c_{k-j} Mhat_j Mhat_{k-j} / Mhat_n with lo + hi = k.

    For long ranges only the two edge blocks of width J are summed (they are
    mirror images, so one is doubled); the middle block is bounded by its
    largest weight.  Partner log-weights are accumulated from index n-1
    downward, which keeps them accurate to a few ulps even when log Mhat_n
    itself is large.
    """
    count = hi - lo + 1
    if count <= 0:
        return 0.0, 0.0
    if count <= 2 * J:
        j = np.arange(lo, hi + 1)
        logM = Lsmall[: n + 1] if n < len(Lsmall) else None
        if logM is None:
            logM = np.concatenate([Lsmall, Lsmall[-1] + np.cumsum(ell[len(Lsmall) - 1:n])])
        return float(np.sum(c[j] * c[k - j] * np.exp(logM[j] + logM[k - j] - logM[n]))), 0.0
    j = np.arange(lo, lo + J)
    m = k - j
    cs = np.cumsum(ell[n - 1:m[-1] - 1:-1])          # cs[t] = ell_{n-1} + ... + ell_{n-1-t}
    w = np.exp(Lsmall[j] - cs[n - 1 - m])
    total = 2.0 * float(np.dot(c[j] * w, c[m]))
    neglected = float(w[-1]) * cmax * cmax * (count - 2 * J)
    return total, neglected


def _sinf_step(c, ell, Lsmall, cmax, n, J):
    # peeled form of the limiting recurrence, valid for n >= 6
    s1, e1 = _edge_sum(c, ell, Lsmall, cmax, n, n + 1, 4, n - 3, J)
    s2, e2 = _edge_sum(c, ell, Lsmall, cmax, n, n, 3, n - 3, J)
    r1 = math.exp(-ell[n - 1])               # Mhat_{n-1}/Mhat_n
    r2 = r1 * math.exp(-ell[n - 2])          # Mhat_{n-2}/Mhat_n
    val = (-8.0 * c[n - 1] * r1 + (n - 13.0 / 3.0) * c[n - 2] * r2
           - 1.5 * (n + 1) * s1 + (1.5 * n - 2.0) * s2) / 8.0
    return val, max(1.5 * (n + 1) * e1, (1.5 * n - 2) * e2) / 8.0


def _ratio_trace(c, ell):
    K = len(c) - 1
    n = np.arange(1, K + 1, dtype=np.float64)
    lam = (n - 1.0 / 3.0) / np.sqrt(8 * n + 4.0 / 3.0)
    r = np.empty(K)
    r[0] = c[1] + lam[0] * c[0] / 2.0        # n = 1: (a_1 + lam_1 a_0)/Mhat_1 with Mhat_1 = 2
    r[1:] = c[2:] + lam[1:] * c[1:-1] * np.exp(-ell[1:K])
    return r


def save_checkpoint(path, c, n, K, J):
    meta = {"format": "euler-implosion-sinf-v1", "n": int(n), "K": int(K), "J": int(J), "seed": _SEED}
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, c=c[: n + 1], meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))
    os.replace(tmp, path)


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        return z["c"].copy(), meta


def s_infinity_trace(K: int, J: int = 64, checkpoint=None, checkpoint_every: int = 10000):
    """Normalized limiting coefficients c_n = a_n^inf / Mhat_n^inf for n <= K.

    Returns (c, ell, neglected) where neglected bounds the dropped middle
    part of the convolutions.  Deterministic: resuming from a checkpoint
    reproduces an uninterrupted run bit for bit.
    """
    ell, Lsmall = _sinf_state(K, J)
    c = np.zeros(K + 1)
    start = _SEED + 1
    if checkpoint and os.path.exists(checkpoint):
        cc, meta = load_checkpoint(checkpoint)
        if meta.get("J") != J or meta.get("seed") != _SEED:
            raise ProfileError("OUT_OF_RANGE", f"checkpoint {checkpoint} was written with other settings")
        m = min(meta["n"], K)
        c[: m + 1] = cc[: m + 1]
        start = m + 1
    else:
        _sinf_seed(c, ell)
    neglected = 0.0
    cmax = float(np.max(np.abs(c[:start])))
    for n in range(start, K + 1):
        c[n], e = _sinf_step(c, ell, Lsmall, cmax, n, J)
        cmax = max(cmax, abs(c[n]))
        neglected = max(neglected, e)
        if checkpoint and (n % checkpoint_every == 0 or n == K):
            save_checkpoint(checkpoint, c, n, K, J)
    return c, ell, neglected


def s_infinity(K: int = 100_000, J: int = 64, checkpoint=None, fit_from: int = 100) -> SInfinityResult:
    """Limit of ahat_n^inf / Mhat_n^inf with an error bar.

    The per-step differences d_n are fitted to C n^{-3/2} on [fit_from, K];
    the tail sum_{m > K} C m^{-3/2} <= 2C/sqrt(K) plus the distance between the
    extrapolated value and the last ratio gives the error bar.
    """
    if K < 1000:
        raise ProfileError("OUT_OF_RANGE", "K >= 1000 required")
    c, ell, neglected = s_infinity_trace(K, J, checkpoint)
    r = _ratio_trace(c, ell)
    n = np.arange(1, K + 1, dtype=np.float64)
    d = np.abs(np.diff(r))                      # d[i] = |r_{i+2} - r_{i+1}|, index n = i + 2
    nd = n[1:]
    sel = nd >= fit_from
    env = d[sel] * nd[sel] ** 1.5
    C = float(env.max())
    half = nd[sel] >= (fit_from + K) / 2
    C_first = float(env[~half].max())
    envelope_ok = bool(env[half].max() <= 1.5 * C_first)
    # extrapolate r_n = S + b n^{-1/2} + c n^{-1} on the last half
    m = nd >= K / 2
    X = np.vstack([np.ones(m.sum()), nd[m] ** -0.5, nd[m] ** -1.0]).T
    coef = np.linalg.lstsq(X, r[1:][m], rcond=None)[0]
    est = float(coef[0])
    tail = 2.0 * C / math.sqrt(K)
    err = abs(est - float(r[-1])) + tail + K * neglected
    if not envelope_ok:
        raise ProfileError("NOT_CONVERGED", f"differences leave the C n^-3/2 envelope (C={C:.3g})")
    return SInfinityResult(est, err, r, K, C, float(r[-1]), tail, K * neglected, envelope_ok, est - err > 0.5)
