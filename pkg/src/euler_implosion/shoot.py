"""Locating R_N in (N, N+1) by bisection on the matching gap u_L(tau*) - u_F(tau*).

u_L comes from the sonic series, u_F from the far-field start at P6 carried
to tau* by the extended precision Taylor integrator.  The gap is tiny
(about 1e-12 at N = 25 and shrinking by roughly seven orders of magnitude
per eight units of N), so both branches are computed with mpmath.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import mpmath as mp

from .errors import ProfileError
from .integrate import default_tol, u_F_mp, u_F_on_grid
from .params import ParamSet, params_from_R
from .series import INTEGER_GUARD, compute_sonic_series

PROBE_MARGIN = 1e-3
N_FLOOR = 3
DEFAULT_PREC = 320
DEFAULT_K = 240
MAX_K = 4000
MAX_PREC = 1280


@dataclass(frozen=True)
class GapValue:
    R: object
    gap: object
    err: object
    u_L: object
    u_F: object
    series_tail: float
    a_next: object
    prec: int
    K: int

    @property
    def sign(self):
        return 1 if self.gap > 0 else -1


@dataclass
class ShootResult:
    N: int
    lo: object
    hi: object
    tau_star: object
    status: str
    gap_history: list = field(default_factory=list)
    message: str = ""
    prec: int = DEFAULT_PREC
    K: int = DEFAULT_K

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def R_N(self):
        return (self.lo + self.hi) / 2

    @property
    def a_next_negative(self):
        return all(g.a_next < 0 for g in self.gap_history)


def default_prec(N):
    """Working bits for shooting at N.

    Observed |gap| at the probes is about 10^-(12 + 0.72 (N - 25)); near the root
    it shrinks by a further factor of the bracket width (1e-10), and the Taylor
    tolerance keeps 60% of the bits.
    """
    digits = 12 + 0.72 * max(N - 25, 0) + 13
    return max(192, 64 * math.ceil((digits * 3.33 / 0.6 + 32) / 64))


def default_tau_star(N, R_mid=None):
    """0.2/A at the midpoint R, which keeps tau* well inside the series disc and below alpha/2."""
    with mp.workprec(DEFAULT_PREC):
        R_mid = mp.mpf(N) + mp.mpf(1) / 2 if R_mid is None else mp.mpf(R_mid)
        return mp.mpf(1) / 5 / mp.sqrt(R_mid)


def matching_gap(p: ParamSet, tau_star, K: int = DEFAULT_K, prec: Optional[int] = None, tol=None,
                 check_noise=True) -> GapValue:
    """u_L(tau*; R) - u_F(tau*; R) with an error estimate (series tail + Taylor error)."""
    prec = prec or max(p.prec, DEFAULT_PREC)
    target = float(default_tol(prec))
    while True:
        # raise the order until the series tail at tau* is below the Taylor tolerance
        s = compute_sonic_series(p, K, precision_bits=prec, residual=False)
        tail = s.tail_estimate(tau_star)
        if tail <= target or K >= MAX_K:
            break
        K = min(MAX_K, K + K // 2)
    P = s.params
    with mp.workprec(s.precision_bits):
        tau = mp.mpf(tau_star)
        if not 0 < tau < P.alpha / 2:
            raise ProfileError("OUT_OF_RANGE", f"tau*={mp.nstr(tau, 8)} not in (0, alpha/2)")
        rounding = mp.fsum(e * abs(tau) ** n for n, e in enumerate(s.abs_err))
        uL = s.value(tau)
        uF = u_F_mp(P, tau, prec=s.precision_bits, tol=tol)
        gap = uL - uF.u
        err = mp.mpf(tail) + rounding + uF.err
        N = int(mp.floor(P.R))
        a_next = s.coeffs[N + 1] if N + 1 <= K else None
        out = GapValue(P.R, gap, err, uL, uF.u, tail, a_next, prec, K)
    if check_noise and not abs(gap) > err:
        raise ProfileError("GAP_BELOW_NOISE", f"|gap|={mp.nstr(abs(gap), 5)} <= err={mp.nstr(err, 5)}",
                           gap=gap, err=err)
    return out


def _gap_escalating(R, tau_star, K, prec, max_prec, stable=False):
    """Gap at R, raising precision and order on GAP_BELOW_NOISE; optionally checks sign stability."""
    while True:
        try:
            p = params_from_R(R, prec=prec)
            g = matching_gap(p, tau_star, K=K, prec=prec)
            if stable:
                g2 = matching_gap(params_from_R(R, prec=prec + 64), tau_star, K=K + K // 4, prec=prec + 64)
                if g2.sign != g.sign:
                    raise ProfileError("GAP_BELOW_NOISE", "sign changed under refinement")
            return g
        except ProfileError as e:
            if e.code != "GAP_BELOW_NOISE":
                raise
            prec, K = 2 * prec, K + K // 2
            if prec > max_prec:
                raise ProfileError("PRECISION_LIMIT", f"gap unresolved at R={mp.nstr(R, 20)} up to {max_prec} bits")


def find_R_N(N: int, tol=1e-10, margin=PROBE_MARGIN, tau_star=None, K: int = DEFAULT_K,
             prec: Optional[int] = None, max_prec: int = MAX_PREC, max_iter: int = 200,
             n_floor: int = N_FLOOR, progress: Optional[Callable] = None) -> ShootResult:
    """Bisection for R_N in (N, N+1) from probes at N + margin and N + 1 - margin."""
    if N % 2 != 1 or N < n_floor:
        raise ProfileError("OUT_OF_RANGE", f"N={N} must be odd and >= {n_floor}")
    if not tol > 0:
        raise ProfileError("OUT_OF_RANGE", "tol must be positive")
    prec = prec or default_prec(N)
    if margin < INTEGER_GUARD:
        raise ProfileError("OUT_OF_RANGE", f"margin below the integer guard {INTEGER_GUARD}")
    with mp.workprec(prec):
        tau_star = default_tau_star(N) if tau_star is None else mp.mpf(tau_star)
        lo = mp.mpf(N) + mp.mpf(margin)
        hi = mp.mpf(N + 1) - mp.mpf(margin)
    res = ShootResult(N, lo, hi, tau_star, "RUNNING", prec=prec, K=K)
    try:
        g_lo = _gap_escalating(lo, tau_star, K, prec, max_prec, stable=True)
        g_hi = _gap_escalating(hi, tau_star, K, prec, max_prec, stable=True)
    except ProfileError as e:
        if e.code == "PRECISION_LIMIT":
            res.status, res.message = "PRECISION_LIMIT", e.message
            return res
        raise
    res.gap_history += [g_lo, g_hi]
    if progress:
        progress(res)
    if not (g_lo.gap > 0 and g_hi.gap < 0):
        res.status = "NO_BRACKET"
        res.message = f"probe gaps {mp.nstr(g_lo.gap, 6)} at N+{margin}, {mp.nstr(g_hi.gap, 6)} at N+1-{margin}"
        return res
    cur_prec, cur_K = max(g_lo.prec, g_hi.prec), max(g_lo.K, g_hi.K)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        with mp.workprec(cur_prec):
            mid = (lo + hi) / 2
        try:
            g = _gap_escalating(mid, tau_star, cur_K, cur_prec, max_prec)
        except ProfileError as e:
            if e.code == "PRECISION_LIMIT":
                res.lo, res.hi = lo, hi
                res.status, res.message = "PRECISION_LIMIT", e.message
                return res
            raise
        cur_prec, cur_K = g.prec, g.K
        res.gap_history.append(g)
        if g.gap > 0:
            lo = mid
        else:
            hi = mid
        res.lo, res.hi = lo, hi
        if progress:
            progress(res)
    res.lo, res.hi, res.prec, res.K = lo, hi, cur_prec, cur_K
    res.status = "CONVERGED" if hi - lo <= tol else "PRECISION_LIMIT"
    return res


def scan(Ns=range(25, 62, 2), **kw):
    return [find_R_N(N, **kw) for N in Ns]


def prescan(N: int, n: int = 8, tau_star=None, K: int = DEFAULT_K, prec: int = DEFAULT_PREC):
    """Gap signs on n + 1 evenly spaced interior points of (N, N+1); lists every sign change."""
    tau_star = default_tau_star(N) if tau_star is None else tau_star
    with mp.workprec(prec):
        Rs = [mp.mpf(N) + mp.mpf(PROBE_MARGIN) + (1 - 2 * mp.mpf(PROBE_MARGIN)) * k / n for k in range(n + 1)]
    gaps = [matching_gap(params_from_R(R, prec=prec), tau_star, K=K, prec=prec, check_noise=False) for R in Rs]
    changes = [(gaps[k].R, gaps[k + 1].R) for k in range(n) if gaps[k].sign != gaps[k + 1].sign]
    return gaps, changes


def post_hoc_agreement(res: ShootResult, n_grid: int = 8):
    """At R = R_N compare u_L and u_F on a tau-grid in (0, tau*]; returns the worst |u_L - u_F| and the error budget."""
    p = params_from_R(res.R_N, prec=res.prec)
    s = compute_sonic_series(p, res.K, precision_bits=res.prec, residual=False)
    with mp.workprec(s.precision_bits):
        taus = [res.tau_star * k / n_grid for k in range(n_grid, n_grid // 4 - 1, -1)]
        pts = u_F_on_grid(s.params, taus, prec=s.precision_bits)
        worst, budget = mp.mpf(0), mp.mpf(0)
        for tau, uF, err in pts:
            worst = max(worst, abs(s.value(tau) - uF))
            budget = max(budget, err + mp.mpf(s.tail_estimate(tau)))
        return worst, budget, [(t, s.value(t) - u) for t, u, _ in pts]
