"""Independent exact-rational oracle for the sonic series.

Instead of the coefficient recurrence, this substitutes a truncated power
series into L[u] = Delta_tau u' - Delta_u with Fraction arithmetic and
solves for each new coefficient from the lowest order it enters.
"""

from fractions import Fraction


def _mul(p, q, deg):
    out = [Fraction(0)] * (deg + 1)
    for i, x in enumerate(p[: deg + 1]):
        if x:
            for j, y in enumerate(q[: deg + 1 - i]):
                out[i + j] += x * y
    return out


def _add(*ps):
    n = max(len(p) for p in ps)
    return [sum((p[i] if i < len(p) else Fraction(0)) for p in ps) for i in range(n)]


def _scale(p, c):
    return [c * x for x in p]


def L_coeffs(alpha, u, deg):
    """Coefficients of L[u] up to tau^deg for a polynomial u (list of Fractions)."""
    u = list(u) + [Fraction(0)] * max(0, deg + 1 - len(u))
    du = [n * u[n] for n in range(1, len(u))] + [Fraction(0)]
    tau = [Fraction(0), Fraction(1)]
    uu = _mul(u, u, deg)
    tu = _mul(tau, u, deg)
    ttu = _mul(tau, tu, deg)
    d_tau = _add(_scale(u, 3 * alpha), _scale(tu, -3),
                 [-3 * alpha, -(4 * alpha - 1), -(alpha - 2), Fraction(1)])
    d_u = _add(_scale(uu, -2), _scale(u, 2), _scale(tu, -Fraction(4, 3) * (alpha - 4)), _scale(ttu, Fraction(10, 3)))
    return _add(_mul(d_tau, du, deg), _scale(d_u, -1))[: deg + 1]


def sonic_series_exact(lam: Fraction, K: int):
    """a_0..a_K at alpha = lam^2 (lam rational so that a_1 is rational)."""
    alpha = lam * lam
    a = [Fraction(1), (2 * lam + 4) / (3 * lam)]
    assert L_coeffs(alpha, a, 1) == [0, 0]
    for n in range(2, K + 1):
        c0 = L_coeffs(alpha, a + [Fraction(0)], n)
        c1 = L_coeffs(alpha, a + [Fraction(1)], n)
        assert all(x == 0 for x in c0[:n]), "lower orders must already vanish"
        slope = c1[n] - c0[n]
        if slope == 0:
            raise ZeroDivisionError(f"resonant order {n}")
        a.append(-c0[n] / slope)
    return a
