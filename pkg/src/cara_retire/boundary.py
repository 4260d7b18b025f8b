"""Retirement trigger in the dual variable.

The obstacle integrand is ``g(z) = D(z) + Y z`` with ``D`` the working/retired
utility gap. It is piecewise of three kinds, so every weighted integral of it
has a closed-form antiderivative:

* ``(0, a]``   ``(Y - k) z``
* ``(a, b]``   ``z ln z / gamma + (Y - (ln b + 1)/gamma) z + a/gamma``
* ``(b, inf)`` ``(a - b)/gamma + Y z``

with ``a = A(l_retire) < b = A(l_work)`` and ``k`` the no-retirement income.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import brentq

from cara_retire.duals import post_dual
from cara_retire.errors import DomainError, NoRetirementError
from cara_retire.market import (
    ROOT_RTOL,
    ROOT_XTOL,
    MarketParams,
    Preferences,
    derive_roots,
    gap_income_root,
    no_retirement_threshold,
    utility_gap,
)

REGIME_RTOL = 1e-12


class Regime(enum.Enum):
    NO_RETIREMENT = "NoRetirement"
    BELOW_A_BAR = "BelowABar"
    AT_A_BAR = "AtABar"
    MIDDLE = "Middle"
    AT_A_LOW = "AtALow"
    CONSTANT_BRANCH = "ConstantBranch"


@dataclass(frozen=True)
class FreeBoundary:
    y_bar: float
    regime: Regime
    y1_threshold: float
    y2_threshold: float
    gap_root_j: float | None
    coefficient_c: float | None


def _pieces(prefs: Preferences, income: float):
    """``(lo, hi, (coef_zlnz, coef_z, coef_1))`` for each piece of ``g``."""
    a, b, g = prefs.a_retire, prefs.a_work, prefs.gamma
    k = no_retirement_threshold(prefs)
    return (
        (0.0, a, (0.0, income - k, 0.0)),
        (a, b, (1.0 / g, income - (math.log(b) + 1.0) / g, a / g)),
        (b, math.inf, (0.0, income, (a - b) / g)),
    )


def _antiderivative(z: float, p: float, coefs) -> float:
    """Antiderivative of ``z^(-1-p) (u z ln z + v z + w)`` at ``z``.

    Valid for ``p`` not in {0, 1}; the limits at 0 (``p < 0``) and at infinity
    (``p > 1``) are exactly 0 and are returned as such.
    """
    u, v, w = coefs
    if z == 0.0 or math.isinf(z):
        return 0.0
    q = 1.0 - p
    zq = z**q
    out = v * zq / q - w * z ** (-p) / p
    if u:
        lz = math.log(z)
        out += u * zq * (lz / q - 1.0 / q**2)
    return out


def _weighted_integral(prefs: Preferences, income: float, p: float, lo: float, hi: float) -> float:
    """``int_lo^hi z^(-1-p) g(z) dz`` summed over the pieces of ``g``."""
    total = 0.0
    for plo, phi, coefs in _pieces(prefs, income):
        s, e = max(lo, plo), min(hi, phi)
        if s >= e:
            continue
        total += _antiderivative(e, p, coefs) - _antiderivative(s, p, coefs)
    return total


def r_integral(market: MarketParams, prefs: Preferences, lower: float, income: float | None = None) -> float:
    """``R(lower; Y) = int_lower^inf z^(-1-m_plus) (D(z) + Y z) dz``, analytically."""
    if not lower >= 0:
        raise DomainError(f"lower limit must be >= 0 (got {lower})")
    Y = prefs.income if income is None else income
    mp = derive_roots(market).m_plus
    if lower == 0.0:
        k = no_retirement_threshold(prefs)
        if Y < k:
            return -math.inf
        if Y == k:
            # linear piece vanishes identically near 0
            return _weighted_integral(prefs, Y, mp, prefs.a_retire, math.inf)
        return math.inf
    return _weighted_integral(prefs, Y, mp, lower, math.inf)


def _tail_cut(prefs: Preferences, income: float) -> float:
    z = 10.0 * prefs.a_work
    k = no_retirement_threshold(prefs)
    if income < k:
        z = max(z, 10.0 * gap_income_root(prefs.replace(income=income)))
    return z


def r_integral_quadrature(
    market: MarketParams, prefs: Preferences, lower: float, income: float | None = None, rtol: float = 1e-12
) -> float:
    """Adaptive-quadrature oracle for :func:`r_integral`.

    Numerical quadrature on ``[lower, Z]`` plus the single-piece tail beyond
    ``Z = max(10 A(l_work), 10 j)``.
    """
    if not lower >= 0:
        raise DomainError(f"lower limit must be >= 0 (got {lower})")
    Y = prefs.income if income is None else income
    mp = derive_roots(market).m_plus
    a, b, g = prefs.a_retire, prefs.a_work, prefs.gamma
    zcut = max(_tail_cut(prefs, Y), lower)
    tail = (a - b) / g * zcut ** (-mp) / mp + Y * zcut ** (1.0 - mp) / (mp - 1.0)
    if lower == 0.0:
        k = no_retirement_threshold(prefs)
        if Y > k:
            return math.inf
        if Y < k:
            return -math.inf
        lower = a  # integrand is identically 0 on (0, a] when Y == k

    def f(z: float) -> float:
        return z ** (-1.0 - mp) * (float(utility_gap(prefs, z)) + Y * z)

    pts = [p for p in (a, b) if lower < p < zcut]
    # convergence is judged below from the returned error bound
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(f, lower, zcut, points=pts or None, limit=500, epsabs=0.0, epsrel=rtol)
        scale, _ = quad(lambda z: abs(f(z)), lower, zcut, points=pts or None, limit=500, epsabs=0.0, epsrel=1e-6)
    if err > max(1e-9 * abs(val), 1e-11 * scale):
        raise ArithmeticError(
            f"adaptive quadrature did not converge: estimate {val!r}, error bound {err!r}"
        )
    return val + tail


def q_integral(market: MarketParams, prefs: Preferences, upper: float, income: float | None = None) -> float:
    """``int_0^upper z^(-1-m_minus) (D(z) + Y z) dz``."""
    Y = prefs.income if income is None else income
    mm = derive_roots(market).m_minus
    return _weighted_integral(prefs, Y, mm, 0.0, upper)


def income_thresholds(market: MarketParams, prefs: Preferences) -> tuple[float, float]:
    """Incomes ``(Y1, Y2)`` at which the trigger sits exactly at ``A(l_retire)``, ``A(l_work)``.

    ``R`` is increasing in ``Y``, negative as ``Y -> 0`` and positive at the
    no-retirement threshold, so each is a bracketed root in ``Y``.
    """
    k = no_retirement_threshold(prefs)
    out = []
    for at in (prefs.a_retire, prefs.a_work):
        f = lambda Y, at=at: r_integral(market, prefs, at, Y)  # noqa: E731
        if not (f(0.0) < 0.0 < f(k)):
            raise ArithmeticError(f"no sign change for income threshold at y={at}")
        out.append(brentq(f, 0.0, k, xtol=ROOT_XTOL, rtol=ROOT_RTOL))
    return out[0], out[1]


def _is_close(x: float, y: float) -> bool:
    return abs(x - y) <= REGIME_RTOL * abs(y)


def _y1_closed_form(market: MarketParams, prefs: Preferences) -> float:
    mp = derive_roots(market).m_plus
    a, b, g = prefs.a_retire, prefs.a_work, prefs.gamma
    k = no_retirement_threshold(prefs)
    bracket = (b ** (1.0 - mp) - a ** (1.0 - mp)) / (g * mp * (mp - 1.0) * (prefs.income - k))
    if not bracket > 0:
        raise ArithmeticError(f"y1 bracket must be positive before exponentiation (got {bracket})")
    return bracket ** (1.0 / (1.0 - mp))


def _y2_equation(market: MarketParams, prefs: Preferences, x: float) -> float:
    """Trigger equation in the variable ``x = A(l_work) / y2``."""
    mp = derive_roots(market).m_plus
    a, b, g, Y = prefs.a_retire, prefs.a_work, prefs.gamma, prefs.income
    lead = Y / (mp - 1.0) + (2.0 - mp) / (g * (mp - 1.0) ** 2) - math.log(x) / (g * (mp - 1.0))
    return lead * x ** (mp - 1.0) + a / (g * mp * b) * x**mp - 1.0 / (g * mp * (mp - 1.0) ** 2)


def w_coefficient(market: MarketParams, prefs: Preferences, y_bar: float) -> float:
    """Coefficient ``C`` of ``y^m_minus`` in the variation-of-parameters solution."""
    if not y_bar > 0:
        raise DomainError(f"y_bar must be > 0 (got {y_bar})")
    roots = derive_roots(market)
    spread = roots.m_plus - roots.m_minus
    return -2.0 / (roots.theta**2 * spread) * q_integral(market, prefs, y_bar)


def solve_boundary(market: MarketParams, prefs: Preferences) -> FreeBoundary:
    """Locate the retirement trigger from the income regime."""
    Y = prefs.income
    k = no_retirement_threshold(prefs)
    y1, y2 = income_thresholds(market, prefs)
    if Y >= k:
        return FreeBoundary(0.0, Regime.NO_RETIREMENT, y1, y2, None, None)
    a, b = prefs.a_retire, prefs.a_work
    mp = derive_roots(market).m_plus
    if _is_close(Y, y1):
        regime, y_bar = Regime.AT_A_BAR, a
    elif _is_close(Y, y2):
        regime, y_bar = Regime.AT_A_LOW, b
    elif Y > y1:
        regime, y_bar = Regime.BELOW_A_BAR, _y1_closed_form(market, prefs)
    elif Y > y2:
        regime = Regime.MIDDLE
        x = brentq(
            lambda x: _y2_equation(market, prefs, x), 1.0, b / a, xtol=ROOT_XTOL, rtol=ROOT_RTOL
        )
        y_bar = b / x
    else:
        regime = Regime.CONSTANT_BRANCH
        y_bar = (mp - 1.0) * (b - a) / (prefs.gamma * mp * Y)
    j = gap_income_root(prefs)
    check = r_integral(market, prefs, y_bar) * y_bar ** (mp - 1.0)
    if abs(check) > 1e-10 * max(1.0, y_bar):
        raise ArithmeticError(f"trigger {y_bar} fails its defining equation (scaled R = {check})")
    return FreeBoundary(y_bar, regime, y1, y2, j, w_coefficient(market, prefs, y_bar))


def w_value(market: MarketParams, prefs: Preferences, fb: FreeBoundary, y):
    """``w(y) = V(y) - V_post(y)``: the value of the option to keep working.

    Returns ``(w, w', w'')``. Zero on ``(0, y_bar]``.
    """
    yy = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(yy > 0)):
        raise DomainError("dual state y must be > 0")
    roots = derive_roots(market)
    mp, mm = roots.m_plus, roots.m_minus
    kk = 2.0 / (roots.theta**2 * (mp - mm))
    Y = prefs.income
    qbar = q_integral(market, prefs, fb.y_bar) if fb.y_bar > 0 else 0.0
    w = np.zeros_like(yy)
    w1 = np.zeros_like(yy)
    w2 = np.zeros_like(yy)
    gap = utility_gap(prefs, yy) + Y * yy
    for i, yi in enumerate(yy):
        if yi <= fb.y_bar:
            continue
        rr = r_integral(market, prefs, yi)
        # int_{y_bar}^{y}: the C term cancels the lower part of the Q integral
        dq = q_integral(market, prefs, yi) - qbar
        w[i] = kk * (yi**mp * rr + yi**mm * dq)
        w1[i] = kk * (mp * yi ** (mp - 1.0) * rr + mm * yi ** (mm - 1.0) * dq)
        w2[i] = kk * (
            mp * (mp - 1.0) * yi ** (mp - 2.0) * rr
            + mm * (mm - 1.0) * yi ** (mm - 2.0) * dq
            + (mm - mp) * gap[i] / yi**2
        )
    if np.ndim(y) == 0:
        return float(w[0]), float(w1[0]), float(w2[0])
    return w, w1, w2


def full_dual(market: MarketParams, prefs: Preferences, fb: FreeBoundary, y):
    """Dual of the full problem, ``w + V_post``, as ``(value, d1, d2)``."""
    w, w1, w2 = w_value(market, prefs, fb, y)
    v, d1, d2 = post_dual(market, prefs).evaluate(y)
    return w + v, w1 + d1, w2 + d2


@dataclass
class VariationalReport:
    ode_residual: float
    stopping_violation: float
    negativity: float
    smooth_fit: float
    passed: bool

    def failures(self) -> list[str]:
        out = []
        if self.ode_residual > 1e-8:
            out.append(f"ODE residual {self.ode_residual:.3e} on continuation region")
        if self.stopping_violation > 1e-12:
            out.append(f"D + Y y positive on stopping region ({self.stopping_violation:.3e})")
        if self.negativity > 1e-12:
            out.append(f"w negative on continuation region ({self.negativity:.3e})")
        if self.smooth_fit > 1e-7:
            out.append(f"smooth-fit violation {self.smooth_fit:.3e} at the trigger")
        return out


def smooth_fit_residuals(market: MarketParams, prefs: Preferences, fb: FreeBoundary):
    """``(w(y_bar+), w'(y_bar+), one-sided finite-difference w'(y_bar+))``.

    The difference is the second-order forward stencil; ``w''`` jumps at the
    trigger so a central stencil would straddle the kink.
    """
    require_retirement(fb)
    yb = fb.y_bar
    h = yb * 1e-5
    w0, w1, _ = w_value(market, prefs, fb, yb * (1.0 + 1e-15))
    wh = w_value(market, prefs, fb, yb + h)[0]
    w2h = w_value(market, prefs, fb, yb + 2.0 * h)[0]
    fd = (-3.0 * w0 + 4.0 * wh - w2h) / (2.0 * h)
    return w0, w1, fd


def standard_grid(prefs: Preferences, fb: FreeBoundary, n: int = 200) -> np.ndarray:
    lo = (fb.y_bar if fb.y_bar > 0 else prefs.a_retire) / 100.0
    hi = 100.0 * max(fb.y_bar, prefs.a_work)
    return np.geomspace(lo, hi, n)


def verify_variational(
    market: MarketParams, prefs: Preferences, fb: FreeBoundary, grid=None
) -> VariationalReport:
    """Check the obstacle problem on a grid; returns the worst violations.

    Continuation-region ODE residuals are relative to the size of the largest
    term in the equation; stopping-region and sign checks are absolute.
    """
    ys = standard_grid(prefs, fb) if grid is None else np.asarray(grid, dtype=float)
    th, beta, r = market.theta, market.beta, market.r
    Y = prefs.income
    w, w1, w2 = w_value(market, prefs, fb, ys)
    gap = utility_gap(prefs, ys) + Y * ys
    cont = ys > fb.y_bar
    terms = np.abs(np.vstack([0.5 * th**2 * ys**2 * w2, (beta - r) * ys * w1, beta * w, gap]))
    resid = 0.5 * th**2 * ys**2 * w2 + (beta - r) * ys * w1 - beta * w + gap
    rel = np.abs(resid) / np.maximum(terms.max(axis=0), 1e-300)
    ode = float(rel[cont].max(initial=0.0))
    stop = float(gap[~cont].max(initial=-math.inf))
    stop = max(stop, 0.0)
    neg = float(max(0.0, -w[cont].min(initial=0.0)))
    if fb.y_bar > 0:
        wb, w1b, fd = smooth_fit_residuals(market, prefs, fb)
        scale = max(1.0, abs(float(post_dual(market, prefs).evaluate(fb.y_bar)[1])))
        fit = max(abs(wb) / (scale * fb.y_bar), abs(w1b) / scale, abs(fd) / scale)
    else:
        fit = 0.0
    report = VariationalReport(ode, stop, neg, fit, passed=False)
    report.passed = not report.failures()
    return report


def require_retirement(fb: FreeBoundary) -> None:
    if fb.y_bar <= 0:
        raise NoRetirementError("agent never retires: income at or above the no-retirement threshold")
