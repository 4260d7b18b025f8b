"""Closed-form dual value functions.

All three duals share the homogeneous exponents ``m_plus``/``m_minus`` and the
particular solution ``K0 y - y (ln(A/y) + 1) / (gamma r)`` below the kink
``y = A``. Branches are evaluated in the ratio form ``(A/y)^(1-m)`` so that tiny
or huge ``y`` never multiplies a huge coefficient by a tiny power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cara_retire.errors import DomainError
from cara_retire.market import (
    MarketParams,
    Preferences,
    RiskRoots,
    derive_roots,
    dual_utility,
)


def _positive(y) -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("dual state y must be > 0")
    return arr


def _pack(v, d1, d2, like):
    if np.ndim(like) == 0:
        return float(v), float(d1), float(d2)
    return v, d1, d2


@dataclass(frozen=True)
class StationaryDual:
    """Infinite-horizon dual with a fixed leisure factor and perpetual annuity.

    ``annuity`` is 0 for the retired agent and ``Y/r`` for the never-retiring
    (Merton) benchmark; it enters as the linear term ``annuity * y``.
    """

    leisure_factor_A: float
    annuity: float
    roots: RiskRoots
    gamma: float
    r: float
    beta: float
    theta: float

    @property
    def k_plus(self) -> float:
        mp, mm = self.roots.m_plus, self.roots.m_minus
        return (mm - 1.0) / (self.gamma * self.r * mp * (mp - 1.0) * (mp - mm))

    @property
    def k_minus(self) -> float:
        mp, mm = self.roots.m_plus, self.roots.m_minus
        return (mp - 1.0) / (self.gamma * self.r * mm * (mm - 1.0) * (mp - mm))

    @property
    def k_zero(self) -> float:
        return (self.beta - self.r + 0.5 * self.theta**2) / (self.gamma * self.r**2)

    def homogeneous_part(self, y):
        """``(value, d1, d2)`` of the particular-plus-matched solution minus the annuity."""
        yy = _positive(y)
        A, g, r = self.leisure_factor_A, self.gamma, self.r
        mp, mm = self.roots.m_plus, self.roots.m_minus
        x = A / yy
        low = yy <= A
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            lx = np.log(x)
            pp = x ** (1.0 - mp)
            pm = x ** (1.0 - mm)
            v_lo = self.k_plus * yy * pp + self.k_zero * yy - yy * (lx + 1.0) / (g * r)
            d1_lo = self.k_plus * mp * pp + self.k_zero - lx / (g * r)
            yd2_lo = self.k_plus * mp * (mp - 1.0) * pp + 1.0 / (g * r)
            v_hi = self.k_minus * yy * pm - A / (g * self.beta)
            d1_hi = self.k_minus * mm * pm
            yd2_hi = self.k_minus * mm * (mm - 1.0) * pm
        v = np.where(low, v_lo, v_hi)
        d1 = np.where(low, d1_lo, d1_hi)
        d2 = np.where(low, yd2_lo, yd2_hi) / yy
        return v, d1, d2

    def evaluate(self, y):
        v, d1, d2 = self.homogeneous_part(y)
        yy = np.asarray(y, dtype=float)
        return _pack(v + self.annuity * yy, d1 + self.annuity, d2, y)


def post_dual(market: MarketParams, prefs: Preferences) -> StationaryDual:
    return StationaryDual(
        leisure_factor_A=prefs.a_retire,
        annuity=0.0,
        roots=derive_roots(market),
        gamma=prefs.gamma,
        r=market.r,
        beta=market.beta,
        theta=market.theta,
    )


def merton_dual(market: MarketParams, prefs: Preferences) -> StationaryDual:
    return StationaryDual(
        leisure_factor_A=prefs.a_work,
        annuity=prefs.income / market.r,
        roots=derive_roots(market),
        gamma=prefs.gamma,
        r=market.r,
        beta=market.beta,
        theta=market.theta,
    )


def stationary_value(sd: StationaryDual, y):
    """``(V, V', V'')`` of a stationary dual at ``y``."""
    return sd.evaluate(y)


@dataclass(frozen=True)
class PreDual:
    """Working-phase dual stopped at the first passage below ``y_bar``.

    On ``(y_bar, inf)`` it equals the Merton dual plus ``c2 * y^m_minus``; below
    ``y_bar`` it is the annuity line ``(Y/r) y``.
    """

    c1: float
    c2: float
    c3: float
    y_bar: float
    leisure_factor_A: float
    annuity: float
    roots: RiskRoots
    gamma: float
    r: float
    beta: float
    theta: float
    # value of the Merton dual minus annuity at y_bar, i.e. -c2 * y_bar^m_minus
    gap_at_boundary: float = 0.0

    @property
    def merton(self) -> StationaryDual:
        return StationaryDual(
            self.leisure_factor_A,
            self.annuity,
            self.roots,
            self.gamma,
            self.r,
            self.beta,
            self.theta,
        )

    def evaluate(self, y):
        yy = _positive(y)
        mm = self.roots.m_minus
        v, d1, d2 = self.merton.homogeneous_part(yy)
        if self.y_bar > 0:
            q = -self.gap_at_boundary
            with np.errstate(over="ignore", invalid="ignore"):
                s = (yy / self.y_bar) ** mm
            v = v + q * s
            d1 = d1 + q * mm * s / yy
            d2 = d2 + q * mm * (mm - 1.0) * s / yy**2
            stopped = yy <= self.y_bar
            v = np.where(stopped, 0.0, v)
            d1 = np.where(stopped, 0.0, d1)
            d2 = np.where(stopped, 0.0, d2)
        return _pack(v + self.annuity * yy, d1 + self.annuity, d2, y)


def pre_coefficients(market: MarketParams, prefs: Preferences, y_bar: float):
    """``(c1, c2, c3)`` of the working-phase dual for a boundary ``y_bar``.

    For ``0 < y_bar < A(l_work)`` these are the printed expressions. For
    ``y_bar >= A(l_work)`` only the upper branch exists; ``c2`` is then fixed by
    value matching at ``y_bar`` against the same Merton-plus-power form, and
    ``c1`` is reported for completeness although its branch is empty.
    """
    if not y_bar > 0:
        raise DomainError(
            f"y_bar must be > 0 for a retirement regime (got {y_bar}); "
            "the never-retire regime has no stopped dual"
        )
    roots = derive_roots(market)
    mp, mm = roots.m_plus, roots.m_minus
    g, r, beta, th = prefs.gamma, market.r, market.beta, market.theta
    A = prefs.a_work
    c1 = (mm - 1.0) / (g * r * mp * (mp - 1.0) * (mp - mm) * A ** (mp - 1.0))
    c3_minus_c2 = (mp - 1.0) / (g * r * mm * (mm - 1.0) * (mp - mm) * A ** (mm - 1.0))
    if y_bar < A:
        c2 = (
            r * np.log(A / y_bar) - (beta - 2.0 * r + 0.5 * th**2)
        ) / (g * r**2 * y_bar ** (mm - 1.0)) - c1 * y_bar ** (mp - mm)
    else:
        gap, _, _ = merton_dual(market, prefs).homogeneous_part(y_bar)
        c2 = -float(gap) * y_bar ** (-mm)
    return float(c1), float(c2), float(c2 + c3_minus_c2)


def pre_dual(market: MarketParams, prefs: Preferences, y_bar: float) -> PreDual:
    roots = derive_roots(market)
    common = dict(
        leisure_factor_A=prefs.a_work,
        annuity=prefs.income / market.r,
        roots=roots,
        gamma=prefs.gamma,
        r=market.r,
        beta=market.beta,
        theta=market.theta,
    )
    if y_bar <= 0:
        # never retires: the stopped dual coincides with the Merton benchmark
        md = merton_dual(market, prefs)
        c1 = md.k_plus / md.leisure_factor_A ** (roots.m_plus - 1.0)
        c3 = md.k_minus / md.leisure_factor_A ** (roots.m_minus - 1.0)
        return PreDual(c1=c1, c2=0.0, c3=c3, y_bar=0.0, **common)
    c1, c2, c3 = pre_coefficients(market, prefs, y_bar)
    gap, _, _ = merton_dual(market, prefs).homogeneous_part(y_bar)
    return PreDual(c1=c1, c2=c2, c3=c3, y_bar=y_bar, gap_at_boundary=float(gap), **common)


def pre_value(pd: PreDual, y):
    """``(V, V', V'')`` of the working-phase dual; the stopped set includes ``y_bar``."""
    return pd.evaluate(y)


def ode_residual(dual, y, utility, market: MarketParams) -> np.ndarray:
    """``theta^2 y^2 v''/2 + (beta - r) y v' - beta v + U(y)`` for ``v = V - annuity*y``."""
    v, d1, d2 = dual.evaluate(y)
    yy = np.asarray(y, dtype=float)
    vv = v - dual.annuity * yy
    dd = d1 - dual.annuity
    th = market.theta
    return 0.5 * th**2 * yy**2 * d2 + (market.beta - market.r) * yy * dd - market.beta * vv + utility


def post_residual(market: MarketParams, prefs: Preferences, y):
    return ode_residual(post_dual(market, prefs), y, dual_utility(prefs, y, prefs.l_retire), market)


def merton_residual(market: MarketParams, prefs: Preferences, y):
    return ode_residual(merton_dual(market, prefs), y, dual_utility(prefs, y, prefs.l_work), market)
