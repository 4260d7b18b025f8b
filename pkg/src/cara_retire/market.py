"""Market and preference constants, CARA dual utilities and the utility gap.

Everything here is a pure function of frozen dataclasses. Functions that take
a dual state ``y`` accept scalars or numpy arrays and return the same shape.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from cara_retire.errors import DomainError, NoRetirementError, ParameterError

ROOT_XTOL = 1e-300
ROOT_RTOL = 1e-12


@dataclass(frozen=True)
class MarketParams:
    """Bond/stock market with subjective discounting.

    Parameters
    ----------
    r : risk-free rate per year
    mu : stock drift per year
    sigma : stock volatility per sqrt(year)
    beta : subjective discount rate per year
    """

    r: float
    mu: float
    sigma: float
    beta: float

    def __post_init__(self) -> None:
        problems = []
        for name in ("r", "mu", "sigma", "beta"):
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} must be finite")
        if not self.r > 0:
            problems.append(f"r must be > 0 (got {self.r})")
        if not self.sigma > 0:
            problems.append(f"sigma must be > 0 (got {self.sigma})")
        if not self.beta > 0:
            problems.append(f"beta must be > 0 (got {self.beta})")
        if not self.mu > self.r:
            problems.append(f"mu must exceed r (got mu={self.mu}, r={self.r})")
        if problems:
            raise ParameterError("; ".join(problems))

    @property
    def theta(self) -> float:
        """Sharpe ratio (mu - r) / sigma."""
        return (self.mu - self.r) / self.sigma


@dataclass(frozen=True)
class RiskRoots:
    theta: float
    m_plus: float
    m_minus: float


@dataclass(frozen=True)
class Preferences:
    """CARA consumption-leisure preferences with a constant labor income.

    ``gamma_star`` is the absolute risk aversion on the composite good; the
    effective consumption risk aversion is ``gamma = alpha * gamma_star``.
    """

    gamma_star: float
    alpha: float
    l_work: float
    l_retire: float
    income: float
    gamma: float = field(init=False)

    def __post_init__(self) -> None:
        problems = []
        for name in ("gamma_star", "alpha", "l_work", "l_retire", "income"):
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} must be finite")
        if not self.gamma_star > 0:
            problems.append(f"gamma_star must be > 0 (got {self.gamma_star})")
        if not 0 < self.alpha < 1:
            problems.append(f"alpha must lie in (0, 1) (got {self.alpha})")
        if not self.l_work > 0:
            problems.append(f"l_work must be > 0 (got {self.l_work})")
        if not self.l_retire > self.l_work:
            problems.append(
                f"l_retire must exceed l_work (got l_work={self.l_work}, "
                f"l_retire={self.l_retire})"
            )
        if not self.income > 0:
            problems.append(f"income must be > 0 (got {self.income})")
        if problems:
            raise ParameterError("; ".join(problems))
        object.__setattr__(self, "gamma", self.alpha * self.gamma_star)
        if leisure_factor(self, self.l_retire) == 0.0:
            warnings.warn(
                "leisure factor underflows to 0 for l_retire; "
                "retired-phase formulas degenerate",
                RuntimeWarning,
                stacklevel=2,
            )

    @classmethod
    def from_gamma(
        cls, gamma: float, alpha: float, l_work: float, l_retire: float, income: float
    ) -> Preferences:
        """Build preferences from the consumption risk aversion ``gamma``."""
        if not 0 < alpha < 1:
            raise ParameterError(f"alpha must lie in (0, 1) (got {alpha})")
        return cls(gamma / alpha, alpha, l_work, l_retire, income)

    def replace(self, **changes: float) -> Preferences:
        """Copy with some fields changed; ``gamma`` is held fixed unless given."""
        base = {
            "gamma": self.gamma,
            "alpha": self.alpha,
            "l_work": self.l_work,
            "l_retire": self.l_retire,
            "income": self.income,
        }
        base.update(changes)
        return Preferences.from_gamma(**base)

    @property
    def a_work(self) -> float:
        return leisure_factor(self, self.l_work)

    @property
    def a_retire(self) -> float:
        return leisure_factor(self, self.l_retire)


def derive_roots(params: MarketParams) -> RiskRoots:
    """Roots of ``theta^2 m^2 + (2(beta - r) - theta^2) m - 2 beta = 0``.

    The larger-magnitude root comes from the quadratic formula on the branch
    without cancellation; the other one from the product ``-2 beta / theta^2``.
    """
    th2 = params.theta**2
    b = 2.0 * (params.beta - params.r) - th2
    disc = math.sqrt(b * b + 8.0 * params.beta * th2)
    if b <= 0:
        big = (-b + disc) / (2.0 * th2)
        m_plus, m_minus = big, -2.0 * params.beta / (th2 * big)
    else:
        big = (-b - disc) / (2.0 * th2)
        m_minus, m_plus = big, -2.0 * params.beta / (th2 * big)
    return RiskRoots(theta=params.theta, m_plus=m_plus, m_minus=m_minus)


def characteristic(params: MarketParams, m):
    th2 = params.theta**2
    return th2 * m * m + (2.0 * (params.beta - params.r) - th2) * m - 2.0 * params.beta


def leisure_factor(prefs: Preferences, l: float) -> float:
    """``A(l) = exp(-gamma_star (1 - alpha) l)``."""
    if l < 0:
        raise DomainError(f"leisure must be >= 0 (got {l})")
    return math.exp(-prefs.gamma_star * (1.0 - prefs.alpha) * l)


def _check_positive(y) -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("dual state y must be > 0")
    return arr


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def dual_utility(prefs: Preferences, y, l: float):
    """``sup_{c >= 0} (-exp(-gamma c) A(l) / gamma - c y)``."""
    yy = _check_positive(y)
    a = leisure_factor(prefs, l)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = -(yy * np.log(a / yy) + yy) / prefs.gamma
    return _out(np.where(yy <= a, inner, -a / prefs.gamma), y)


def dual_consumption(prefs: Preferences, y, l: float):
    """Maximiser of :func:`dual_utility`: ``(ln(A(l)/y))^+ / gamma``."""
    yy = _check_positive(y)
    a = leisure_factor(prefs, l)
    with np.errstate(divide="ignore"):
        c = np.maximum(np.log(a / yy), 0.0) / prefs.gamma
    return _out(c, y)


def no_retirement_threshold(prefs: Preferences) -> float:
    """Income at or above which retiring is never optimal."""
    return (1.0 - prefs.alpha) / prefs.alpha * (prefs.l_retire - prefs.l_work)


def utility_gap(prefs: Preferences, y):
    """Working minus retired dual utility, ``D(y)``.

    Linear below ``A(l_retire)``, ``y ln y`` type in between, constant above
    ``A(l_work)``. Negative, convex and C^1.
    """
    yy = _check_positive(y)
    a, b, g = prefs.a_retire, prefs.a_work, prefs.gamma
    k = no_retirement_threshold(prefs)
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = yy * np.log(yy / b) / g + (a - yy) / g
    out = np.where(yy <= a, -k * yy, np.where(yy <= b, mid, (a - b) / g))
    return _out(out, y)


def gap_income_root(prefs: Preferences) -> float:
    """Unique ``j > A(l_retire)`` with ``D(j) + Y j = 0``."""
    k = no_retirement_threshold(prefs)
    Y = prefs.income
    if Y >= k:
        raise NoRetirementError(
            f"no sign change (agent never retires): income {Y} >= threshold {k}"
        )
    a, b = prefs.a_retire, prefs.a_work
    if utility_gap(prefs, b) + Y * b < 0:
        return (b - a) / (prefs.gamma * Y)
    return brentq(
        lambda y: utility_gap(prefs, y) + Y * y, a, b, xtol=ROOT_XTOL, rtol=ROOT_RTOL
    )
