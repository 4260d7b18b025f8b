"""Primal policies recovered from the duals.

Wealth is identified with minus the marginal dual, ``x = -V'(y)``; consumption
and portfolio are then read off at the dual state ``y = I(x)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from cara_retire.boundary import FreeBoundary, Regime, solve_boundary
from cara_retire.duals import PreDual, StationaryDual, merton_dual, post_dual, pre_dual
from cara_retire.errors import DomainError, NoRetirementError
from cara_retire.market import MarketParams, Preferences

MAX_DOUBLINGS = 60


class Phase(enum.Enum):
    PRE = "Pre"
    POST = "Post"
    MERTON = "Merton"


@dataclass(frozen=True)
class PolicyPoint:
    x: float
    y: float
    c: float
    pi: float
    phase: Phase


@dataclass(frozen=True)
class RetirementSolution:
    market: MarketParams
    prefs: Preferences
    boundary: FreeBoundary
    x_bar: float
    pre: PreDual
    post: StationaryDual
    merton: StationaryDual

    def dual(self, phase: Phase):
        return {Phase.PRE: self.pre, Phase.POST: self.post, Phase.MERTON: self.merton}[phase]

    @property
    def retires(self) -> bool:
        return self.boundary.y_bar > 0


def solve(market: MarketParams, prefs: Preferences) -> RetirementSolution:
    fb = solve_boundary(market, prefs)
    pre = pre_dual(market, prefs, fb.y_bar)
    x_bar = -pre.evaluate(fb.y_bar * (1.0 + 1e-15))[1] if fb.y_bar > 0 else math.inf
    return RetirementSolution(
        market=market,
        prefs=prefs,
        boundary=fb,
        x_bar=x_bar,
        pre=pre,
        post=post_dual(market, prefs),
        merton=merton_dual(market, prefs),
    )


def retirement_wealth(sol: RetirementSolution) -> float:
    """Upper end of the working-phase wealth domain, ``-V_pre'(y_bar+)``."""
    if not sol.retires:
        raise NoRetirementError("agent never retires: no retirement wealth")
    return sol.x_bar


def _domain(sol: RetirementSolution, phase: Phase) -> tuple[float, float, bool]:
    """``(lo, hi, hi_closed)``; the lower end is always open."""
    if phase is Phase.POST:
        return 0.0, math.inf, False
    floor = -sol.prefs.income / sol.market.r
    if phase is Phase.MERTON or not sol.retires:
        return floor, math.inf, False
    return floor, sol.x_bar, True


def in_domain(sol: RetirementSolution, x: float, phase: Phase) -> bool:
    lo, hi, closed = _domain(sol, phase)
    return lo < x and (x <= hi if closed else x < hi)


def invert_marginal(sol: RetirementSolution, x: float, phase: Phase) -> float:
    """Unique ``y`` with ``-V'(y) = x`` for the phase's dual."""
    lo, hi, closed = _domain(sol, phase)
    if not in_domain(sol, x, phase):
        right = "]" if closed else ")"
        raise DomainError(f"wealth {x} outside the {phase.value} domain ({lo}, {hi}{right}")
    dual = sol.dual(phase)
    A = dual.leisure_factor_A

    def f(logy: float) -> float:
        return -dual.evaluate(math.exp(logy))[1] - x

    if phase is Phase.PRE and sol.retires:
        ybar = sol.boundary.y_bar
        if x >= sol.x_bar:
            return ybar
        left = math.log(ybar)
        while math.exp(left) <= ybar:
            left = math.nextafter(left, math.inf)
        return _bracketed_root(f, left, A, x)
    return invert_marginal_dual(dual, x)


def invert_marginal_dual(dual: StationaryDual, x: float) -> float:
    """``y`` with ``-V'(y) = x`` for a stationary dual; needs ``x > -annuity``."""
    if not x > -dual.annuity:
        raise DomainError(f"wealth {x} must exceed {-dual.annuity}")
    A = dual.leisure_factor_A

    def f(logy: float) -> float:
        return -dual.evaluate(math.exp(logy))[1] - x

    left = math.log(A * 1e-6)
    for _ in range(MAX_DOUBLINGS):
        if f(left) > 0:
            break
        left -= math.log(2.0) * 8
    else:
        raise ArithmeticError(f"no lower bracket for wealth {x}")
    return _bracketed_root(f, left, A, x)


def _bracketed_root(f, left: float, A: float, x: float) -> float:
    right = max(math.log(A * 1e6), left + 1.0)
    for _ in range(MAX_DOUBLINGS):
        if f(right) < 0:
            break
        right += math.log(2.0) * 8
    else:
        raise ArithmeticError(f"no upper bracket for wealth {x}")
    logy = brentq(f, left, right, xtol=1e-15, rtol=1e-15, maxiter=500)
    return math.exp(logy)


def policy_at(sol: RetirementSolution, x: float, phase: Phase) -> PolicyPoint:
    """Optimal consumption and stock position at wealth ``x`` in a phase."""
    y = invert_marginal(sol, x, phase)
    dual = sol.dual(phase)
    A = dual.leisure_factor_A
    m = sol.market
    c = max(math.log(A / y), 0.0) / sol.prefs.gamma
    mm = dual.roots.m_minus
    if y >= A:
        # linear region: y V'' = (1 - m_minus)(x + annuity) exactly
        pi = m.theta / m.sigma * (1.0 - mm) * (x + dual.annuity)
    else:
        ye = y
        if phase is Phase.PRE and sol.retires and y <= sol.boundary.y_bar:
            ye = sol.boundary.y_bar * (1.0 + 1e-15)
        pi = m.theta * ye * dual.evaluate(ye)[2] / m.sigma
    return PolicyPoint(x=x, y=y, c=c, pi=pi, phase=phase)


def primal_value(sol: RetirementSolution, x: float, phase: Phase) -> float:
    """``V(x) = inf_y (V~(y) + x y)`` evaluated at the first-order point."""
    y = invert_marginal(sol, x, phase)
    dual = sol.dual(phase)
    return float(dual.evaluate(y)[0] + y * x)


@dataclass
class Comparison:
    x: float
    c_pre: float
    c_merton: float
    c_post: float
    pi_pre: float
    pi_merton: float
    pi_post: float
    low_wealth: bool
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def merton_split_wealth(sol: RetirementSolution) -> float:
    """``-V_Mer'(A(l_work))``: below it Merton and working portfolios coincide."""
    return -sol.merton.evaluate(sol.prefs.a_work)[1]


def compare_at(sol: RetirementSolution, x: float, slack: float = 1e-12) -> Comparison:
    """Consumption and portfolio of all three phases at the same wealth."""
    for ph in Phase:
        if not in_domain(sol, x, ph):
            raise DomainError(f"wealth {x} is not in every phase's domain")
    pre, mer, post = (policy_at(sol, x, ph) for ph in (Phase.PRE, Phase.MERTON, Phase.POST))
    low = x <= merton_split_wealth(sol)
    out = Comparison(x, pre.c, mer.c, post.c, pre.pi, mer.pi, post.pi, low)
    tol = lambda v: slack * max(1.0, abs(v))  # noqa: E731
    if post.c > mer.c + tol(mer.c):
        out.violations.append(f"c_post {post.c} > c_Mer {mer.c}")
    if pre.c > mer.c + tol(mer.c):
        out.violations.append(f"c_pre {pre.c} > c_Mer {mer.c}")
    if not post.pi < mer.pi + tol(mer.pi):
        out.violations.append(f"pi_post {post.pi} !< pi_Mer {mer.pi}")
    if low:
        if abs(mer.pi - pre.pi) > tol(mer.pi):
            out.violations.append(f"pi_Mer {mer.pi} != pi_pre {pre.pi} at low wealth")
    elif not mer.pi < pre.pi + tol(pre.pi):
        out.violations.append(f"pi_Mer {mer.pi} !< pi_pre {pre.pi}")
    return out


SWEEP_PARAMS = ("Y", "l_work", "l_retire")
_PREF_FIELD = {"Y": "income", "l_work": "l_work", "l_retire": "l_retire"}


@dataclass(frozen=True)
class SweepRow:
    param_value: float
    y_bar: float
    x_bar: float
    c_pre: float | None
    pi_pre: float | None
    c_post: float
    pi_post: float
    y_pre: float | None
    in_pre_domain: bool


def sweep_row(market: MarketParams, prefs: Preferences, value: float, x: float) -> SweepRow:
    sol = solve(market, prefs)
    post = policy_at(sol, x, Phase.POST)
    if in_domain(sol, x, Phase.PRE):
        pre = policy_at(sol, x, Phase.PRE)
        c_pre, pi_pre, y_pre, inside = pre.c, pre.pi, pre.y, True
    else:
        c_pre = pi_pre = y_pre = None
        inside = False
    return SweepRow(value, sol.boundary.y_bar, sol.x_bar, c_pre, pi_pre, post.c, post.pi, y_pre, inside)


def statics_sweep(
    market: MarketParams, prefs: Preferences, parameter: str, grid, x: float
) -> list[SweepRow]:
    """Trigger, retirement wealth and policies at fixed wealth along a parameter grid.

    Grid points whose configuration is invalid raise up front; points where
    ``x`` is outside the working domain are kept with ``in_pre_domain=False``.
    """
    if parameter not in SWEEP_PARAMS:
        raise ValueError(f"parameter must be one of {SWEEP_PARAMS} (got {parameter!r})")
    configs = [prefs.replace(**{_PREF_FIELD[parameter]: float(v)}) for v in grid]
    return [sweep_row(market, p, float(v), x) for p, v in zip(configs, grid)]


def check_statics(rows: list[SweepRow], parameter: str, slack: float = 1e-12) -> list[str]:
    """Monotonicity claims for a sweep; returns a list of violations.

    Working-phase policies are compared only between neighbouring points that
    are both inside the working domain and below the consumption kink.
    """
    out = []
    yb = [r.y_bar for r in rows]
    diffs = np.diff(yb)
    if parameter in ("Y", "l_work") and not np.all(diffs < 0):
        out.append(f"y_bar not strictly decreasing in {parameter}")
    if parameter == "l_retire" and not np.all(diffs > 0):
        out.append("y_bar not strictly increasing in l_retire")
    for a, b in zip(rows, rows[1:]):
        if not (a.in_pre_domain and b.in_pre_domain):
            continue
        if a.c_pre <= 0 and b.c_pre <= 0:
            continue
        dc = b.c_pre - a.c_pre
        dp = b.pi_pre - a.pi_pre
        tc = slack * max(1.0, abs(a.c_pre))
        tp = slack * max(1.0, abs(a.pi_pre))
        if parameter in ("Y", "l_work") and dc < -tc:
            out.append(f"c_pre decreases in {parameter} at {a.param_value}")
        if parameter == "l_retire" and dc > tc:
            out.append(f"c_pre increases in l_retire at {a.param_value}")
        if parameter == "l_work" and dp > tp:
            out.append(f"pi_pre increases in l_work at {a.param_value}")
        if parameter == "l_retire" and dp < -tp:
            out.append(f"pi_pre decreases in l_retire at {a.param_value}")
    if parameter in ("Y", "l_work"):
        c0, p0 = rows[0].c_post, rows[0].pi_post
        for r in rows:
            if abs(r.c_post - c0) > 1e-12 * max(1.0, abs(c0)) or abs(r.pi_post - p0) > 1e-12 * max(
                1.0, abs(p0)
            ):
                out.append(f"post-retirement policy changes with {parameter} at {r.param_value}")
                break
    return out


def regime_of(sol: RetirementSolution) -> Regime:
    return sol.boundary.regime
