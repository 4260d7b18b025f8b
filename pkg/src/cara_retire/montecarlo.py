"""Monte Carlo estimates of the dual value functions from their stochastic form.

The dual state is a geometric Brownian motion,
``y_t = y0 exp((beta - r - theta^2/2) t - theta B_t)``, simulated exactly in log
space. Every path carries its own Philox stream keyed by ``(seed, unit)`` where a
unit is one path, or one antithetic pair, so results do not depend on how paths
are scheduled.

A single pass over a path feeds all estimators at once: they only differ in the
starting level ``log y0``. With ``richardson=True`` the path is generated at
``dt/2`` and the ``dt`` estimators are read off the same Brownian path, which
makes the coarse/fine difference an almost noise-free bias estimate.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from cara_retire.boundary import FreeBoundary
from cara_retire.duals import StationaryDual, post_dual
from cara_retire.errors import DomainError
from cara_retire.market import MarketParams, Preferences, leisure_factor
from cara_retire.policy import RetirementSolution, invert_marginal_dual


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 0.01
    horizon: float = 200.0
    seed: int = 42
    antithetic: bool = True
    richardson: bool = False
    tail_tolerance: float = 1e-2

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1 (got {self.n_paths})")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_paths: int
    tail_bound: float
    allowance: float = 0.0
    warning: str | None = None

    @property
    def half_width(self) -> float:
        return 3.0 * self.stderr + self.tail_bound + self.allowance

    @property
    def interval(self) -> tuple[float, float]:
        return self.mean - self.half_width, self.mean + self.half_width

    def covers(self, value: float) -> bool:
        lo, hi = self.interval
        return lo <= value <= hi


def unit_generator(seed: int, unit: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(unit,))))


@numba.njit(cache=True, inline="always")
def _dual_u(w, ew, c, y0, a, inv_g):
    # c = ln(A / y0): the path is below the kink while w <= c
    if w <= c:
        return -y0 * ew * (c - w + 1.0) * inv_g
    return -a * inv_g


@numba.njit(cache=True)
def _run_unit(
    gen, n_copies, n_coarse, n_sub, h, drift, vol, beta, gamma,
    st_c, st_y0, st_a, stop_on, s_c, s_y0, s_a, s_gap, s_cont, bud_on, b_c,
    probe_at, out, row0,
):  # fmt: skip
    """Simulate ``n_copies`` (1, or 2 antithetic) paths and write per-path sums.

    Row layout, for each level (fine then coarse when ``n_sub == 2``, otherwise
    coarse only): ``[stationary (K) | pre | full | stopped flag | budget]``;
    then probes of ``W_t = log(y_t / y0)`` and finally ``max_t W_t``.
    """
    K = st_c.shape[0]
    P = probe_at.shape[0]
    per = K + 4
    n_lv = 2 if n_sub > 1 else 1
    sq = math.sqrt(h)
    inv_g = 1.0 / gamma
    vol2 = vol * vol
    lv_dt = np.empty(n_lv)
    lv_fac = np.empty(n_lv)
    for lv in range(n_lv):
        lv_dt[lv] = h if lv < n_lv - 1 else h * n_sub
        lv_fac[lv] = math.exp(-beta * lv_dt[lv])
    zs = np.empty(n_sub)
    prev = np.empty((n_copies, n_lv, K + 2))
    alive = np.ones((n_copies, n_lv), dtype=np.bool_)
    disc = np.ones((n_copies, n_lv))
    steps = np.zeros((n_copies, n_lv), dtype=np.int64)
    w_lv = np.zeros((n_copies, n_lv))
    w = np.zeros(n_copies)
    wmax = np.zeros(n_copies)
    for c in range(n_copies):
        for j in range(out.shape[1]):
            out[row0 + c, j] = 0.0
        for lv in range(n_lv):
            for k in range(K):
                prev[c, lv, k] = _dual_u(0.0, 1.0, st_c[k], st_y0[k], st_a[k], inv_g)
            prev[c, lv, K] = _dual_u(0.0, 1.0, s_c, s_y0, s_a, inv_g)
            prev[c, lv, K + 1] = max(b_c, 0.0) * inv_g
    probe_ix = 0
    for i in range(n_coarse):
        for s in range(n_sub):
            zs[s] = gen.standard_normal()
        for c in range(n_copies):
            sign = 1.0 if c == 0 else -1.0
            row = row0 + c
            for s in range(n_sub):
                w[c] += drift * h - vol * sq * sign * zs[s]
                wn = w[c]
                if wn > wmax[c]:
                    wmax[c] = wn
                ew = math.exp(wn)
                for lv in range(n_lv):
                    # the coarse level only moves on the last sub-step
                    if lv == n_lv - 1 and s != n_sub - 1:
                        continue
                    dt = lv_dt[lv]
                    base = lv * per
                    d0 = disc[c, lv]
                    d1 = d0 * lv_fac[lv]
                    for k in range(K):
                        v = _dual_u(wn, ew, st_c[k], st_y0[k], st_a[k], inv_g)
                        out[row, base + k] += 0.5 * dt * (d0 * prev[c, lv, k] + d1 * v)
                        prev[c, lv, k] = v
                    if bud_on:
                        v = max(b_c - wn, 0.0) * inv_g * ew
                        out[row, base + K + 3] += 0.5 * dt * (d0 * prev[c, lv, K + 1] + d1 * v)
                        prev[c, lv, K + 1] = v
                    if stop_on and alive[c, lv]:
                        l0 = s_gap + w_lv[c, lv]
                        l1 = s_gap + wn
                        hit = l1 <= 0.0
                        if not hit:
                            # Brownian-bridge probability of a crossing inside the step
                            p = math.exp(-2.0 * l0 * l1 / (vol2 * dt))
                            if p > 1e-300 and gen.random() < p:
                                hit = True
                        if hit:
                            # crossing time taken at the step midpoint
                            t_hit = (steps[c, lv] + 0.5) * dt
                            out[row, base + K] += 0.5 * dt * d0 * prev[c, lv, K]
                            out[row, base + K + 1] = out[row, base + K] + math.exp(-beta * t_hit) * s_cont
                            out[row, base + K + 2] = 1.0
                            alive[c, lv] = False
                        else:
                            v = _dual_u(wn, ew, s_c, s_y0, s_a, inv_g)
                            out[row, base + K] += 0.5 * dt * (d0 * prev[c, lv, K] + d1 * v)
                            prev[c, lv, K] = v
                    disc[c, lv] = d1
                    steps[c, lv] += 1
                    w_lv[c, lv] = wn
        while probe_ix < P and probe_at[probe_ix] == i + 1:
            for c in range(n_copies):
                out[row0 + c, n_lv * per + probe_ix] = w[c]
            probe_ix += 1
    for c in range(n_copies):
        row = row0 + c
        if stop_on:
            for lv in range(n_lv):
                b = lv * per
                if out[row, b + K + 2] == 0.0:
                    # unstopped by the horizon: truncated integral, no continuation
                    out[row, b + K + 1] = out[row, b + K]
        out[row, n_lv * per + P] = wmax[c]


@dataclass
class PathSums:
    """Per-path outputs of one simulation pass."""

    fine: np.ndarray | None
    coarse: np.ndarray
    probes: np.ndarray
    w_max: np.ndarray
    probe_times: np.ndarray
    n_stat: int
    antithetic: bool

    def column(self, level: str, name: str, k: int = 0) -> np.ndarray:
        arr = self.coarse if level == "coarse" else self.fine
        K = self.n_stat
        idx = {"stat": k, "pre": K, "full": K + 1, "stopped": K + 2, "budget": K + 3}[name]
        return arr[:, idx]

    def unit_means(self, values: np.ndarray) -> np.ndarray:
        """Collapse antithetic pairs into their averages (the i.i.d. samples)."""
        return values.reshape(-1, 2).mean(axis=1) if self.antithetic else values


def simulate_paths(
    market: MarketParams,
    gamma: float,
    cfg: SimConfig,
    stationary: list[tuple[float, float]] = (),
    stopped: tuple[float, float, float, float] | None = None,
    budget: tuple[float, float] | None = None,
    probe_times=(),
) -> PathSums:
    """Run all estimators on one set of paths.

    ``stationary`` holds ``(y0, A)`` pairs; ``stopped`` is
    ``(y0, barrier, A, continuation payoff at the barrier)``; ``budget`` is
    ``(y0, A)`` for the state-price-weighted consumption integral.
    """
    n_sub = 2 if cfg.richardson else 1
    h = cfg.dt / n_sub
    th = market.theta
    drift = market.beta - market.r - 0.5 * th**2
    stat = list(stationary)
    st_y0 = np.array([y for y, _ in stat], dtype=float)
    st_a = np.array([a for _, a in stat], dtype=float)
    st_c = np.log(st_a / st_y0) if stat else np.zeros(0)
    if stopped is not None:
        y0, bar, a_s, cont = stopped
        stop_args = (True, math.log(a_s / y0), y0, a_s, math.log(y0 / bar), float(cont))
    else:
        stop_args = (False, 0.0, 1.0, 1.0, 1.0, 0.0)
    bud_args = (True, math.log(budget[1] / budget[0])) if budget is not None else (False, 0.0)
    probe_steps = np.array([int(round(t / cfg.dt)) for t in probe_times], dtype=np.int64)
    if np.any(probe_steps < 1) or np.any(probe_steps > cfg.n_steps) or np.any(np.diff(probe_steps) <= 0):
        raise ValueError("probe times must be increasing and inside (0, horizon]")
    K = len(stat)
    per = K + 4
    P = len(probe_steps)
    n_lv = 2 if n_sub > 1 else 1
    out = np.zeros((cfg.n_paths, n_lv * per + P + 1))
    copies = 2 if cfg.antithetic else 1
    for unit in range(cfg.n_paths // copies):
        _run_unit(
            unit_generator(cfg.seed, unit), copies, cfg.n_steps, n_sub, h, drift, th,
            market.beta, gamma, st_c, st_y0, st_a, *stop_args, *bud_args, probe_steps,
            out, unit * copies,
        )  # fmt: skip
    fine = out[:, :per] if n_sub > 1 else None
    coarse = out[:, (n_lv - 1) * per : n_lv * per]
    return PathSums(
        fine=fine,
        coarse=coarse,
        probes=out[:, n_lv * per : n_lv * per + P],
        w_max=out[:, n_lv * per + P],
        probe_times=np.asarray(probe_times, dtype=float),
        n_stat=K,
        antithetic=cfg.antithetic,
    )


def simulate_dual_path(market: MarketParams, y0: float, cfg: SimConfig):
    """Times and levels of the first simulated path under ``cfg.seed``."""
    if not y0 > 0:
        raise DomainError(f"y0 must be > 0 (got {y0})")
    steps = np.arange(1, cfg.n_steps + 1)
    one = SimConfig(n_paths=1, dt=cfg.dt, horizon=cfg.horizon, seed=cfg.seed, antithetic=False)
    sums = simulate_paths(market, 1.0, one, probe_times=steps * cfg.dt)
    t = np.concatenate([[0.0], steps * cfg.dt])
    y = y0 * np.exp(np.concatenate([[0.0], sums.probes[0]]))
    return t, y


def _summarise(sums: PathSums, name: str, k: int, tail: float, cfg: SimConfig, shift: float = 0.0) -> Estimate:
    samples = sums.unit_means(sums.column("coarse", name, k))
    n = samples.size
    mean = float(samples.mean()) + shift
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    allowance = 0.0
    if sums.fine is not None:
        fine = sums.unit_means(sums.column("fine", name, k))
        # first-order Richardson: the coarse bias is about twice the gap to the fine level
        allowance = 2.0 * abs(float(fine.mean()) - float(samples.mean()))
    warn = None
    if tail > cfg.tail_tolerance:
        warn = f"truncation tail bound {tail:.3e} exceeds tolerance {cfg.tail_tolerance:.1e}"
    return Estimate(mean, se, cfg.n_paths, tail, allowance, warn)


def stationary_tail(market: MarketParams, a: float, gamma: float, horizon: float) -> float:
    """``e^(-beta T) sup|U| / beta`` with the exact supremum ``A / gamma``."""
    return math.exp(-market.beta * horizon) * (a / gamma) / market.beta


def estimate_stationary_dual(
    market: MarketParams,
    prefs: Preferences,
    l: float,
    y0: float,
    cfg: SimConfig,
    annuity: float = 0.0,
) -> Estimate:
    """Discounted dual utility integral along exact paths started at ``y0``."""
    if not y0 > 0:
        raise DomainError(f"y0 must be > 0 (got {y0})")
    a = leisure_factor(prefs, l)
    sums = simulate_paths(market, prefs.gamma, cfg, stationary=[(y0, a)])
    tail = stationary_tail(market, a, prefs.gamma, cfg.horizon)
    return _summarise(sums, "stat", 0, tail, cfg, shift=annuity * y0)


def _stopped_args(market: MarketParams, prefs: Preferences, fb: FreeBoundary, y0: float):
    if not fb.y_bar > 0:
        raise DomainError("working-phase estimate needs a retirement trigger y_bar > 0")
    if not y0 > fb.y_bar:
        raise DomainError(f"y0 must exceed y_bar={fb.y_bar} (got {y0})")
    cont = post_dual(market, prefs).evaluate(fb.y_bar)[0] - prefs.income / market.r * fb.y_bar
    return (y0, fb.y_bar, prefs.a_work, float(cont))


def stopped_tails(market: MarketParams, prefs: Preferences, fb: FreeBoundary, horizon: float) -> tuple[float, float]:
    """Tail bounds for the stopped integral alone and with the retired continuation."""
    disc = math.exp(-market.beta * horizon)
    pre = disc * prefs.a_work / (prefs.gamma * market.beta)
    cont = disc * (prefs.a_retire / (prefs.gamma * market.beta) + prefs.income / market.r * fb.y_bar)
    return pre, pre + cont


def estimate_pre_dual(
    market: MarketParams, prefs: Preferences, fb: FreeBoundary, y0: float, cfg: SimConfig
) -> Estimate:
    """Working-phase dual: integral of the working dual utility up to the first
    passage below ``y_bar``, plus the annuity ``(Y/r) y0``."""
    args = _stopped_args(market, prefs, fb, y0)
    sums = simulate_paths(market, prefs.gamma, cfg, stopped=args)
    tail, _ = stopped_tails(market, prefs, fb, cfg.horizon)
    est = _summarise(sums, "pre", 0, tail, cfg, shift=prefs.income / market.r * y0)
    return _with_unstopped(est, sums)


def estimate_full_dual(
    market: MarketParams, prefs: Preferences, fb: FreeBoundary, y0: float, cfg: SimConfig
) -> Estimate:
    """Full dual with the retired continuation paid at the trigger; compare with ``w + V_post``."""
    args = _stopped_args(market, prefs, fb, y0)
    sums = simulate_paths(market, prefs.gamma, cfg, stopped=args)
    _, tail = stopped_tails(market, prefs, fb, cfg.horizon)
    est = _summarise(sums, "full", 0, tail, cfg, shift=prefs.income / market.r * y0)
    return _with_unstopped(est, sums)


def _with_unstopped(est: Estimate, sums: PathSums) -> Estimate:
    frac = 1.0 - float(sums.column("coarse", "stopped").mean())
    if frac > 0:
        note = f"{frac:.2%} of paths not stopped by the horizon"
        warn = note if est.warning is None else f"{est.warning}; {note}"
        return Estimate(est.mean, est.stderr, est.n_paths, est.tail_bound, est.allowance, warn)
    return est


def sup_abs_scaled_marginal(post: StationaryDual) -> float:
    """``sup_z |z V'(z)|`` on a dense log grid around the kink."""
    z = post.leisure_factor_A * np.geomspace(1e-12, 1e6, 20001)
    _, d1, _ = post.evaluate(z)
    return float(np.max(np.abs(z * (d1 - post.annuity))))


@dataclass
class BudgetReport:
    x: float
    y0: float
    budget: Estimate
    times: tuple[float, ...]
    discounted_wealth: list[Estimate]
    discounted_dual: list[Estimate]
    wealth_bounds: list[float]
    dual_bounds: list[float]
    min_wealth: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


def verify_budget_and_transversality(
    market: MarketParams,
    prefs: Preferences,
    post: StationaryDual,
    x: float,
    cfg: SimConfig,
    times=(50.0, 100.0, 200.0),
    sums: PathSums | None = None,
) -> BudgetReport:
    """Budget equality for the optimal retired plan and decay of the terminal terms.

    ``E[int_0^inf H_s c_s ds] = x`` with ``H_s = e^(-beta s) y_s / y0`` and
    ``y0 = I_post(x)``; ``E[H_t X_t]`` and ``e^(-beta t) E[V_post(y_t)]`` must
    decrease along ``times`` and stay below ``e^(-beta t)`` times their
    sup-norm bounds.
    """
    if not x > 0:
        raise DomainError(f"wealth must be > 0 (got {x})")
    y0 = invert_marginal_dual(post, x)
    if sums is None:
        sums = simulate_paths(
            market, prefs.gamma, cfg, budget=(y0, post.leisure_factor_A), probe_times=times
        )
    sup_zv1 = sup_abs_scaled_marginal(post)
    sup_v = post.leisure_factor_A / (post.gamma * market.beta)
    budget_tail = math.exp(-market.beta * cfg.horizon) * sup_zv1 / y0
    b = sums.unit_means(sums.column("coarse", "budget"))
    n = b.size
    allowance = 0.0
    if sums.fine is not None:
        bf = sums.unit_means(sums.column("fine", "budget"))
        allowance = 2.0 * abs(float(bf.mean()) - float(b.mean()))
    budget = Estimate(float(b.mean()), float(b.std(ddof=1) / math.sqrt(n)), cfg.n_paths, budget_tail, allowance)
    report = BudgetReport(x, y0, budget, tuple(times), [], [], [], [], math.inf)
    if not budget.covers(x):
        lo, hi = budget.interval
        report.failures.append(f"budget E[int H c] interval [{lo:.6g}, {hi:.6g}] misses x={x}")
    for j, t in enumerate(times):
        w = sums.probes[:, j]
        y_t = y0 * np.exp(w)
        disc = math.exp(-market.beta * t)
        v, d1, _ = post.evaluate(y_t)
        hx = sums.unit_means(disc * np.exp(w) * (-d1))
        dv = sums.unit_means(disc * v)
        m1, s1 = _mean_se(hx)
        m2, s2 = _mean_se(dv)
        report.discounted_wealth.append(Estimate(m1, s1, cfg.n_paths, 0.0))
        report.discounted_dual.append(Estimate(m2, s2, cfg.n_paths, 0.0))
        report.wealth_bounds.append(disc * sup_zv1 / y0)
        report.dual_bounds.append(disc * sup_v)
    for series, bounds, label in (
        (report.discounted_wealth, report.wealth_bounds, "E[H_t X_t]"),
        (report.discounted_dual, report.dual_bounds, "e^-bt E[V_post(y_t)]"),
    ):
        mags = [abs(e.mean) for e in series]
        for j, t in enumerate(times):
            if mags[j] > bounds[j]:
                report.failures.append(f"{label} at t={t} exceeds its bound {bounds[j]:.3e}")
            if j and not mags[j] < mags[j - 1]:
                report.failures.append(f"{label} does not decay between t={times[j-1]} and t={t}")
    # wealth along the path is smallest where y is largest
    y_peak = y0 * np.exp(sums.w_max)
    report.min_wealth = float(np.min(-post.evaluate(y_peak)[1]))
    if report.min_wealth < 0:
        report.failures.append(f"optimal retired wealth went negative ({report.min_wealth})")
    return report


@dataclass(frozen=True)
class Check:
    name: str
    closed_form: float
    estimate: Estimate | None
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    config: SimConfig
    checks: list[Check]
    budget: BudgetReport | None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def run_verification(
    sol: RetirementSolution,
    cfg: SimConfig,
    wealth: float = 1.0,
    transversality_ratio: float = 1e-2,
) -> VerificationReport:
    """Closed forms against one shared simulation pass.

    Covers the retired dual at ``A(l_retire) * {1/2, 1, 2}``, the working dual
    (and the decomposition ``w + V_post``) at twice the trigger, the budget
    equality at ``wealth`` and the decay of the transversality terms.
    """
    market, prefs = sol.market, sol.prefs
    a = prefs.a_retire
    starts = [0.5 * a, a, 2.0 * a]
    stopped = None
    if sol.retires:
        stopped = _stopped_args(market, prefs, sol.boundary, 2.0 * sol.boundary.y_bar)
    y_budget = invert_marginal_dual(sol.post, wealth)
    times = tuple(t for t in (50.0, 100.0, 200.0) if t <= cfg.horizon)
    sums = simulate_paths(
        market, prefs.gamma, cfg,
        stationary=[(y, a) for y in starts], stopped=stopped,
        budget=(y_budget, a), probe_times=times,
    )  # fmt: skip
    checks = []
    tail = stationary_tail(market, a, prefs.gamma, cfg.horizon)
    for k, y0 in enumerate(starts):
        est = _summarise(sums, "stat", k, tail, cfg)
        exact = float(sol.post.evaluate(y0)[0])
        checks.append(Check(f"post_dual(y0={y0:.6g})", exact, est, est.covers(exact)))
    if stopped is not None:
        from cara_retire.boundary import w_value

        y0 = stopped[0]
        t_pre, t_full = stopped_tails(market, prefs, sol.boundary, cfg.horizon)
        annuity = prefs.income / market.r * y0
        est = _with_unstopped(_summarise(sums, "pre", 0, t_pre, cfg, shift=annuity), sums)
        exact = float(sol.pre.evaluate(y0)[0])
        checks.append(Check(f"pre_dual(y0={y0:.6g})", exact, est, est.covers(exact)))
        est = _with_unstopped(_summarise(sums, "full", 0, t_full, cfg, shift=annuity), sums)
        exact = float(w_value(market, prefs, sol.boundary, y0)[0] + sol.post.evaluate(y0)[0])
        checks.append(Check(f"w_plus_post(y0={y0:.6g})", exact, est, est.covers(exact)))
    report = verify_budget_and_transversality(market, prefs, sol.post, wealth, cfg, times, sums)
    checks.append(
        Check(f"budget(x={wealth:g})", wealth, report.budget, report.budget.covers(wealth))
    )
    if len(times) >= 2:
        for label, series in (("E[H_t X_t]", report.discounted_wealth), ("e^-bt E[V(y_t)]", report.discounted_dual)):
            first, last = abs(series[0].mean), abs(series[-1].mean)
            ratio = last / first if first > 0 else math.inf
            ok = ratio < transversality_ratio
            checks.append(
                Check(
                    f"decay {label} t={times[-1]:g}/t={times[0]:g}", 0.0, series[-1], ok,
                    f"ratio {ratio:.3e} (limit {transversality_ratio:g})",
                )  # fmt: skip
            )
    other = [f for f in report.failures if not f.startswith("budget")]
    detail = "; ".join(other) or f"min wealth on paths {report.min_wealth:.4g}"
    checks.append(Check("transversality bounds and nonnegative wealth", 0.0, None, not other, detail))
    return VerificationReport(cfg, checks, report)


def seed_from_env(default: int) -> int:
    raw = os.environ.get("CARA_RETIRE_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        warnings.warn(f"ignoring non-integer CARA_RETIRE_SEED={raw!r}", RuntimeWarning, stacklevel=2)
        return default
