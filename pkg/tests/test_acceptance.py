"""Acceptance criteria, one PASS/FAIL line each.

Run under pytest (lines are collected into the terminal summary) or directly:

    python tests/test_acceptance.py          # all criteria
    python tests/test_acceptance.py 3 8      # a subset

Each criterion is a function returning a mapping of sub-check name to
``(passed, detail)``; the runtime budget is checked as one more sub-check.
"""

from __future__ import annotations

import csv
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from _configs import p0_market, p0_prefs, random_config, random_market  # noqa: E402
from cara_retire.boundary import (  # noqa: E402
    r_integral,
    r_integral_quadrature,
    smooth_fit_residuals,
    solve_boundary,
    verify_variational,
)
from cara_retire.cli import FIGURE4_ALPHAS, FIGURE4_BASE, FIGURE_SWEEPS  # noqa: E402
from cara_retire.cli import main as cli_main  # noqa: E402
from cara_retire.duals import merton_dual, ode_residual, post_dual, pre_dual  # noqa: E402
from cara_retire.market import (  # noqa: E402
    characteristic,
    derive_roots,
    dual_utility,
    gap_income_root,
    leisure_factor,
    no_retirement_threshold,
    utility_gap,
)
from cara_retire.montecarlo import SimConfig, run_verification  # noqa: E402
from cara_retire.policy import (  # noqa: E402
    Phase,
    check_statics,
    compare_at,
    merton_split_wealth,
    policy_at,
    solve,
    statics_sweep,
)

Checks = dict[str, tuple[bool, str]]


def _rel_ode_residual(dual, y, utility, market):
    v, d1, d2 = dual.evaluate(y)
    th = market.theta
    terms = np.abs(
        np.vstack(
            [
                0.5 * th**2 * y**2 * d2,
                (market.beta - market.r) * y * (d1 - dual.annuity),
                market.beta * (v - dual.annuity * y),
                utility,
            ]
        )
    )
    return np.abs(ode_residual(dual, y, utility, market)) / terms.max(axis=0)


def _fd_mismatch(dual, y, rel=1e-5):
    """Worst relative gap between closed-form and central-difference derivatives."""
    h = y * rel
    _, d1, d2 = dual.evaluate(y)
    fd1 = (dual.evaluate(y + h)[0] - dual.evaluate(y - h)[0]) / (2 * h)
    fd2 = (dual.evaluate(y + h)[1] - dual.evaluate(y - h)[1]) / (2 * h)
    return max(np.max(np.abs(fd1 - d1) / np.abs(d1)), np.max(np.abs(fd2 - d2) / np.abs(d2)))


def _away_from(y, points, rel=1e-4):
    keep = np.ones_like(y, dtype=bool)
    for p in points:
        keep &= np.abs(y / p - 1.0) > rel
    return y[keep]


# --- criteria ---------------------------------------------------------------


def criterion_roots() -> Checks:
    rng = np.random.default_rng(1)
    worst_f = worst_prod = worst_sum = 0.0
    for _ in range(1000):
        m = random_market(rng)
        rt = derive_roots(m)
        th2 = m.theta**2
        for root in (rt.m_plus, rt.m_minus):
            scale = th2 * root**2 + abs(2 * (m.beta - m.r) - th2) * abs(root) + 2 * m.beta
            worst_f = max(worst_f, abs(characteristic(m, root)) / scale)
        prod = -2 * m.beta / th2
        total = 1 - 2 * (m.beta - m.r) / th2
        worst_prod = max(worst_prod, abs(rt.m_plus * rt.m_minus - prod) / abs(prod))
        # the sum can be near zero; measure against the size of its two terms
        worst_sum = max(worst_sum, abs(rt.m_plus + rt.m_minus - total) / (1 + abs(2 * (m.beta - m.r) / th2)))
    return {
        "f(m)=0": (worst_f <= 1e-12, f"max {worst_f:.1e}"),
        "product": (worst_prod <= 1e-12, f"max {worst_prod:.1e}"),
        "sum": (worst_sum <= 1e-12, f"max {worst_sum:.1e}"),
    }


def criterion_dual_odes() -> Checks:
    m, p = p0_market(), p0_prefs()
    fb = solve_boundary(m, p)
    out: Checks = {}
    for name, dual, l in (("post", post_dual(m, p), p.l_retire), ("merton", merton_dual(m, p), p.l_work)):
        a = dual.leisure_factor_A
        y = np.geomspace(a / 100, a * 100, 200)
        res = _rel_ode_residual(dual, y, dual_utility(p, y, l), m).max()
        fd = _fd_mismatch(dual, _away_from(y, [a]))
        out[f"{name} ode"] = (res <= 1e-8, f"{res:.1e}")
        out[f"{name} fd"] = (fd <= 1e-6, f"{fd:.1e}")
    pd = pre_dual(m, p, fb.y_bar)
    y = np.geomspace(fb.y_bar * 1.001, fb.y_bar * 1000, 200)
    res = _rel_ode_residual(pd, y, dual_utility(p, y, p.l_work), m).max()
    fd = _fd_mismatch(pd, _away_from(y, [p.a_work]))
    out["pre ode"] = (res <= 1e-8, f"{res:.1e}")
    out["pre fd"] = (fd <= 1e-6, f"{fd:.1e}")
    return out


def criterion_free_boundary() -> Checks:
    m, p = p0_market(), p0_prefs()
    fb = solve_boundary(m, p)
    mp = derive_roots(m).m_plus
    j = gap_income_root(p)
    out: Checks = {}
    for name, got, want in (
        ("y_bar", fb.y_bar, 0.023287),
        ("Y1", fb.y1_threshold, 0.052828),
        ("Y2", fb.y2_threshold, 0.024328),
        ("j", j, 0.512804),
    ):
        out[name] = (abs(got - want) <= 1e-5, f"{got:.8f} vs {want}")
    # R is reported on the scale of w'(y) = const * y^(m+ - 1) * R(y)
    residuals = {
        "R(y_bar)": r_integral(m, p, fb.y_bar) * fb.y_bar ** (mp - 1),
        "R at Y1": r_integral(m, p, p.a_retire, fb.y1_threshold) * p.a_retire ** (mp - 1),
        "R at Y2": r_integral(m, p, p.a_work, fb.y2_threshold) * p.a_work ** (mp - 1),
        "D+Yj": utility_gap(p, j) + p.income * j,
    }
    for name, value in residuals.items():
        out[name] = (abs(value) <= 1e-10, f"{abs(value):.1e}")
    return out


def criterion_variational() -> Checks:
    m, p = p0_market(), p0_prefs()
    w0, _, fd = smooth_fit_residuals(m, p, solve_boundary(m, p))
    out: Checks = {
        "w(y_bar)=0": (abs(w0) <= 1e-7, f"{abs(w0):.1e}"),
        "fd w'(y_bar+)=0": (abs(fd) <= 1e-7, f"{abs(fd):.1e}"),
    }
    rng = np.random.default_rng(4)
    failed = []
    for i in range(100):
        mk, pr = random_config(rng)
        rep = verify_variational(mk, pr, solve_boundary(mk, pr))
        if not rep.passed:
            failed.append(f"#{i}: {'; '.join(rep.failures())}")
    out["100 random (a)(b)(c)"] = (not failed, "; ".join(failed[:3]) or "all pass")
    return out


def criterion_no_retirement() -> Checks:
    rng = np.random.default_rng(5)
    bad = []
    for i in range(50):
        mk, pr = random_config(rng)
        k = no_retirement_threshold(pr)
        cases = ((k, False), (k + 1e-3, False), (k - 1e-3, True), (k * rng.uniform(0.02, 0.9), True))
        for Y, retires in cases:
            yb = solve_boundary(mk, pr.replace(income=Y)).y_bar
            if (yb > 0) != retires or (not retires and yb != 0.0):
                bad.append(f"#{i} Y={Y:.6g} y_bar={yb:.3g}")
    return {"both sides of threshold": (not bad, "; ".join(bad[:3]) or "50 configs")}


def criterion_statics() -> Checks:
    m, p = p0_market(), p0_prefs()
    out: Checks = {}
    for name, (param, lo, hi, changes) in FIGURE_SWEEPS.items():
        rows = statics_sweep(m, p.replace(**changes), param, np.linspace(lo, hi, 20), 1.0)
        v = check_statics(rows, param)
        out[f"{param} sweep"] = (not v, "; ".join(v) or "ok")
    for alpha in FIGURE4_ALPHAS:
        pr = p.replace(alpha=alpha, **FIGURE4_BASE)
        k = no_retirement_threshold(pr)
        rows = statics_sweep(m, pr, "Y", np.linspace(0.01 * k, 0.99 * k, 20), 1.0)
        v = check_statics(rows, "Y")
        out[f"Y sweep alpha={alpha}"] = (not v, "; ".join(v) or "ok")
    return out


def criterion_policy_comparison() -> Checks:
    sol = solve(p0_market(), p0_prefs())
    bad = []
    for x in np.linspace(sol.x_bar / 100, sol.x_bar, 100):
        cmp = compare_at(sol, float(x))
        bad += [f"x={x:.4g}: {v}" for v in cmp.violations]
    split = merton_split_wealth(sol)
    floor = -sol.prefs.income / sol.market.r
    unequal = []
    for x in np.linspace(floor, split, 22)[1:-1]:
        pre, mer = policy_at(sol, x, Phase.PRE), policy_at(sol, x, Phase.MERTON)
        if abs(pre.pi - mer.pi) > 1e-12 * abs(mer.pi):
            unequal.append(f"x={x:.4g}")
    expected_split = -merton_dual(sol.market, sol.prefs).evaluate(sol.prefs.a_work)[1]
    return {
        "100-point grid orderings": (not bad, "; ".join(bad[:3]) or "ok"),
        "split at -V_Mer'(A(l_work))": (split == expected_split, f"{split:.6g}"),
        "low-wealth equality": (not unequal, ", ".join(unequal[:3]) or "20 points below split"),
    }


def criterion_monte_carlo() -> Checks:
    cfg = SimConfig(n_paths=100_000, dt=0.01, horizon=200.0, seed=42, antithetic=True, richardson=True)
    report = run_verification(solve(p0_market(), p0_prefs()), cfg)
    out: Checks = {}
    for c in report.checks:
        if c.detail:
            detail = c.detail
        elif c.estimate is not None:
            lo, hi = c.estimate.interval
            detail = f"{c.closed_form:.6g} in [{lo:.6g}, {hi:.6g}]"
        else:
            detail = ""
        out[c.name] = (c.passed, detail)
    return out


def criterion_oracles() -> Checks:
    m, p = p0_market(), p0_prefs()
    mp = derive_roots(m).m_plus
    rng = np.random.default_rng(9)
    worst_r = 0.0
    for _ in range(100):
        lower = math.exp(rng.uniform(math.log(1e-3), math.log(5.0)))
        Y = rng.uniform(0.001, 0.299)
        ana = r_integral(m, p, lower, Y)
        num = r_integral_quadrature(m, p, lower, Y)
        # scale: integral of the absolute integrand, so sign cancellation near a root is not penalised
        absint = lambda z: z ** (-1 - mp) * abs(float(utility_gap(p, z)) + Y * z)  # noqa: E731
        scale = max(abs(num), quad(absint, lower, max(lower, p.a_work) * 1e3, limit=500)[0])
        worst_r = max(worst_r, abs(ana - num) / scale)
    worst_u = 0.0
    c_grid = np.arange(0.0, 20.0 + 1e-9, 1e-3)
    for _ in range(200):
        l = rng.uniform(0.0, 1.0)
        y = math.exp(rng.uniform(math.log(1e-3), math.log(2.0)))
        a = leisure_factor(p, l)
        objective = lambda c: -math.exp(-p.gamma * c) * a / p.gamma - c * y  # noqa: E731
        grid = -np.exp(-p.gamma * c_grid) * a / p.gamma - c_grid * y
        k = int(np.argmax(grid))
        lo, hi = c_grid[max(k - 1, 0)], c_grid[min(k + 1, c_grid.size - 1)]
        best = minimize_scalar(lambda c: -objective(c), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        brute = max(grid[k], -best.fun)
        worst_u = max(worst_u, abs(brute - dual_utility(p, y, l)))
    return {
        "R vs quadrature": (worst_r <= 1e-8, f"max rel {worst_r:.1e}"),
        "dual utility vs grid": (worst_u <= 1e-10, f"max abs {worst_u:.1e}"),
    }


def criterion_cli() -> Checks:
    with tempfile.TemporaryDirectory() as tmp:
        dirs = [os.path.join(tmp, "a"), os.path.join(tmp, "b")]
        codes = [cli_main(["figures", "--out", d]) for d in dirs]
        names = sorted(os.listdir(dirs[0]))
        same = names == sorted(os.listdir(dirs[1])) and all(
            open(os.path.join(dirs[0], n), "rb").read() == open(os.path.join(dirs[1], n), "rb").read()
            for n in names
        )
        with open(os.path.join(dirs[0], "figure6.csv")) as fh:
            rows = list(csv.DictReader(fh))
    low = [r for r in rows if r["c_pre"] and r["c_post"] and float(r["c_pre"]) < float(r["c_post"])]
    return {
        "exit codes": (codes == [0, 0], str(codes)),
        "five datasets": (len(names) == 5, ", ".join(names)),
        "byte-identical": (same, "identical" if same else "differ"),
        "figure6 c_pre < c_post": (bool(low), f"{len(low)} rows"),
    }


@dataclass(frozen=True)
class Criterion:
    number: int
    title: str
    budget_s: float
    run: object


CRITERIA = (
    Criterion(1, "root identities", 1.0, criterion_roots),
    Criterion(2, "dual ODE residuals and derivatives", 1.0, criterion_dual_odes),
    Criterion(3, "free boundary at the baseline", 1.0, criterion_free_boundary),
    Criterion(4, "smooth fit and variational inequality", 10.0, criterion_variational),
    Criterion(5, "no-retirement threshold", 5.0, criterion_no_retirement),
    Criterion(6, "comparative statics", 10.0, criterion_statics),
    Criterion(7, "policy comparison", 1.0, criterion_policy_comparison),
    Criterion(8, "Monte Carlo verification", 300.0, criterion_monte_carlo),
    Criterion(9, "oracle agreement", 10.0, criterion_oracles),
    Criterion(10, "CLI reproducibility", 60.0, criterion_cli),
)


def evaluate(c: Criterion) -> tuple[bool, str]:
    start = time.perf_counter()
    checks = c.run()
    elapsed = time.perf_counter() - start
    checks["runtime"] = (elapsed < c.budget_s, f"{elapsed:.2f}s < {c.budget_s:g}s")
    passed = all(ok for ok, _ in checks.values())
    parts = [f"{'' if ok else 'FAILED '}{name}: {detail}" for name, (ok, detail) in checks.items()]
    line = f"[{'PASS' if passed else 'FAIL'}] {c.number:>2}. {c.title} | " + " | ".join(parts)
    return passed, line


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"c{c.number:02d}" for c in CRITERIA])
def test_acceptance(criterion):
    from conftest import ACCEPTANCE_LINES

    passed, line = evaluate(criterion)
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


if __name__ == "__main__":
    wanted = {int(a) for a in sys.argv[1:]}
    results = []
    for crit in CRITERIA:
        if wanted and crit.number not in wanted:
            continue
        ok, text = evaluate(crit)
        print(text, flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
