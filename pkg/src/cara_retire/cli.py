"""Command-line front end: ``cara-retire {solve,policy,sweep,simulate,figures}``.

Exit codes: 0 success, 1 a verification check failed, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from cara_retire.boundary import income_thresholds
from cara_retire.errors import DomainError, ParameterError
from cara_retire.market import (
    MarketParams,
    Preferences,
    derive_roots,
    gap_income_root,
    no_retirement_threshold,
)
from cara_retire.montecarlo import SimConfig, run_verification, seed_from_env
from cara_retire.policy import Phase, in_domain, policy_at, solve, statics_sweep

# Baseline configuration; gamma is the effective coefficient alpha * gamma_star.
DEFAULTS = {
    "beta": 0.03,
    "r": 0.01,
    "mu": 0.07,
    "sigma": 0.2,
    "gamma": 3.0,
    "gamma_star": None,
    "alpha": 0.4,
    "l_work": 0.3,
    "l_retire": 0.5,
    "income": 0.1,
    "wealth": 1.0,
}
PARAM_KEYS = tuple(DEFAULTS)
SIM_KEYS = ("paths", "dt", "horizon", "seed")
GRID_KEYS = ("param", "lo", "hi", "n")

POLICY_COLUMNS = ("x", "c_pre", "pi_pre", "c_post", "pi_post", "c_merton", "pi_merton")
SWEEP_COLUMNS = ("param_value", "y_bar", "x_bar", "c_pre", "pi_pre", "c_post", "pi_post")

FIGURE_SWEEPS = {
    "figure2": ("l_work", 0.05, 0.42, {}),
    "figure3": ("l_retire", 0.38, 1.0, {}),
}
FIGURE4_ALPHAS = (0.25, 0.37, 0.5)
FIGURE4_BASE = {"l_work": 0.4, "l_retire": 0.5}
FIGURE_POLICIES = {
    "figure5": {},
    "figure6": {"l_work": 0.4, "income": 0.05},
}


class UsageError(Exception):
    pass


def fmt(v) -> str:
    """Shortest round-trip decimal; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def read_config_file(path: str) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment, dashes equal underscores."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in PARAM_KEYS + SIM_KEYS + GRID_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _number(key: str, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{key} must be a number (got {value!r})") from None


def resolve_params(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    file_vals = read_config_file(args.config) if args.config else {}
    resolved = {}
    for key in PARAM_KEYS + SIM_KEYS + GRID_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_vals:
            resolved[key] = file_vals[key]
        elif key in DEFAULTS:
            resolved[key] = DEFAULTS[key]
    flag_gs = getattr(args, "gamma_star", None)
    flag_g = getattr(args, "gamma", None)
    if flag_gs is not None and flag_g is not None:
        raise UsageError("give either --gamma or --gamma-star, not both")
    if flag_gs is None and flag_g is None and "gamma_star" in file_vals and "gamma" in file_vals:
        raise UsageError("config file sets both gamma and gamma_star")
    # an explicit gamma_star (flag, or file without a flag gamma) wins over the default gamma
    if flag_gs is not None or (flag_g is None and "gamma_star" in file_vals):
        resolved["gamma"] = None
    else:
        resolved["gamma_star"] = None
    for key in PARAM_KEYS:
        if resolved.get(key) is not None:
            resolved[key] = _number(key, resolved[key])
    return resolved


def build_model(p: dict) -> tuple[MarketParams, Preferences]:
    market = MarketParams(r=p["r"], mu=p["mu"], sigma=p["sigma"], beta=p["beta"])
    if p.get("gamma_star") is not None:
        prefs = Preferences(p["gamma_star"], p["alpha"], p["l_work"], p["l_retire"], p["income"])
    else:
        prefs = Preferences.from_gamma(p["gamma"], p["alpha"], p["l_work"], p["l_retire"], p["income"])
    return market, prefs


def config_echo(market: MarketParams, prefs: Preferences, extra: dict | None = None) -> dict:
    out = {
        "beta": market.beta,
        "r": market.r,
        "mu": market.mu,
        "sigma": market.sigma,
        "gamma": prefs.gamma,
        "gamma_star": prefs.gamma_star,
        "alpha": prefs.alpha,
        "l_work": prefs.l_work,
        "l_retire": prefs.l_retire,
        "income": prefs.income,
    }
    if extra:
        out.update(extra)
    return out


def render_table(columns, rows, fmt_kind: str, config: dict) -> str:
    if fmt_kind == "json":
        body = {
            "config": config,
            "columns": list(columns),
            "rows": [[_jsonable(None if v is None else float(v)) for v in row] for row in rows],
        }
        return json.dumps(body, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from exc


def make_grid(lo, hi, n) -> np.ndarray:
    lo, hi = _number("lo", lo), _number("hi", hi)
    try:
        n = int(n)
    except (TypeError, ValueError):
        raise UsageError(f"n must be an integer (got {n!r})") from None
    if n < 2:
        raise UsageError(f"grid needs n >= 2 points (got {n})")
    if not lo < hi:
        raise UsageError(f"grid needs lo < hi (got lo={lo}, hi={hi})")
    return np.linspace(lo, hi, n)


# --- solve -----------------------------------------------------------------


def solve_report(market: MarketParams, prefs: Preferences) -> dict:
    sol = solve(market, prefs)
    fb = sol.boundary
    roots = derive_roots(market)
    k = no_retirement_threshold(prefs)
    try:
        y1, y2 = income_thresholds(market, prefs)
    except (DomainError, ArithmeticError, ValueError):
        y1 = y2 = None
    try:
        j = gap_income_root(prefs)
    except DomainError:
        j = None
    return {
        "theta": roots.theta,
        "m_plus": roots.m_plus,
        "m_minus": roots.m_minus,
        "a_work": prefs.a_work,
        "a_retire": prefs.a_retire,
        "no_retirement_threshold": k,
        "Y1": y1,
        "Y2": y2,
        "j": j,
        "regime": fb.regime.value,
        "y_bar": fb.y_bar,
        "x_bar": sol.x_bar if sol.retires else "never retires",
        "C1": sol.pre.c1,
        "C2": sol.pre.c2,
        "C3": sol.pre.c3,
        "C": fb.coefficient_c,
    }


def run_solve(args, p) -> int:
    market, prefs = build_model(p)
    report = solve_report(market, prefs)
    if args.format == "json":
        body = {"config": config_echo(market, prefs), "result": {k: _jsonable(v) for k, v in report.items()}}
        emit(json.dumps(body, indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("quantity", "value"))
        for key, v in report.items():
            writer.writerow((key, v if isinstance(v, str) else fmt(v)))
        emit(buf.getvalue(), args.out)
    return 0


# --- policy table ----------------------------------------------------------


def policy_rows(market: MarketParams, prefs: Preferences, grid) -> list[list]:
    sol = solve(market, prefs)
    rows = []
    for x in grid:
        x = float(x)
        row = [x]
        for phase in (Phase.PRE, Phase.POST, Phase.MERTON):
            if in_domain(sol, x, phase):
                pt = policy_at(sol, x, phase)
                row += [pt.c, pt.pi]
            else:
                row += [None, None]
        rows.append(row)
    return rows


def default_wealth_grid(market: MarketParams, prefs: Preferences, n: int = 100) -> np.ndarray:
    sol = solve(market, prefs)
    if not sol.retires:
        raise UsageError("the agent never retires: give an explicit wealth grid with --hi")
    return np.linspace(0.0, sol.x_bar, n)


def run_policy(args, p) -> int:
    market, prefs = build_model(p)
    if p.get("param") not in (None, "x"):
        raise UsageError("policy tables take a wealth grid (param must be x)")
    if p.get("hi") is None:
        n = int(p["n"]) if p.get("n") is not None else 100
        if n < 2:
            raise UsageError(f"grid needs n >= 2 points (got {n})")
        grid = default_wealth_grid(market, prefs, n)
        if p.get("lo") is not None:
            grid = make_grid(p["lo"], grid[-1], n)
    else:
        grid = make_grid(p.get("lo", 0.0) if p.get("lo") is not None else 0.0, p["hi"], p.get("n") or 100)
    rows = policy_rows(market, prefs, grid)
    emit(render_table(POLICY_COLUMNS, rows, args.format, config_echo(market, prefs, {"grid": "x"})), args.out)
    return 0


# --- sweeps ----------------------------------------------------------------

_SWEEP_FIELD = {"Y": "income", "l_work": "l_work", "l_retire": "l_retire"}


def sweep_table(market: MarketParams, prefs: Preferences, param: str, grid, x: float) -> list[list]:
    if param not in _SWEEP_FIELD:
        raise UsageError(f"sweep parameter must be one of Y, l_work, l_retire (got {param!r})")
    for v in grid:
        lw = v if param == "l_work" else prefs.l_work
        lr = v if param == "l_retire" else prefs.l_retire
        if not 0 < lw < lr:
            raise UsageError(f"grid value {param}={v} violates 0 < l_work < l_retire")
    rows = statics_sweep(market, prefs, param, grid, x)
    return [
        [r.param_value, r.y_bar, r.x_bar if math.isfinite(r.x_bar) else None, r.c_pre, r.pi_pre, r.c_post, r.pi_post]
        for r in rows
    ]


def run_sweep(args, p) -> int:
    market, prefs = build_model(p)
    if p.get("param") is None or p.get("lo") is None or p.get("hi") is None:
        raise UsageError("sweep needs --param, --lo and --hi")
    grid = make_grid(p["lo"], p["hi"], p.get("n") or 20)
    rows = sweep_table(market, prefs, p["param"], grid, p["wealth"])
    cfg = config_echo(market, prefs, {"grid": p["param"], "wealth": p["wealth"]})
    emit(render_table(SWEEP_COLUMNS, rows, args.format, cfg), args.out)
    return 0


# --- simulate --------------------------------------------------------------


def sim_config(p: dict, args) -> SimConfig:
    seed = seed_from_env(int(p["seed"]) if p.get("seed") is not None else 42)
    return SimConfig(
        n_paths=int(p["paths"]) if p.get("paths") is not None else 100_000,
        dt=float(p["dt"]) if p.get("dt") is not None else 0.01,
        horizon=float(p["horizon"]) if p.get("horizon") is not None else 200.0,
        seed=seed,
        antithetic=not args.no_antithetic,
        richardson=not args.no_richardson,
    )


def run_simulate(args, p) -> int:
    market, prefs = build_model(p)
    try:
        cfg = sim_config(p, args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sol = solve(market, prefs)
    report = run_verification(sol, cfg, wealth=p["wealth"])
    if args.format == "json":
        checks = []
        for c in report.checks:
            item = {"name": c.name, "closed_form": c.closed_form, "passed": c.passed, "detail": c.detail}
            if c.estimate is not None:
                item["estimate"] = asdict(c.estimate)
                item["interval"] = list(c.estimate.interval)
            checks.append(item)
        body = {
            "config": config_echo(market, prefs, {"sim": asdict(cfg), "wealth": p["wealth"]}),
            "checks": checks,
            "passed": report.passed,
        }
        emit(json.dumps(body, indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("check", "closed_form", "mean", "stderr", "lo", "hi", "passed", "note"))
        for c in report.checks:
            e = c.estimate
            lo, hi = e.interval if e is not None else (None, None)
            note = "; ".join(s for s in (c.detail, e.warning if e else None) if s)
            writer.writerow(
                (c.name, fmt(c.closed_form), fmt(e.mean if e else None), fmt(e.stderr if e else None),
                 fmt(lo), fmt(hi), "PASS" if c.passed else "FAIL", note)
            )  # fmt: skip
        emit(buf.getvalue(), args.out)
    return 0 if report.passed else 1


# --- figures ---------------------------------------------------------------


def figure_datasets(market: MarketParams, prefs: Preferences, n_sweep: int = 20, n_wealth: int = 100):
    """``{name: (columns, rows, config)}`` for the five figure datasets."""
    out = {}
    x = 1.0
    for name, (param, lo, hi, changes) in FIGURE_SWEEPS.items():
        pr = prefs.replace(**changes)
        grid = np.linspace(lo, hi, n_sweep)
        out[name] = (SWEEP_COLUMNS, sweep_table(market, pr, param, grid, x),
                     config_echo(market, pr, {"grid": param, "wealth": x}))  # fmt: skip
    rows = []
    for alpha in FIGURE4_ALPHAS:
        pr = prefs.replace(alpha=alpha, **FIGURE4_BASE)
        k = no_retirement_threshold(pr)
        grid = np.linspace(0.01 * k, 0.99 * k, n_sweep)
        rows += [[alpha] + row for row in sweep_table(market, pr, "Y", grid, x)]
    cfg4 = config_echo(market, prefs.replace(**FIGURE4_BASE), {"grid": "Y", "wealth": x, "alpha": list(FIGURE4_ALPHAS)})
    out["figure4"] = (("alpha",) + SWEEP_COLUMNS, rows, cfg4)
    for name, changes in FIGURE_POLICIES.items():
        pr = prefs.replace(**changes)
        grid = default_wealth_grid(market, pr, n_wealth)
        out[name] = (POLICY_COLUMNS, policy_rows(market, pr, grid), config_echo(market, pr, {"grid": "x"}))
    return out


def run_figures(args, p) -> int:
    market, prefs = build_model(p)
    outdir = Path(args.out or "figures")
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {outdir}: {exc}") from exc
    ext = "json" if args.format == "json" else "csv"
    for name, (cols, rows, cfg) in sorted(figure_datasets(market, prefs).items()):
        emit(render_table(cols, rows, args.format, cfg), str(outdir / f"{name}.{ext}"))
    return 0


# --- parser ----------------------------------------------------------------


def _add_common(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("model parameters")
    g.add_argument("--beta", type=float)
    g.add_argument("--r", type=float)
    g.add_argument("--mu", type=float)
    g.add_argument("--sigma", type=float)
    g.add_argument("--gamma", type=float, help="effective risk aversion alpha*gamma_star (default 3)")
    g.add_argument("--gamma-star", dest="gamma_star", type=float, help="raw risk aversion; excludes --gamma")
    g.add_argument("--alpha", type=float)
    g.add_argument("--l-work", dest="l_work", type=float)
    g.add_argument("--l-retire", dest="l_retire", type=float)
    g.add_argument("--income", type=float)
    g.add_argument("--wealth", type=float, help="wealth level for sweeps and the budget check")
    sp.add_argument("--config", help="flat key=value file; flags override it")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--out", help="output file (directory for figures); stdout if omitted")


def _add_grid(sp: argparse.ArgumentParser, params) -> None:
    sp.add_argument("--param", choices=params)
    sp.add_argument("--lo", type=float)
    sp.add_argument("--hi", type=float)
    sp.add_argument("--n", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cara-retire", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("solve", help="retirement trigger, regime and coefficients")
    _add_common(sp)
    sp = sub.add_parser("policy", help="consumption and portfolio over a wealth grid")
    _add_common(sp)
    _add_grid(sp, ("x",))
    sp = sub.add_parser("sweep", help="comparative statics along a parameter grid")
    _add_common(sp)
    _add_grid(sp, ("Y", "l_work", "l_retire"))
    sp = sub.add_parser("simulate", help="Monte Carlo check of the closed forms")
    _add_common(sp)
    sp.add_argument("--paths", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--seed", type=int, help="overridden by CARA_RETIRE_SEED")
    sp.add_argument("--no-antithetic", action="store_true")
    sp.add_argument("--no-richardson", action="store_true", help="skip the dt/2 companion run")
    sp = sub.add_parser("figures", help="write the five figure datasets into --out (a directory)")
    _add_common(sp)
    return parser


COMMANDS = {
    "solve": run_solve,
    "policy": run_policy,
    "sweep": run_sweep,
    "simulate": run_simulate,
    "figures": run_figures,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        params = resolve_params(args)
        return COMMANDS[args.command](args, params)
    except (UsageError, ParameterError, DomainError) as exc:
        print(f"cara-retire {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
