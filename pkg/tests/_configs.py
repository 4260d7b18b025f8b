"""Shared parameter sets and random draws for the test suite."""

from __future__ import annotations

import numpy as np

from cara_retire.market import MarketParams, Preferences, no_retirement_threshold


def p0_market() -> MarketParams:
    return MarketParams(r=0.01, mu=0.07, sigma=0.2, beta=0.03)


def p0_prefs(**changes) -> Preferences:
    base = Preferences.from_gamma(3.0, 0.4, 0.3, 0.5, 0.1)
    return base.replace(**changes) if changes else base


def random_market(rng: np.random.Generator) -> MarketParams:
    r = rng.uniform(0.005, 0.05)
    sigma = rng.uniform(0.1, 0.4)
    theta = rng.uniform(0.1, 0.6)
    return MarketParams(r=r, mu=r + theta * sigma, sigma=sigma, beta=rng.uniform(0.01, 0.08))


def random_prefs(rng: np.random.Generator, income_fraction=None) -> Preferences:
    """Preferences with income a random fraction of the no-retirement threshold."""
    l_work = rng.uniform(0.1, 0.5)
    l_retire = l_work + rng.uniform(0.05, 0.5)
    p = Preferences.from_gamma(rng.uniform(1.0, 5.0), rng.uniform(0.2, 0.8), l_work, l_retire, 1.0)
    frac = rng.uniform(0.02, 0.98) if income_fraction is None else income_fraction
    return p.replace(income=frac * no_retirement_threshold(p))


def random_config(rng: np.random.Generator, income_fraction=None) -> tuple[MarketParams, Preferences]:
    return random_market(rng), random_prefs(rng, income_fraction)
