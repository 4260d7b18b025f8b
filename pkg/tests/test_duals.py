import numpy as np
import pytest

from _configs import p0_market, p0_prefs, random_config
from cara_retire.boundary import solve_boundary
from cara_retire.duals import (
    merton_dual,
    ode_residual,
    post_dual,
    pre_coefficients,
    pre_dual,
    pre_value,
    stationary_value,
)
from cara_retire.errors import DomainError
from cara_retire.market import derive_roots, dual_utility


def relative_ode_residual(dual, y, utility, market):
    """Residual over the largest term of the equation, pointwise."""
    v, d1, d2 = dual.evaluate(y)
    vv = v - dual.annuity * y
    dd = d1 - dual.annuity
    th = market.theta
    terms = np.abs(np.vstack([0.5 * th**2 * y**2 * d2, (market.beta - market.r) * y * dd, market.beta * vv, utility]))
    return np.abs(ode_residual(dual, y, utility, market)) / terms.max(axis=0)


def central_fd(f, y, rel=1e-5):
    h = y * rel
    return (f(y + h) - f(y - h)) / (2 * h)


def away_from(y, points, rel=1e-4):
    keep = np.ones_like(y, dtype=bool)
    for p in points:
        keep &= np.abs(y / p - 1.0) > rel
    return y[keep]


class TestStationaryDuals:
    @pytest.mark.parametrize("kind", ["post", "merton"])
    def test_ode_on_log_grid(self, kind):
        m, p = p0_market(), p0_prefs()
        dual = post_dual(m, p) if kind == "post" else merton_dual(m, p)
        l = p.l_retire if kind == "post" else p.l_work
        y = np.geomspace(dual.leisure_factor_A / 100, dual.leisure_factor_A * 100, 200)
        res = relative_ode_residual(dual, y, dual_utility(p, y, l), m)
        assert res.max() <= 1e-8

    @pytest.mark.parametrize("seed", range(5))
    def test_ode_random_configs(self, seed):
        m, p = random_config(np.random.default_rng(seed))
        for dual, l in ((post_dual(m, p), p.l_retire), (merton_dual(m, p), p.l_work)):
            y = np.geomspace(dual.leisure_factor_A / 100, dual.leisure_factor_A * 100, 200)
            assert relative_ode_residual(dual, y, dual_utility(p, y, l), m).max() <= 1e-8

    @pytest.mark.parametrize("kind", ["post", "merton"])
    def test_derivatives_against_finite_differences(self, kind):
        m, p = p0_market(), p0_prefs()
        dual = post_dual(m, p) if kind == "post" else merton_dual(m, p)
        y = np.geomspace(dual.leisure_factor_A / 50, dual.leisure_factor_A * 50, 200)
        _, d1, d2 = dual.evaluate(y)
        fd1 = central_fd(lambda z: dual.evaluate(z)[0], y)
        fd2 = central_fd(lambda z: dual.evaluate(z)[1], y)
        assert np.allclose(fd1, d1, rtol=1e-6, atol=0)
        assert np.allclose(fd2, d2, rtol=1e-6, atol=0)

    def test_kink_is_c2(self):
        m, p = p0_market(), p0_prefs()
        dual = post_dual(m, p)
        a = dual.leisure_factor_A
        lo = np.array(dual.evaluate(a * (1 - 1e-12)))
        hi = np.array(dual.evaluate(a * (1 + 1e-12)))
        assert np.allclose(lo, hi, rtol=1e-9)

    def test_post_value_negative_and_convex(self):
        m, p = p0_market(), p0_prefs()
        y = np.geomspace(1e-6, 1e3, 400)
        v, _, d2 = post_dual(m, p).evaluate(y)
        assert np.all(v < 0)
        assert np.all(d2 > 0)

    def test_p0_post_marginal_at_kink(self):
        # rounding the intermediate terms gives about -1.7085; the exact value is K_minus * m_minus
        m, p = p0_market(), p0_prefs()
        dual = post_dual(m, p)
        roots = derive_roots(m)
        expect = dual.k_minus * roots.m_minus
        assert dual.evaluate(p.a_retire)[1] == pytest.approx(expect, rel=1e-14)
        assert expect == pytest.approx(-1.71009034, abs=1e-8)

    def test_stationary_value_alias(self):
        d = post_dual(p0_market(), p0_prefs())
        assert stationary_value(d, 0.1) == d.evaluate(0.1)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            post_dual(p0_market(), p0_prefs()).evaluate(np.array([0.1, 0.0]))


class TestPreDual:
    def test_printed_coefficients_at_p0(self):
        m, p = p0_market(), p0_prefs()
        fb = solve_boundary(m, p)
        c1, c2, c3 = pre_coefficients(m, p, fb.y_bar)
        assert c1 == pytest.approx(-231.43596577, rel=1e-9)
        assert c2 == pytest.approx(0.0867856677, rel=1e-8)
        assert c3 == pytest.approx(0.4311448245, rel=1e-8)

    def test_value_matching_at_trigger(self):
        m, p = p0_market(), p0_prefs()
        fb = solve_boundary(m, p)
        pd = pre_dual(m, p, fb.y_bar)
        right = pd.evaluate(fb.y_bar * (1 + 1e-13))[0]
        assert right == pytest.approx(p.income / m.r * fb.y_bar, rel=1e-10)
        assert pd.evaluate(fb.y_bar)[0] == pytest.approx(p.income / m.r * fb.y_bar, rel=1e-15)

    def test_extension_above_work_kink_is_value_matched(self):
        m = p0_market()
        p = p0_prefs(income=0.01)  # trigger above A(l_work)
        fb = solve_boundary(m, p)
        assert fb.y_bar > p.a_work
        pd = pre_dual(m, p, fb.y_bar)
        right = pd.evaluate(fb.y_bar * (1 + 1e-13))[0]
        assert right == pytest.approx(p.income / m.r * fb.y_bar, rel=1e-10)

    def test_ode_on_continuation_region(self):
        m, p = p0_market(), p0_prefs()
        fb = solve_boundary(m, p)
        pd = pre_dual(m, p, fb.y_bar)
        y = np.geomspace(fb.y_bar * 1.001, 100 * p.a_work, 200)
        res = relative_ode_residual(pd, y, dual_utility(p, y, p.l_work), m)
        assert res.max() <= 1e-8

    def test_derivatives_against_finite_differences(self):
        m, p = p0_market(), p0_prefs()
        fb = solve_boundary(m, p)
        pd = pre_dual(m, p, fb.y_bar)
        y = away_from(np.geomspace(fb.y_bar * 1.01, 50 * p.a_work, 200), [p.a_work])
        _, d1, d2 = pd.evaluate(y)
        assert np.allclose(central_fd(lambda z: pd.evaluate(z)[0], y), d1, rtol=1e-6, atol=0)
        assert np.allclose(central_fd(lambda z: pd.evaluate(z)[1], y), d2, rtol=1e-6, atol=0)

    def test_dominates_never_stopping(self):
        # stopping never is admissible, so the stopped dual is at least the Merton dual
        m, p = p0_market(), p0_prefs()
        fb = solve_boundary(m, p)
        pd, md = pre_dual(m, p, fb.y_bar), merton_dual(m, p)
        y = np.geomspace(fb.y_bar / 10, 100.0, 300)
        assert np.all(pd.evaluate(y)[0] >= md.evaluate(y)[0] - 1e-12)

    def test_below_trigger_is_annuity_line(self):
        m, p = p0_market(), p0_prefs()
        fb = solve_boundary(m, p)
        y = np.linspace(fb.y_bar / 10, fb.y_bar, 7)
        v, d1, d2 = pre_value(pre_dual(m, p, fb.y_bar), y)
        assert np.allclose(v, 10.0 * y, rtol=1e-15)
        assert np.all(d1 == 10.0) and np.all(d2 == 0.0)

    def test_no_retirement_reduces_to_merton(self):
        m = p0_market()
        p = p0_prefs(income=0.35)
        pd, md = pre_dual(m, p, 0.0), merton_dual(m, p)
        y = np.geomspace(1e-3, 10.0, 50)
        assert np.allclose(pd.evaluate(y)[0], md.evaluate(y)[0], rtol=1e-15)

    def test_coefficients_need_positive_trigger(self):
        with pytest.raises(DomainError, match="y_bar must be > 0"):
            pre_coefficients(p0_market(), p0_prefs(), 0.0)
