from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ihpdispatch.market import (
    closed_form_equilibrium,
    cobb_douglas,
    cobb_douglas_gradient,
    cobb_douglas_hessian,
    iterate_equilibrium,
    optimal_demand,
    positive_root,
    tlou_price,
)


def tariff(base=0.1, slope=0.01, base_heat=None):
    return SimpleNamespace(base_power=[base], base_heat=[base if base_heat is None else base_heat], slope=slope)


def consumer(alpha, budget):
    return SimpleNamespace(alpha=alpha, budget=budget)


def numeric_grad(l, h, a, step=1e-6):
    return np.array([
        (cobb_douglas(l + step * l, h, a) - cobb_douglas(l - step * l, h, a)) / (2 * step * l),
        (cobb_douglas(l, h + step * h, a) - cobb_douglas(l, h - step * h, a)) / (2 * step * h),
    ])


class TestPricing:
    def test_formula(self):
        assert tlou_price(tariff(), 10.0, 0) == pytest.approx(0.2)

    def test_flat_and_zero_demand(self):
        assert tlou_price(tariff(slope=0.0), 123.0, 0) == 0.1
        assert tlou_price(tariff(), 0.0, 0) == 0.1
        assert tlou_price(tariff(base_heat=0.3), 0.0, 0, kind="heat") == 0.3

    def test_negative_demand(self):
        with pytest.raises(ValueError):
            tlou_price(tariff(), -1.0, 0)


class TestDemand:
    def test_examples(self):
        assert optimal_demand(consumer(0.3, 1.0), (1.0, 1.0)) == pytest.approx((0.3, 0.7))
        assert optimal_demand(consumer(0.5, 2.0), (2.0, 1.0)) == pytest.approx((0.5, 1.0))

    def test_zero_price(self):
        with pytest.raises(ValueError):
            optimal_demand(consumer(0.5, 1.0), (0.0, 1.0))

    @given(st.floats(0.01, 0.99), st.floats(0.1, 1e3), st.floats(1e-3, 1e2), st.floats(1e-3, 1e2))
    def test_budget_binds(self, a, budget, lp, lh):
        l, h = optimal_demand(consumer(a, budget), (lp, lh))
        assert lp * l + lh * h == pytest.approx(budget, rel=1e-12)

    @given(st.floats(0.05, 0.95), st.floats(1.0, 100.0), st.floats(0.1, 5.0), st.floats(0.1, 5.0))
    def test_response_maximises_utility_on_budget_line(self, a, budget, lp, lh):
        l, h = optimal_demand(consumer(a, budget), (lp, lh))
        best = cobb_douglas(l, h, a)
        for s in np.linspace(0.01, 0.99, 25):
            alt_l = s * budget / lp
            alt_h = (budget - lp * alt_l) / lh
            assert cobb_douglas(alt_l, alt_h, a) <= best * (1 + 1e-12)


class TestEquilibrium:
    def test_worked_instance(self):
        # 0.01 l^2 + 0.1 l - 30 = 0 -> l = 50, price 0.6, 30 / 0.6 = 50
        l, _ = closed_form_equilibrium(consumer(0.5, 60.0), tariff(), 0)
        assert l == pytest.approx(50.0, abs=1e-12)
        out = iterate_equilibrium(0.5, 60.0, 0.1, 0.1, 0.01)
        assert out.converged
        assert float(out.demands.power) == pytest.approx(50.0, abs=1e-6)
        assert float(out.prices.power) == pytest.approx(0.6, abs=1e-7)

    def test_flat_tariff_one_iteration(self):
        out = iterate_equilibrium(0.3, 100.0, 0.2, 0.5, 0.0)
        assert out.iterations == 1 and out.converged
        assert float(out.demands.power) == pytest.approx(0.3 * 100 / 0.2)
        assert closed_form_equilibrium(consumer(0.3, 100.0), tariff(0.2, 0.0), 0)[0] == pytest.approx(150.0)

    def test_degenerate_tariff(self):
        with pytest.raises(ValueError):
            positive_root(0.0, 0.0, 1.0)

    def test_trace_and_csv(self, tmp_path):
        out = iterate_equilibrium(np.full((3, 4), 0.3), 50.0, 0.1, 0.2, 0.01)
        assert len(out.trace) == out.iterations == len(out.residuals)
        assert np.all(np.isfinite(out.residuals)) and out.residuals[-1] < 1e-6
        path = tmp_path / "trace.csv"
        out.write_trace(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,residual,mean_price_p,mean_price_h"
        assert len(lines) == out.iterations + 1

    def test_unconverged_is_reported_not_raised(self):
        out = iterate_equilibrium(0.5, 60.0, 0.1, 0.1, 0.01, max_iter=2)
        assert not out.converged and out.iterations == 2

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-4, 10.0), st.floats(1e-3, 10.0), st.floats(0.05, 0.95), st.floats(0.1, 1e3))
    def test_matches_closed_form(self, k, lam0, a, budget):
        out = iterate_equilibrium(a, budget, lam0, 2 * lam0, k)
        assert out.converged and out.iterations <= 200
        assert float(out.demands.power) == pytest.approx(float(positive_root(k, lam0, a * budget)), abs=1e-6)
        assert float(out.demands.heat) == pytest.approx(float(positive_root(k, 2 * lam0, (1 - a) * budget)), abs=1e-6)
        assert out.budget_error <= 1e-12 * max(1.0, budget)

    @pytest.mark.parametrize("scale", [0.1, 10.0])
    def test_unique_regardless_of_start(self, scale):
        l_star = float(positive_root(0.01, 0.1, 30.0))
        h_star = float(positive_root(0.01, 0.1, 30.0))
        out = iterate_equilibrium(0.5, 60.0, 0.1, 0.1, 0.01, init=(scale * l_star, scale * h_star))
        assert float(out.demands.power) == pytest.approx(l_star, abs=1e-6)

    def test_comparative_statics_in_alpha(self):
        totals = []
        for a in np.linspace(0.1, 0.9, 9):
            out = iterate_equilibrium(np.full((5, 24), a), 40.0, 0.3, 0.4, 0.01)
            totals.append((out.demands.total_power, out.demands.total_heat))
        power, heat = np.array(totals).T
        assert np.all(np.diff(power) > 0)
        assert np.all(np.diff(heat) < 0)


class TestCobbDouglas:
    @settings(max_examples=200)
    @given(st.floats(0.05, 50.0), st.floats(0.05, 50.0), st.floats(0.02, 0.98))
    def test_gradient_positive_and_matches_numeric(self, l, h, a):
        g = cobb_douglas_gradient(l, h, a)
        assert np.all(g > 0)
        assert g == pytest.approx(numeric_grad(l, h, a), rel=1e-6)

    @settings(max_examples=200)
    @given(st.floats(0.05, 50.0), st.floats(0.05, 50.0), st.floats(0.02, 0.98))
    def test_hessian_singular_and_concave(self, l, h, a):
        H = cobb_douglas_hessian(l, h, a)
        assert H[0, 0] < 0 and H[1, 1] < 0
        scale = abs(H[0, 0] * H[1, 1]) + H[0, 1] ** 2
        assert abs(np.linalg.det(H)) <= 1e-9 * scale
        assert np.all(np.linalg.eigvalsh(H) <= 1e-12 * np.sqrt(scale))
