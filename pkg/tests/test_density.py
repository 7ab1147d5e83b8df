import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from driftlab.density import (
    GaussianMixture,
    GridDensity1D,
    SmoothedIndicator1D,
    entropy,
    estimate_beta,
    eval_f,
    fisher_information,
    gaussian_expectation,
    grad_log_heat,
    heat_eval,
    hessian_log_heat,
    ou_eval,
    superlevel_intervals,
    tail_probability_exact,
)
from driftlab.errors import DegenerateDensityError, UnsupportedDimensionError

from . import oracles as O

ONE = GaussianMixture.standard()
TRANSLATE = GaussianMixture.translate([1.0])
SCALED = GaussianMixture.scaled(0.5)
MIXTURE = GaussianMixture([0.5, 0.5], [[1.0], [-1.0]], [1.0, 1.0])


def piecewise_quad(g, lo=-30.0, hi=30.0, pieces=600):
    edges = np.linspace(lo, hi, pieces + 1)
    return math.fsum(integrate.quad(g, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0] for a, b in zip(edges, edges[1:]))


def normalization(d):
    return piecewise_quad(lambda x: float(eval_f(d, x)) * stats.norm.pdf(x))


@pytest.fixture(scope="module")
def indicator():
    return SmoothedIndicator1D([(-0.5, 0.25), (1.0, 2.0)], 0.1)


@pytest.fixture(scope="module")
def grid_density():
    # log f = log(1 + 0.5 sin 2x) with a kink-free smooth profile, normalized by the class
    return GridDensity1D.from_function(lambda x: np.log(1 + 0.5 * np.sin(2 * x)), -8, 8, 1601)


class TestEvalF:
    def test_constant(self):
        assert float(eval_f(ONE, 3.7)) == 1.0

    def test_translate(self):
        assert float(eval_f(TRANSLATE, 0.0)) == pytest.approx(O.TRANSLATE_F0, rel=1e-14)

    def test_scaled(self):
        assert float(eval_f(SCALED, 0.0)) == pytest.approx(O.SCALED_F0, rel=1e-14)

    @pytest.mark.parametrize("d", [TRANSLATE, SCALED, MIXTURE])
    def test_mixtures_are_normalized(self, d):
        assert normalization(d) == pytest.approx(1.0, abs=1e-10)

    def test_indicator_normalized(self, indicator):
        assert normalization(indicator) == pytest.approx(1.0, rel=1e-8)

    def test_grid_normalized(self, grid_density):
        assert normalization(grid_density) == pytest.approx(1.0, rel=1e-8)


class TestHeat:
    def test_constant(self):
        assert np.allclose(heat_eval(ONE, 0.4, np.linspace(-3, 3, 7)), 1.0)

    def test_translate(self):
        assert float(heat_eval(TRANSLATE, 0.5, 0.0)) == pytest.approx(O.TRANSLATE_HEAT_HALF_0, rel=1e-13)

    def test_mixture(self):
        assert float(heat_eval(MIXTURE, 0.5, 1.0)) == pytest.approx(O.MIXTURE_HEAT_HALF_1, rel=1e-13)

    def test_time_zero_is_f(self, indicator):
        x = np.linspace(-2, 2, 9)
        assert np.allclose(heat_eval(indicator, 0.0, x), eval_f(indicator, x))

    def test_rejects_time_outside_unit_interval(self):
        with pytest.raises(ValueError):
            heat_eval(TRANSLATE, 1.5, 0.0)

    @pytest.mark.parametrize("s,t", [(0.1, 0.2), (0.3, 0.6), (0.5, 0.5)])
    def test_semigroup(self, s, t):
        d = GaussianMixture([0.3, 0.7], [[0.5], [-1.2]], [0.4, 0.9])
        x = 0.3
        inner = lambda y: float(heat_eval(d, t, y))
        lhs = integrate.quad(lambda z: inner(x + math.sqrt(s) * z) * stats.norm.pdf(z), -12, 12)[0]
        assert lhs == pytest.approx(float(heat_eval(d, s + t, x)), abs=1e-10)

    def test_indicator_against_quadrature(self, indicator):
        t, x = 0.3, 0.4
        direct = integrate.quad(lambda z: float(eval_f(indicator, x + math.sqrt(t) * z)) * stats.norm.pdf(z),
                                -12, 12, limit=200)[0]
        assert float(heat_eval(indicator, t, x)) == pytest.approx(direct, rel=1e-8)

    def test_grid_exact_and_gauss_hermite_agree(self, grid_density):
        gh = GridDensity1D(grid_density.x_min, grid_density.x_max, grid_density.log_values, method="gauss-hermite")
        x = np.linspace(-2, 2, 5)
        assert np.allclose(heat_eval(grid_density, 0.5, x), heat_eval(gh, 0.5, x), rtol=1e-6)


class TestDerivatives:
    def test_constant_gradient_zero(self):
        assert np.allclose(grad_log_heat(ONE, 0.3, np.linspace(-2, 2, 5)), 0.0)

    @pytest.mark.parametrize("t", [0.0, 0.4, 0.9])
    def test_translate_gradient_is_mu(self, t):
        assert np.allclose(grad_log_heat(TRANSLATE, t, np.linspace(-3, 3, 7)), 1.0)

    def test_mixture_gradient_zero_at_origin(self):
        for t in (0.0, 0.5, 0.9):
            assert float(grad_log_heat(MIXTURE, t, 0.0)[0]) == pytest.approx(0.0, abs=1e-15)

    def test_gradient_rejects_t_one(self):
        with pytest.raises(ValueError):
            grad_log_heat(TRANSLATE, 1.0, 0.0)

    def test_translate_hessian_zero(self):
        assert np.allclose(hessian_log_heat(TRANSLATE, 0.5, np.linspace(-3, 3, 7)), 0.0)

    def test_mixture_hessian_at_origin(self):
        assert float(hessian_log_heat(MIXTURE, 0.5, 0.0).ravel()[0]) == pytest.approx(1.0, rel=1e-12)

    def test_mixture_gradient_matches_differences(self):
        d = GaussianMixture([0.2, 0.5, 0.3], [[0.4, -1.0], [1.5, 0.2], [-0.7, 0.9]], [0.3, 1.0, 0.6])
        x = np.array([[0.3, -0.2], [1.1, 0.7]])
        g = d.grad_log_heat(0.35, x)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (d.log_heat(0.35, x + e) - d.log_heat(0.35, x - e)) / (2 * h)
            assert np.allclose(g[:, j], fd, rtol=1e-5, atol=1e-8)

    def test_indicator_analytic_matches_differences(self, indicator):
        x = np.linspace(-1.5, 2.5, 9)
        for t in (0.05, 0.4):
            g = indicator.grad_log_heat(t, x)[:, 0]
            h = 1e-5
            fd = (indicator.log_heat(t, x + h) - indicator.log_heat(t, x - h)) / (2 * h)
            assert np.allclose(g, fd, rtol=1e-5, atol=1e-6)
            H = indicator.hess_log_heat(t, x)[:, 0, 0]
            fd2 = (indicator.grad_log_heat(t, x + h) - indicator.grad_log_heat(t, x - h))[:, 0] / (2 * h)
            assert np.allclose(H, fd2, rtol=1e-4, atol=1e-4)

    def test_floor_guard(self):
        far = GridDensity1D.from_function(lambda x: -50 * x * x, -4, 4, 801)
        with pytest.raises(DegenerateDensityError):
            grad_log_heat(far, 0.0, 30.0)


class TestHessianBound:
    @pytest.mark.parametrize("t", [0.1, 0.3, 0.5, 0.9])
    def test_all_variants(self, t, indicator, grid_density):
        x = np.arange(-6, 6.0001, 0.05)
        for d in (TRANSLATE, SCALED, MIXTURE, indicator, grid_density):
            H = hessian_log_heat(d, t, x).reshape(-1)
            assert H.min() >= -1 / t - 1e-3


class TestOU:
    def test_constant(self):
        assert float(ou_eval(ONE, 0.7, 1.3)) == pytest.approx(1.0)

    def test_time_zero(self):
        assert float(ou_eval(SCALED, 0.0, 0.4)) == pytest.approx(float(eval_f(SCALED, 0.4)), rel=1e-14)

    def test_translate(self):
        assert float(ou_eval(TRANSLATE, math.log(2), 0.0)) == pytest.approx(O.TRANSLATE_OU_LN2_0, rel=1e-13)


class TestEntropyFisher:
    def test_entropy_values(self):
        assert entropy(ONE) == pytest.approx(0.0, abs=1e-15)
        assert entropy(TRANSLATE) == pytest.approx(O.TRANSLATE_ENTROPY, rel=1e-13)
        assert entropy(SCALED) == pytest.approx(O.SCALED_ENTROPY, rel=1e-13)
        assert entropy(MIXTURE) == pytest.approx(O.MIXTURE_ENTROPY, rel=1e-8)

    def test_grid_entropy_against_quadrature(self, grid_density):
        g = lambda x: float(eval_f(grid_density, x)) * float(grid_density.log_f(x)) * stats.norm.pdf(x)
        assert entropy(grid_density) == pytest.approx(piecewise_quad(g), rel=1e-8)

    def test_fisher_values(self):
        assert fisher_information(ONE, 0.5) == pytest.approx(0.0, abs=1e-15)
        for t in (0.0, 0.3, 1.0):
            assert fisher_information(TRANSLATE, t) == pytest.approx(1.0, rel=1e-12)
        assert fisher_information(SCALED, 1.0) == pytest.approx(O.SCALED_FISHER_1, rel=1e-10)
        assert fisher_information(MIXTURE, 1.0) == pytest.approx(O.MIXTURE_FISHER_1, rel=1e-8)

    @pytest.mark.parametrize("d", [SCALED, MIXTURE])
    def test_fisher_monotone(self, d):
        vals = [fisher_information(d, t) for t in np.linspace(0, 1, 6)]
        assert np.all(np.diff(vals) >= -1e-12)

    def test_fisher_integrates_to_twice_entropy(self):
        # E int_0^1 |v_t|^2 dt = 2 H
        total = integrate.quad(lambda t: fisher_information(SCALED, t), 0, 1, epsrel=1e-8)[0]
        assert total == pytest.approx(2 * O.SCALED_ENTROPY, rel=1e-6)

    def test_gaussian_expectation_matches_moments(self):
        assert gaussian_expectation(lambda x: np.sum(x * x, axis=-1), np.zeros(2), 0.5) == pytest.approx(1.0)


class TestBetaAndTails:
    def test_beta(self):
        grid = np.linspace(-3, 3, 61)
        assert estimate_beta(ONE, grid) == pytest.approx(0.0, abs=1e-12)
        assert estimate_beta(TRANSLATE, grid) == pytest.approx(0.0, abs=1e-12)
        assert estimate_beta(SCALED, grid) == pytest.approx(O.SCALED_BETA, rel=1e-12)

    def test_tails(self):
        assert tail_probability_exact(ONE, 1.5) == 0.0
        assert tail_probability_exact(TRANSLATE, math.e) == pytest.approx(O.TRANSLATE_TAIL_E, rel=1e-10)
        assert tail_probability_exact(SCALED, 1.5) == pytest.approx(O.SCALED_TAIL_1_5, rel=1e-10)

    def test_tails_need_one_dimension(self):
        with pytest.raises(UnsupportedDimensionError):
            tail_probability_exact(GaussianMixture.translate([1.0, 0.0]), 2.0)

    def test_superlevel_intervals(self):
        iv = superlevel_intervals(lambda x: -np.asarray(x) ** 2, -1.0)
        assert len(iv) == 1
        assert iv[0][0] == pytest.approx(-1.0, abs=1e-12)
        assert iv[0][1] == pytest.approx(1.0, abs=1e-12)

    def test_endpoint_cdf_matches_mixture(self, grid_density):
        # generic cdf table on a mixture agrees with its closed form
        x = np.linspace(-3, 3, 13)
        table = super(GaussianMixture, MIXTURE).endpoint_cdf(x)
        assert np.allclose(table, MIXTURE.endpoint_cdf(x), atol=1e-7)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(
        st.floats(0.05, 1.0),
        st.floats(-2.0, 2.0),
        st.floats(0.0, 0.95),
        st.floats(-3.0, 3.0),
    )
    def test_mixture_hessian_lower_bound(self, s, m, t, x):
        d = GaussianMixture([0.5, 0.5], [[m], [-m]], [s, 1.0])
        if t == 0:
            return
        assert float(d.hess_log_heat(t, x).ravel()[0]) >= -1 / t - 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.05, 1.0), st.floats(-2.0, 2.0))
    def test_single_component_entropy_closed_form(self, s, m):
        d = GaussianMixture([1.0], [[m]], [s])
        expected = 0.5 * (s + m * m - 1 - math.log(s))
        assert entropy(d) == pytest.approx(expected, rel=1e-12, abs=1e-14)
        assert entropy(d) >= 0

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 0.9), st.floats(-3, 3))
    def test_heat_preserves_mass_and_positivity(self, t, x):
        assert float(heat_eval(SCALED, t, x)) > 0
