import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from driftlab.cube import (
    CubeFunction,
    change_of_measure_mean,
    coordinate_average,
    cube_tail_scan,
    discrete_derivative,
    drift_table,
    endpoint_law,
    entropy_chain,
    entropy_mu,
    exact_sample,
    lsi_gap,
    martingale_tables,
    modified_lsi_gap,
    noise_operator,
    path_tables,
    perturbation_moments,
    perturbed_sample,
    sample_many,
    sqrt_inequality_slack,
    total_variation,
)
from driftlab.errors import ConfigError, DegenerateDensityError

from . import oracles as O

TWO = CubeFunction.from_values([0.5, 1.5])  # f(-1) = 0.5, f(1) = 1.5
RANDOM8 = [CubeFunction.random_positive(8, s) for s in range(100)]


def brute_derivative(f, i):
    pts = f.points()
    out = np.empty(f.size)
    for k, x in enumerate(pts):
        hi, lo = x.copy(), x.copy()
        hi[i - 1], lo[i - 1] = 1, -1
        out[k] = 0.5 * (f.values[f.index_of(hi)[0]] - f.values[f.index_of(lo)[0]])
    return out


class TestCubeFunction:
    def test_normalized(self):
        f = CubeFunction(3, np.arange(1, 9, dtype=float))
        assert f.values.mean() == pytest.approx(1, abs=1e-12)

    def test_bit_convention(self):
        f = CubeFunction.constant(3)
        assert np.array_equal(f.points()[5], [1, -1, 1])
        assert f.index_of([1, -1, 1])[0] == 5

    def test_rejects(self):
        with pytest.raises(ConfigError):
            CubeFunction(21, np.ones(2))
        with pytest.raises(ConfigError):
            CubeFunction(1, [1.0, -1.0])
        with pytest.raises(DegenerateDensityError):
            CubeFunction(1, [0.0, 0.0])

    def test_csv_roundtrip(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("index,value\n2,3\n0,1\n3,4\n1,2\n")
        f = CubeFunction.from_csv(p)
        assert f.n == 2
        assert np.allclose(f.values, np.array([1, 2, 3, 4]) / 2.5)

    def test_csv_missing_index(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("index,value\n0,1\n0,2\n")
        with pytest.raises(ConfigError):
            CubeFunction.from_csv(p)

    def test_generators(self):
        assert CubeFunction.indicator(4, members=[0, 3]).values.max() == 8
        prod = CubeFunction.product(2, [0.5, -0.2])
        x = prod.points()
        assert np.allclose(prod.values, (1 + 0.5 * x[:, 0]) * (1 - 0.2 * x[:, 1]))


class TestDerivative:
    def test_constant(self):
        assert np.all(discrete_derivative(CubeFunction.constant(3), 2) == 0)

    def test_one_dimensional(self):
        assert np.allclose(discrete_derivative(TWO, 1), 0.5)

    def test_linear(self):
        f = CubeFunction.constant(2)
        f = CubeFunction(2, 1 + 0.5 * f.points()[:, 0])
        assert np.allclose(discrete_derivative(f, 1), 0.5)
        assert np.allclose(discrete_derivative(f, 2), 0.0)

    def test_matches_brute_force(self):
        f = CubeFunction.random_positive(4, 7)
        for i in range(1, 5):
            assert np.allclose(discrete_derivative(f, i), brute_derivative(f, i), atol=1e-14)

    def test_index_range(self):
        with pytest.raises(IndexError):
            discrete_derivative(TWO, 2)

    def test_average_is_free_of_coordinate(self):
        f = CubeFunction.random_positive(3, 1)
        fi = coordinate_average(f, 2)
        assert np.allclose(discrete_derivative(CubeFunction(3, fi), 2), 0)


class TestSampler:
    def test_constant(self):
        tr = exact_sample(CubeFunction.constant(5), 1)
        assert np.all(tr.drift == 0) and tr.M[-1] == 1

    def test_one_dimensional(self):
        v, _ = drift_table(TWO, 0)
        assert v[0] == pytest.approx(0.5)
        assert endpoint_law(TWO)[1] == pytest.approx(0.75, abs=1e-15)

    def test_product_closes(self):
        for seed in range(20):
            tr = exact_sample(TWO, seed)
            assert tr.M[-1] == pytest.approx(TWO.values[TWO.index_of(tr.bits)[0]], abs=1e-15)

    def test_trace_invariants(self):
        f = RANDOM8[3]
        for k in range(50):
            tr = exact_sample(f, 11, k)
            assert np.all(np.abs(tr.drift) <= 1)
            assert np.allclose(tr.M[1:], np.cumprod(1 + tr.drift * tr.bits), rtol=1e-13)
            assert abs(tr.M[-1] - f.values[f.index_of(tr.bits)[0]]) < 1e-12

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_exact_law(self, n):
        for s in range(10):
            f = CubeFunction.random_positive(n, s)
            assert np.max(np.abs(endpoint_law(f) - f.values / f.size)) < 1e-12

    def test_empirical_law(self):
        f = CubeFunction.random_positive(4, 2)
        idx = sample_many(f, 200_000, 5)
        emp = np.bincount(idx, minlength=16) / idx.size
        assert total_variation(emp, f.values / 16) < 0.01

    def test_sample_many_matches_single_draws_law(self):
        f = CubeFunction.indicator(3, members=[1, 6])
        idx = sample_many(f, 5000, 0)
        assert set(np.unique(idx)) <= {1, 6}

    def test_zeros_skip_unreachable_prefixes(self):
        f = CubeFunction.indicator(3, members=[0, 7])
        pt = path_tables(f)
        assert pt.degenerate > 0
        assert np.allclose(pt.law, f.values / 8)


class TestIdentities:
    def test_entropy_example(self):
        assert entropy_mu(TWO) == pytest.approx(O.CUBE_ENTROPY, rel=1e-13)
        assert entropy_mu(CubeFunction.constant(4)) == 0

    def test_entropy_tensorizes(self):
        prod = CubeFunction.product(2, [0.3, -0.6])
        a = entropy_mu(CubeFunction.from_values([0.7, 1.3]))
        b = entropy_mu(CubeFunction.from_values([1.6, 0.4]))
        assert entropy_mu(prod) == pytest.approx(a + b, rel=1e-13)

    @pytest.mark.parametrize("f", RANDOM8[:20] + [CubeFunction.indicator(6, 3)], ids=lambda f: f"n{f.n}")
    def test_chain_and_change_of_measure(self, f):
        assert entropy_chain(f) == pytest.approx(entropy_mu(f), abs=1e-12)
        assert change_of_measure_mean(f) == pytest.approx(np.mean(f.values > 0), abs=1e-12)
        pt = path_tables(f)
        ok = pt.law > 0
        assert np.max(np.abs(pt.M[ok] - f.values[ok])) < 1e-12


class TestLogSobolev:
    def test_modified_example(self):
        assert modified_lsi_gap(TWO) == pytest.approx(O.CUBE_MLSI_RHS - O.CUBE_ENTROPY, rel=1e-12)
        assert modified_lsi_gap(TWO) == pytest.approx(0.20252, abs=1e-5)

    def test_classical_example(self):
        assert lsi_gap(TWO) == pytest.approx(O.CUBE_LSI_RHS - O.CUBE_ENTROPY, rel=1e-10)
        assert lsi_gap(TWO) == pytest.approx(0.003163, abs=1e-6)

    def test_constant(self):
        f = CubeFunction.constant(8)
        assert modified_lsi_gap(f) == 0 and lsi_gap(f) == 0

    def test_random_positive(self):
        for f in RANDOM8:
            assert modified_lsi_gap(f) >= -1e-10
            assert lsi_gap(f) >= -1e-10
            assert lsi_gap(f, 4.0) >= lsi_gap(f)

    def test_modified_with_zeros(self):
        f = CubeFunction.indicator(2, members=[0, 1, 2, 3])
        assert modified_lsi_gap(f, return_zeros=True) == (0.0, 0)
        with pytest.raises(DegenerateDensityError):
            modified_lsi_gap(CubeFunction.indicator(2, members=[0]))

    def test_classical_with_zeros(self):
        assert lsi_gap(CubeFunction.indicator(5, 4, p=0.3)) >= -1e-10

    def test_sqrt_inequality_grid(self):
        g = np.linspace(0.1, 10, 100)
        a, b = np.meshgrid(g, g)
        assert sqrt_inequality_slack(a, b).min() >= -1e-12


class TestMartingales:
    def test_constant(self):
        mt = martingale_tables(CubeFunction.constant(3))
        assert all(np.all(v == 0) for row in mt.v for v in row)

    def test_one_dimensional(self):
        mt = martingale_tables(TWO)
        assert mt.v[0][0][0] == pytest.approx(0.5)
        # endpoints: d f / f at w = -1 and w = +1
        assert np.allclose(mt.v[0][1], [1.0, 1 / 3])
        assert 0.25 * 1.0 + 0.75 / 3 == pytest.approx(0.5)
        assert mt.residual < 1e-15

    @pytest.mark.parametrize("seed", range(5))
    def test_random(self, seed):
        mt = martingale_tables(CubeFunction.random_positive(6, seed))
        assert mt.residual < 1e-12
        assert mt.residual_hat < 1e-12
        assert mt.diagonal_gap < 1e-12
        assert mt.l2_monotone


class TestNoiseOperator:
    def test_identity_at_zero(self):
        f = RANDOM8[0]
        assert np.allclose(noise_operator(f, 0.0).values, f.values, atol=1e-14)

    def test_constant(self):
        assert np.allclose(noise_operator(CubeFunction.constant(4), 0.8).values, 1)

    def test_one_dimensional(self):
        g = noise_operator(TWO, math.log(2)).values
        assert g[1] == pytest.approx(1.25) and g[0] == pytest.approx(0.75)

    def test_large_time(self):
        assert np.allclose(noise_operator(RANDOM8[1], 60.0).values, 1, atol=1e-12)

    def test_semigroup(self):
        f = CubeFunction.random_positive(5, 4)
        a = noise_operator(noise_operator(f, 0.3), 0.5).values
        assert np.allclose(a, noise_operator(f, 0.8).values, atol=1e-13)

    def test_character_eigenvalue(self):
        # the character x_1 x_3 is scaled by e^{-2t}
        x = CubeFunction.constant(3).points()
        f = CubeFunction(3, 1 + 0.5 * x[:, 0] * x[:, 2])
        g = noise_operator(f, 0.4).values
        assert np.allclose(g, 1 + 0.5 * math.exp(-0.8) * x[:, 0] * x[:, 2])

    def test_tail_scan(self):
        s = cube_tail_scan(TWO, math.log(2), [1.2])
        assert s.tails[0] == 0.5
        assert np.all(cube_tail_scan(CubeFunction.constant(3), 1.0, [1.1, 2]).tails == 0)
        assert np.all(cube_tail_scan(RANDOM8[2], 60.0, [1.001, 2]).tails == 0)


class TestPerturbation:
    def test_zero_delta(self):
        w, x = perturbed_sample(RANDOM8[0], 0.0, 3)
        assert np.array_equal(w, x)

    def test_moments_by_enumeration(self):
        # brute-force the exact law of X - W for a small cube
        f = CubeFunction.random_positive(3, 9)
        delta = 0.4
        mean = np.zeros(3)
        second = 0.0
        law = endpoint_law(f)
        pts = f.points()
        for k, w in enumerate(pts):
            for t in range(3):
                v = drift_table(f, t)[0][k & ((1 << t) - 1)]
                diff = np.sign(v) - w[t]
                mean[t] += law[k] * delta * abs(v) * diff
                second += law[k] * delta * abs(v) * diff**2
        m = perturbation_moments(f, delta)
        assert m["mean_sq"] == pytest.approx(np.sum(mean**2), rel=1e-12)
        assert m["second"] == pytest.approx(second, rel=1e-12)

    def test_empirical_second_moment(self):
        f = CubeFunction.random_positive(4, 1)
        d = np.array([np.sum((lambda wx: (wx[1] - wx[0]) ** 2)(perturbed_sample(f, 0.5, 2, k))) for k in range(20000)])
        m = perturbation_moments(f, 0.5)
        assert abs(d.mean() - m["second"]) < 4 * d.std() / math.sqrt(d.size)

    def test_delta_range(self):
        with pytest.raises(ValueError):
            perturbed_sample(TWO, 1.5, 0)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.sampled_from([2, 4, 8, 16, 32]), elements=st.floats(1e-3, 50.0)))
    def test_exact_identities(self, values):
        f = CubeFunction.from_values(values)
        assert np.max(np.abs(endpoint_law(f) - f.values / f.size)) < 1e-12
        assert entropy_chain(f) == pytest.approx(entropy_mu(f), abs=1e-10)
        assert modified_lsi_gap(f) >= -1e-10
        assert lsi_gap(f) >= -1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 1e3), st.floats(0.0, 1e3))
    def test_sqrt_inequality(self, a, b):
        assert sqrt_inequality_slack(a, b) >= -1e-9 * (1 + a + b) ** 2

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10**6), st.floats(0.0, 5.0))
    def test_noise_preserves_mean_and_positivity(self, n, seed, t):
        f = CubeFunction.random_positive(n, seed)
        g = noise_operator(f, t).values
        assert g.mean() == pytest.approx(1.0, abs=1e-12)
        assert g.min() >= f.values.min() - 1e-12
