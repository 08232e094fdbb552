"""Latent-field conditioning and Gaussian-mixture data products."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

import icegrid as ig
from icegrid import AlignedDataset, CovarianceModel, HyperParams, ImputationGrid
from icegrid.errors import DataError
from icegrid.imputation import (
    MixtureMarginal,
    _mixture_quantile_array,
    augment_times,
    condition,
    mixture_marginals,
    mixture_mean,
    mixture_quantile,
    mixture_variance,
    product_rows,
    single_component_quantile,
)

from oracles import dense_conditional, mixture_pdf, random_dataset, sample_mixture


class TestImputationGrid:
    def test_regular_includes_both_endpoints_when_even(self):
        g = ImputationGrid.regular(7.0, 9.0, delta=0.5)
        assert np.allclose(g.t_g, [7.0, 7.5, 8.0, 8.5, 9.0])
        assert g.n_g == 5

    def test_regular_floors_partial_step(self):
        g = ImputationGrid.regular(0.0, 0.95, delta=0.3)
        assert np.allclose(g.t_g, [0.0, 0.3, 0.6, 0.9])

    def test_default_step_is_bidecadal(self):
        g = ImputationGrid.regular(8.0, 8.1)
        assert g.delta == 0.02
        assert g.n_g == 6

    def test_validation(self):
        with pytest.raises(ValueError):
            ImputationGrid.regular(1.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            ImputationGrid(np.array([1.0, 1.0]), 0.1)
        with pytest.raises(ValueError):
            ImputationGrid(np.array([1.0, 2.0]), -0.1)


class TestAugmentTimes:
    def test_disjoint_times_interleave(self):
        sys = augment_times(np.array([1.0, 3.0]), np.array([0.5, 2.0, 4.0]))
        assert np.allclose(sys.times, [0.5, 1.0, 2.0, 3.0, 4.0])
        assert list(sys.obs_node) == [1, 3]
        assert list(sys.grid_node) == [0, 2, 4]

    def test_coincident_grid_time_reuses_observed_node(self):
        sys = augment_times(np.array([1.0, 3.0]), np.array([1.0 + 1e-12, 2.0]))
        assert sys.n_nodes == 3
        assert sys.times[sys.grid_node[0]] == 1.0  # keeps the observed time
        assert sys.grid_node[0] == sys.obs_node[0]

    def test_two_observed_times_may_not_merge(self):
        with pytest.raises(DataError, match="distinct observed"):
            augment_times(np.array([1.0, 1.0 + 1e-12]), np.array([2.0]))


class TestCondition:
    def test_matches_dense_reference(self):
        data = random_dataset(21, n_per_core=(9, 8), k_factors=(1.0, 1.7))
        grid = ImputationGrid.regular(0.2, 2.8, delta=0.35)
        model = CovarianceModel("m1", 2)
        theta = HyperParams(v2=0.6, sigma2_eps=0.15, rho=0.8)
        cond = condition(theta, data, grid, model)
        mu, var = dense_conditional(theta, data, grid, model)
        assert np.allclose(cond.grid_means(), mu, atol=1e-9)
        assert np.allclose(cond.grid_variances(), var, rtol=1e-8, atol=1e-11)

    def test_single_observation_closed_form(self):
        # one observation, flat level: mean is y everywhere; variance is the
        # noise there and grows by v2 * distance away from it
        data = AlignedDataset(("a",), "a", np.array([1.0, 2.0]),
                              np.array([0]), np.array([0]), np.array([5.0]),
                              np.array([1.0]))
        grid = ImputationGrid(np.array([1.0, 1.5, 2.0]), 0.5)
        theta = HyperParams(v2=0.4, sigma2_eps=0.09)
        cond = condition(theta, data, grid, CovarianceModel("m2", 1))
        assert np.allclose(cond.grid_means().ravel(), 5.0, atol=1e-10)
        expect_var = 0.09 + 0.4 * np.array([0.0, 0.5, 1.0])
        assert np.allclose(cond.grid_variances().ravel(), expect_var, rtol=1e-9)

    def test_near_exact_interpolation_with_tiny_nugget(self):
        data = AlignedDataset(("a",), "a", np.array([0.0, 1.0]),
                              np.array([0, 1]), np.array([0, 0]),
                              np.array([2.0, 6.0]), np.array([1.0]))
        grid = ImputationGrid(np.array([0.25, 0.5, 0.75]), 0.25)
        theta = HyperParams(v2=1.0, sigma2_eps=1e-12)
        cond = condition(theta, data, grid, CovarianceModel("m2", 1))
        # Brownian bridge mean: linear between the two pinned values
        assert np.allclose(cond.grid_means().ravel(), [3.0, 4.0, 5.0], atol=1e-5)
        # bridge variance v2 * t(1-t) at interior nodes
        assert np.allclose(cond.grid_variances().ravel(),
                           [0.1875, 0.25, 0.1875], atol=1e-5)

    def test_shift_equivariance(self):
        data = random_dataset(22, n_per_core=(7, 7))
        grid = ImputationGrid.regular(0.5, 2.5, delta=0.5)
        model = CovarianceModel("m1", 2)
        theta = HyperParams(v2=0.5, sigma2_eps=0.1, rho=0.7)
        base = condition(theta, data, grid, model)
        shifted_data = AlignedDataset(data.core_ids, data.reference, data.t_o,
                                      data.obs_time, data.obs_core,
                                      data.obs_value + 1e4, data.k_factors)
        shifted = condition(theta, shifted_data, grid, model)
        assert np.allclose(shifted.grid_means(), base.grid_means() + 1e4, atol=1e-6)
        assert np.allclose(shifted.grid_variances(), base.grid_variances(), rtol=1e-9)

    def test_model_core_mismatch(self):
        data = random_dataset(23, n_per_core=(5, 5))
        grid = ImputationGrid.regular(0.5, 1.5, delta=0.5)
        with pytest.raises(ValueError, match="m="):
            condition(HyperParams(v2=1.0, sigma2_eps=0.1), data, grid,
                      CovarianceModel("m2", 3))


class TestMixtureAlgebra:
    def test_single_component_quantile_closed_form(self):
        mix = MixtureMarginal(ImputationGrid(np.array([1.0]), 1.0), ("a",),
                              np.array([1.0]), np.array([[[2.0]]]), np.array([[[4.0]]]))
        for p in (0.1, 0.5, 0.9):
            expect = single_component_quantile(2.0, 4.0, p)
            # bisection tolerance is 1e-10 in probability; position error is
            # that divided by the local density
            assert mixture_quantile(mix, 0, 0, p) == pytest.approx(expect, abs=5e-8)
            assert expect == pytest.approx(2.0 + 2.0 * ndtri(p))

    def test_symmetric_two_component_median_is_midpoint(self):
        mix = MixtureMarginal(ImputationGrid(np.array([1.0]), 1.0), ("a",),
                              np.array([0.5, 0.5]),
                              np.array([[[-3.0]], [[7.0]]]),
                              np.array([[[1.3]], [[1.3]]]))
        assert mixture_quantile(mix, 0, 0, 0.5) == pytest.approx(2.0, abs=1e-8)

    def test_moments_weighted_combination(self):
        w = np.array([0.2, 0.3, 0.5])
        mu = np.array([1.0, 2.0, 4.0])
        tau = np.array([0.5, 1.0, 2.0])
        mix = MixtureMarginal(ImputationGrid(np.array([1.0]), 1.0), ("a",),
                              w, mu.reshape(3, 1, 1), tau.reshape(3, 1, 1))
        mbar = (w * mu).sum()
        assert mixture_mean(mix, 0, 0) == pytest.approx(mbar)
        expect_var = (w * mu ** 2).sum() - mbar ** 2 + (w * tau).sum()
        assert mixture_variance(mix, 0, 0) == pytest.approx(expect_var)
        assert mix.variance_grid()[0, 0] == pytest.approx(expect_var)

    def test_three_component_against_monte_carlo(self):
        w = np.array([0.25, 0.35, 0.4])
        mu = np.array([-1.0, 0.5, 3.0])
        tau = np.array([0.4, 2.0, 0.9])
        mix = MixtureMarginal(ImputationGrid(np.array([1.0]), 1.0), ("a",),
                              w, mu.reshape(3, 1, 1), tau.reshape(3, 1, 1))
        n = 2_000_000
        draws = sample_mixture(w, mu, tau, n, seed=42)
        sd = draws.std()
        assert mixture_mean(mix, 0, 0) == pytest.approx(draws.mean(), abs=4 * sd / np.sqrt(n))
        for p in (0.05, 0.25, 0.5, 0.75, 0.95):
            q_emp = np.quantile(draws, p)
            dens = mixture_pdf(q_emp, w, mu, tau)
            se = np.sqrt(p * (1 - p) / n) / dens
            assert mixture_quantile(mix, 0, 0, p) == pytest.approx(q_emp, abs=4 * se)

    def test_zero_variance_component_is_a_step(self):
        w = np.array([0.5, 0.5])
        mu = np.array([0.0, 10.0])
        tau = np.array([0.0, 1.0])
        arr = _mixture_quantile_array(w, mu.reshape(2, 1, 1), tau.reshape(2, 1, 1),
                                      0.25, 1e-10)
        assert arr[0, 0] == pytest.approx(0.0, abs=1e-7)
        arr = _mixture_quantile_array(w, mu.reshape(2, 1, 1), tau.reshape(2, 1, 1),
                                      0.75, 1e-10)
        assert arr[0, 0] == pytest.approx(10.0 + ndtri(0.5), abs=1e-6)

    @given(st.integers(1, 5), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_quantile_monotone_in_p(self, k, seed):
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(k))
        mu = rng.normal(size=k) * 3
        tau = rng.uniform(0.01, 2.0, size=k)
        mix = MixtureMarginal(ImputationGrid(np.array([1.0]), 1.0), ("a",),
                              w, mu.reshape(k, 1, 1), tau.reshape(k, 1, 1))
        ps = [0.05, 0.25, 0.5, 0.75, 0.95]
        qs = [mixture_quantile(mix, 0, 0, p) for p in ps]
        assert all(a <= b + 1e-6 for a, b in zip(qs, qs[1:]))
        assert min(mu) - 1e-6 <= qs[2] <= max(mu) + 1e-6

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            MixtureMarginal(ImputationGrid(np.array([1.0]), 1.0), ("a",),
                            np.array([0.6, 0.6]), np.zeros((2, 1, 1)), np.ones((2, 1, 1)))


class TestMixtureMarginals:
    def test_shapes_and_weight_sharing(self, medium_posterior, medium_data,
                                        medium_grid, medium_mixture):
        mix = medium_mixture
        assert mix.weights.shape == (medium_posterior.n_points,)
        assert np.allclose(mix.weights, medium_posterior.weights)
        assert mix.means.shape == (medium_posterior.n_points, medium_grid.n_g, 2)
        assert mix.variances.shape == mix.means.shape
        assert np.all(mix.variances > 0)

    def test_grid_quantiles_bracket_mean(self, medium_mixture):
        q25 = medium_mixture.quantile_grid(0.25)
        q75 = medium_mixture.quantile_grid(0.75)
        mu = medium_mixture.mean_grid()
        assert np.all(q25 < q75)
        assert np.all(q25 - 1e-9 <= mu) and np.all(mu <= q75 + 1e-9)
        assert np.all(medium_mixture.iqr_grid() > 0)

    def test_interpolation_tracks_data(self, medium_data, medium_mixture, medium_grid):
        # conditional mean at grid nodes should stay inside the local data range
        mu = medium_mixture.mean_grid()
        lo, hi = medium_data.obs_value.min(), medium_data.obs_value.max()
        pad = 0.5 * (hi - lo)
        assert np.all(mu > lo - pad) and np.all(mu < hi + pad)

    def test_product_rows_layout(self, medium_mixture, medium_grid):
        rows = product_rows(medium_mixture)
        assert len(rows) == medium_grid.n_g * 2
        t, cid, mean, var, q025, q25, q50, q75, q975 = rows[0]
        assert t == medium_grid.t_g[0]
        assert cid == medium_mixture.core_ids[0]
        assert q025 < q25 < q50 < q75 < q975
        assert var > 0

    def test_model_mismatch_rejected(self, medium_posterior, medium_data, medium_grid):
        with pytest.raises(ValueError, match="disagrees"):
            mixture_marginals(medium_posterior, medium_data, medium_grid,
                              model=CovarianceModel("m3", 2))
