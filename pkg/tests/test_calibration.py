"""Synthetic misaligned datasets and the coverage study harness."""
import math

import numpy as np
import pytest

from icegrid.calibration import (
    ANNUAL_DT,
    CoverageRow,
    SimSpec,
    coverage_rows,
    coverage_study,
    probe_grid,
    simulate_dataset,
)
from icegrid.errors import CalibrationError
from icegrid.inference import CovarianceModel, HyperParams
from icegrid.variogram import (
    averaged_increments_semivariogram,
    averaged_nugget_semivariogram,
    empirical_semivariogram,
)

M1 = CovarianceModel("m1", 2)
THETA = HyperParams(v2=0.2, rho=0.9, sigma2_eps=0.5)


class TestSimSpec:
    def test_validation(self):
        with pytest.raises(ValueError, match="one window length per core"):
            SimSpec(THETA, 1000, (100,), seed=0, model=M1)
        with pytest.raises(ValueError, match=">= 1 year"):
            SimSpec(THETA, 1000, (100, 0), seed=0, model=M1)
        with pytest.raises(ValueError, match="whole windows"):
            SimSpec(THETA, 1000, (100, 70), seed=0, model=M1)
        with pytest.raises(ValueError, match="n_replicates"):
            SimSpec(THETA, 1000, (100, 100), seed=0, n_replicates=0, model=M1)
        # theta must fit the structure
        with pytest.raises(ValueError):
            SimSpec(HyperParams(0.2, 0.5), 1000, (100, 100), seed=0, model=M1)

    def test_core_ids(self):
        spec = SimSpec(THETA, 1000, (100, 125), seed=0, model=M1)
        assert spec.core_ids == ("sim0", "sim1")


class TestSimulateDataset:
    def test_deterministic_per_seed_and_replicate(self):
        spec = SimSpec(THETA, 2000, (100, 125), seed=5, n_replicates=3, model=M1)
        d1, t1 = simulate_dataset(spec, 1)
        d2, t2 = simulate_dataset(spec, 1)
        assert np.array_equal(d1.obs_value, d2.obs_value)
        assert np.array_equal(t1.x, t2.x)
        d3, _ = simulate_dataset(spec, 2)
        assert not np.array_equal(d1.obs_value, d3.obs_value)

    def test_layout_and_k_factors(self):
        spec = SimSpec(THETA, 2000, (100, 125), seed=5, model=M1)
        data, truth = simulate_dataset(spec)
        assert np.array_equal(data.n_per_core, [20, 16])
        assert data.reference == "sim0"
        # averaging windows map to nugget scale factors against the reference
        assert data.k_factors[0] == pytest.approx(1.0)
        assert data.k_factors[1] == pytest.approx(100 / 125)
        assert truth.x.shape == (2000, 2)
        assert truth.times[0] == ANNUAL_DT and truth.times[-1] == 2.0

    def test_block_center_times(self):
        spec = SimSpec(THETA, 1000, (100, 100), seed=1, model=M1)
        data, _ = simulate_dataset(spec)
        series = data.core_series("sim0")
        # first window covers years 1..100, center year 50.5
        assert series.times[0] == pytest.approx(0.0505, abs=1e-12)
        assert series.times[1] - series.times[0] == pytest.approx(0.1, abs=1e-12)

    def test_perfect_correlation_duplicates_cores(self):
        theta = HyperParams(v2=0.2, rho=1 - 1e-12, sigma2_eps=1e-12)
        spec = SimSpec(theta, 2000, (100, 100), seed=3, model=M1)
        data, _ = simulate_dataset(spec)
        a = data.core_series("sim0")
        b = data.core_series("sim1")
        assert np.allclose(a.values, b.values, atol=1e-3)

    def test_flat_latent_when_walk_variance_vanishes(self):
        theta = HyperParams(v2=1e-18, rho=0.9, sigma2_eps=0.04)
        spec = SimSpec(theta, 5000, (50, 50), seed=7, model=M1)
        data, truth = simulate_dataset(spec)
        assert np.abs(truth.x).max() < 1e-6
        # observations are pure averaged nugget: variance sigma2 * w_ref / w
        sd = data.obs_value.std()
        assert sd == pytest.approx(math.sqrt(0.04), rel=0.15)

    def test_latent_increment_moments(self):
        spec = SimSpec(THETA, 30000, (100, 100), seed=11, model=M1)
        _, truth = simulate_dataset(spec)
        inc = np.diff(truth.x, axis=0)
        v2_hat = inc.var(axis=0) / ANNUAL_DT
        assert np.all(np.abs(v2_hat / THETA.v2 - 1) < 0.05)
        rho_hat = np.corrcoef(inc[:, 0], inc[:, 1])[0, 1]
        assert rho_hat == pytest.approx(0.9, abs=0.01)

    def test_observation_noise_matches_averaged_nugget(self):
        spec = SimSpec(THETA, 40000, (100, 125), seed=13, model=M1)
        data, truth = simulate_dataset(spec)
        for c, (cid, w) in enumerate(zip(("sim0", "sim1"), (100, 125))):
            series = data.core_series(cid)
            block_truth = truth.x[:, c].reshape(-1, w).mean(axis=1)
            resid = series.values - block_truth
            target = THETA.sigma2_eps * 100 / w
            assert resid.var() == pytest.approx(target, rel=0.15)

    def test_averaged_variogram_matches_change_of_support(self):
        # empirical semivariogram of the block means should track the
        # averaged increments + averaged nugget curves; one intrinsic path's
        # variogram is noisy at long lags, so average over replicates
        m2 = CovarianceModel("m2", 1)
        theta = HyperParams(v2=0.5, sigma2_eps=0.3)
        spec = SimSpec(theta, 30000, (50,), seed=17, n_replicates=10, model=m2)
        w = 0.05
        # block spacing makes every pair lag an exact multiple of w; pool
        # bins by that lag, weighting by pair count
        pooled: dict[int, list[float]] = {}
        for rep in range(10):
            data, _ = simulate_dataset(spec, rep)
            emp = empirical_semivariogram(data.core_series("sim0"), max_lag=0.5)
            for lag, gamma, count in zip(emp.lags, emp.gammas, emp.counts):
                key = round(lag / w)
                pooled.setdefault(key, [0.0, 0.0])
                pooled[key][0] += count * gamma
                pooled[key][1] += count
        lags = w * np.array(sorted(pooled))
        mean_gamma = np.array([pooled[k][0] / pooled[k][1] for k in sorted(pooled)])
        # white-noise intensity giving nugget variance sigma2_eps on the
        # reference window: sigma2_eps * w
        theory = (averaged_increments_semivariogram(lags, theta.v2, w)
                  + averaged_nugget_semivariogram(lags, theta.sigma2_eps * w, w))
        rel = np.abs(mean_gamma / theory - 1)
        assert rel.max() < 0.10


class TestProbeGrid:
    def test_times_match_truth_axis_exactly(self):
        spec = SimSpec(THETA, 11000, (100, 110), seed=7, model=M1)
        grid, idx = probe_grid(spec, 20)
        _, truth = simulate_dataset(spec)
        assert grid.t_g.size == 20
        assert np.array_equal(truth.times[idx], grid.t_g)
        # evenly spaced strictly inside the span
        assert idx[0] > 0 and idx[-1] < spec.n_annual - 1
        assert np.unique(np.diff(idx)).size == 1

    def test_too_many_probes(self):
        spec = SimSpec(THETA, 100, (10, 10), seed=0, model=M1)
        with pytest.raises(ValueError, match="too many probes"):
            probe_grid(spec, 200)


@pytest.fixture(scope="module")
def small_table():
    spec = SimSpec(THETA, 11000, (100, 110), seed=7, n_replicates=8, model=M1)
    return coverage_study(spec, n_probes=5, threads=2)


class TestCoverageStudy:
    def test_row_structure(self, small_table):
        names = [r.name for r in small_table.rows]
        assert names == ["x", "v2", "rho", "sigma2_eps"]
        n_ok = small_table.n_replicates - small_table.n_failed
        assert small_table.row("v2").n_trials == n_ok
        assert small_table.row("x").n_trials == n_ok * 5 * 2
        with pytest.raises(KeyError):
            small_table.row("nope")

    def test_interval_nesting(self, small_table):
        # a truth inside the 50% interval is inside the 90% one
        for r in small_table.rows:
            assert 0 <= r.n_inside_50 <= r.n_inside_90 <= r.n_trials

    def test_rows_export(self, small_table):
        rows = coverage_rows(small_table)
        assert rows[0][0] == "x"
        for name, n, c50, c90 in rows:
            assert 0.0 <= c50 <= c90 <= 1.0

    def test_threading_invariant(self):
        spec = SimSpec(THETA, 11000, (100, 110), seed=7, n_replicates=4, model=M1)
        t1 = coverage_study(spec, n_probes=3, threads=1)
        t2 = coverage_study(spec, n_probes=3, threads=2)
        assert [(r.name, r.n_inside_50, r.n_inside_90) for r in t1.rows] == \
               [(r.name, r.n_inside_50, r.n_inside_90) for r in t2.rows]

    def test_under_identified_design_fails_loudly(self):
        spec = SimSpec(THETA, 1100, (550, 275), seed=0, n_replicates=3, model=M1)
        with pytest.raises(CalibrationError, match="replicate fits failed"):
            coverage_study(spec, n_probes=4)

    def test_coverage_row_fractions(self):
        r = CoverageRow("v2", 200, 100, 180)
        assert r.cover50 == 0.5
        assert r.cover90 == 0.9
