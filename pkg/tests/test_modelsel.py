"""BIC scoring and structure ranking."""
import math

import numpy as np
import pytest

import icegrid as ig
from icegrid.inference import CovarianceModel, find_mode, log_marginal_likelihood
from icegrid.modelsel import ModelScore, bic, compare, comparison_rows, format_comparison

from oracles import random_dataset


@pytest.fixture(scope="module")
def small_data():
    return random_dataset(seed=31, n_per_core=(25, 22), span=5.0)


class TestBic:
    def test_penalty_arithmetic(self, small_data):
        score = bic(small_data, CovarianceModel("m1", 2))
        assert score.p == 3
        assert score.n_obs == 47
        assert score.penalty == pytest.approx(3 * math.log(47), rel=1e-12)
        assert score.bic == pytest.approx(score.neg2_loglik + score.penalty, rel=1e-12)

    def test_neg2_matches_likelihood_at_reported_theta(self, small_data):
        model = CovarianceModel("m1", 2)
        score = bic(small_data, model)
        ll = log_marginal_likelihood(score.thetas[0], small_data, model)
        assert score.neg2_loglik == pytest.approx(-2 * ll, rel=1e-10)

    def test_likelihood_mode_not_posterior_mode(self, small_data):
        model = CovarianceModel("m1", 2)
        score = bic(small_data, model)
        post_mode = find_mode(small_data, model, use_prior=True, with_hessian=False)
        lik_at_score = log_marginal_likelihood(score.thetas[0], small_data, model)
        lik_at_post = log_marginal_likelihood(post_mode.theta, small_data, model)
        assert lik_at_score >= lik_at_post - 1e-6

    def test_m2_separates_into_per_core_fits(self, small_data):
        score = bic(small_data, CovarianceModel("m2", 2))
        assert score.p == 4
        assert score.core_ids == small_data.core_ids
        assert len(score.thetas) == 2
        sub_model = CovarianceModel("m2", 1)
        total = 0.0
        for cid, theta in zip(score.core_ids, score.thetas):
            sub = ig.single_core(small_data, cid)
            mode = find_mode(sub, sub_model, use_prior=False, with_hessian=False)
            # the per-core thetas are the single-core likelihood maxima
            assert theta.v2 == pytest.approx(mode.theta.v2, rel=1e-4)
            assert theta.sigma2_eps == pytest.approx(mode.theta.sigma2_eps, rel=1e-4)
            total += mode.log_post
        assert score.neg2_loglik == pytest.approx(-2 * total, rel=1e-8)

    def test_m2_threading_invariant(self, small_data):
        s1 = bic(small_data, CovarianceModel("m2", 2), threads=1)
        s2 = bic(small_data, CovarianceModel("m2", 2), threads=2)
        assert s1.neg2_loglik == s2.neg2_loglik

    def test_nested_structures_rank_by_fit(self, small_data):
        # m1 nests m2 (rho=0 boundary is outside the rho support, but the
        # correlated truth should still fit better by more than the 1-param
        # penalty on this correlated draw)
        s1 = bic(small_data, CovarianceModel("m1", 2))
        s2 = bic(small_data, CovarianceModel("m2", 2))
        s3 = bic(small_data, CovarianceModel("m3", 2))
        # m3 nests m1: likelihood at the m3 mode can only be higher
        assert s3.neg2_loglik <= s1.neg2_loglik + 1e-6
        assert s3.p == 4
        assert s1.bic < s2.bic


class TestCompare:
    def scores(self):
        mk = lambda kind, n2, pen: ModelScore(kind, n2, pen, n2 + pen, 3, 100, ())
        return [mk("m1", 100.0, 10.0), mk("m2", 95.0, 20.0), mk("m3", 99.0, 13.0)]

    def test_ranking_ascending_with_deltas(self):
        ranked = compare(self.scores())
        assert [r.score.kind for r in ranked] == ["m1", "m3", "m2"]
        assert [r.rank for r in ranked] == [1, 2, 3]
        assert ranked[0].delta_bic == 0.0
        assert ranked[1].delta_bic == pytest.approx(2.0)
        assert ranked[2].delta_bic == pytest.approx(5.0)

    def test_tie_keeps_input_order(self):
        mk = lambda kind, b: ModelScore(kind, b, 0.0, b, 2, 10, ())
        ranked = compare([mk("m3", 50.0), mk("m1", 50.0)])
        assert [r.score.kind for r in ranked] == ["m3", "m1"]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compare([])

    def test_rows_and_table(self):
        ranked = compare(self.scores())
        rows = comparison_rows(ranked)
        assert rows[0] == (1, "m1", 100.0, 10.0, 110.0, 0.0, 3, 100)
        text = format_comparison(ranked)
        lines = text.splitlines()
        assert len(lines) == 5
        assert "BIC" in lines[0] and "dBIC" in lines[0]
        assert lines[2].split()[1] == "m1"
