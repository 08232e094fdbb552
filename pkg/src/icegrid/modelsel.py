"""Fitting competing covariance structures and ranking them by BIC.

BIC = -2 log L + p ln N, where L is the x-marginalized likelihood at its
hyperparameter mode, p counts hyperparameters only, and N is the total
observation count.  The intrinsic prior's free levels add the same constant
to every structure's log likelihood, so BIC differences are well defined
even though the absolute values carry an offset convention (all
theta-independent constants beyond the increment density are dropped).

The independent-cores structure (m2) is fit as separate per-core
two-parameter problems; its joint likelihood separates exactly, so the sum
of the single-core maxima is the joint maximum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .inference import CovarianceModel, HyperParams, find_mode
from .ingest import AlignedDataset, single_core
from .util import parallel_map


@dataclass(frozen=True)
class ModelScore:
    """One structure's fit quality."""

    kind: str
    neg2_loglik: float
    penalty: float
    bic: float
    p: int
    n_obs: int
    thetas: tuple[HyperParams, ...]      # per core for m2, else a single entry
    core_ids: tuple[str, ...] | None = None


def bic(data: AlignedDataset, model: CovarianceModel,
        init: HyperParams | None = None, threads: int = 1,
        max_evaluations: int = 2000, fatol: float = 1e-4) -> ModelScore:
    """Fit the likelihood mode and score the structure.

    The optimization runs without the prior (BIC is a likelihood criterion);
    for m2 on multiple cores each core is fit on its own axis and the log
    likelihoods are summed, p = 2 per core.

    fatol is looser than the posterior-mode default: only the likelihood
    value enters the score, and when the maximum sits on an edge of the
    support (rho against a bound, or v2 collapsing on a noise-dominated
    core) the objective's evaluation noise there stays well above 1e-8,
    which would stall the simplex.  Interior fits are unaffected -- their
    termination is set by xatol.
    """
    n_obs = data.n_obs
    if model.kind == "m2" and data.m > 1:
        sub_model = CovarianceModel("m2", 1, model.rho_bounds)

        def fit_core(cid: str):
            sub = single_core(data, cid)
            return find_mode(sub, sub_model, init, use_prior=False,
                             with_hessian=False, max_evaluations=max_evaluations,
                             fatol=fatol)
        modes = parallel_map(fit_core, list(data.core_ids), threads)
        loglik = sum(mo.log_post for mo in modes)
        thetas = tuple(mo.theta for mo in modes)
        p = 2 * data.m
        core_ids = tuple(data.core_ids)
    else:
        mode = find_mode(data, model, init, use_prior=False,
                         with_hessian=False, max_evaluations=max_evaluations,
                         fatol=fatol)
        loglik = mode.log_post
        thetas = (mode.theta,)
        p = model.n_params
        core_ids = None
    penalty = p * math.log(n_obs)
    neg2 = -2.0 * loglik
    return ModelScore(model.kind, neg2, penalty, neg2 + penalty, p, n_obs,
                      thetas, core_ids)


@dataclass(frozen=True)
class RankedScore:
    rank: int
    score: ModelScore
    delta_bic: float


def compare(scores: Sequence[ModelScore]) -> list[RankedScore]:
    """Ascending BIC order with deltas to the best; ties keep input order."""
    if not scores:
        raise ValueError("need at least one score")
    order = sorted(range(len(scores)), key=lambda i: (scores[i].bic, i))
    best = scores[order[0]].bic
    return [RankedScore(r + 1, scores[i], scores[i].bic - best)
            for r, i in enumerate(order)]


def comparison_rows(ranking: Sequence[RankedScore]):
    """Flat rows (rank, kind, neg2_loglik, penalty, bic, delta, p, n_obs) for output."""
    return [(rs.rank, rs.score.kind, rs.score.neg2_loglik, rs.score.penalty,
             rs.score.bic, rs.delta_bic, rs.score.p, rs.score.n_obs)
            for rs in ranking]


def format_comparison(ranking: Sequence[RankedScore]) -> str:
    header = f"{'rank':>4}  {'model':<6} {'-2logL':>14} {'penalty':>10} {'BIC':>14} {'dBIC':>10}"
    lines = [header, "-" * len(header)]
    for rs in ranking:
        s = rs.score
        lines.append(f"{rs.rank:>4}  {s.kind:<6} {s.neg2_loglik:>14.2f} "
                     f"{s.penalty:>10.2f} {s.bic:>14.2f} {rs.delta_bic:>10.2f}")
    return "\n".join(lines)
