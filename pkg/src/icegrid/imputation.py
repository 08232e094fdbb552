"""Conditioning the latent field on data over an augmented time axis.

Stage two of the pipeline: for each hyperparameter atom theta_j of the
discrete posterior, the joint conditional of the latent process at observed
and grid times is Gaussian with a banded precision.  Posterior marginals at
grid nodes are therefore finite Gaussian mixtures over j, with weights from
stage one; means, variances and quantiles of those mixtures are the gridded
data product.

The reported uncertainty is for the smooth process x, not for a new noisy
measurement, so the nugget never enters the mixture variances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DataError, IceGridError
from .gmrf import (BandCholesky, build_increment_precision, cholesky,
                   kronecker_precision, marginal_variances, solve)
from .inference import CovarianceModel, DiscretePosterior, HyperParams
from .ingest import TIME_TOLERANCE, AlignedDataset
from .util import parallel_map


@dataclass(frozen=True, eq=False)
class ImputationGrid:
    """Regular output times (kyr BP)."""

    t_g: np.ndarray
    delta: float

    def __post_init__(self):
        t = np.asarray(self.t_g, dtype=float)
        object.__setattr__(self, "t_g", t)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("grid needs at least one time")
        if not np.all(np.isfinite(t)):
            raise ValueError("grid times must be finite")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError("delta must be positive")

    @property
    def n_g(self) -> int:
        return self.t_g.size

    @classmethod
    def regular(cls, start: float, end: float, delta: float = 0.02) -> "ImputationGrid":
        """Nodes start + i*delta while they stay <= end (both endpoints when they divide evenly)."""
        if not (delta > 0 and end > start):
            raise ValueError("need delta > 0 and end > start")
        count = int(math.floor((end - start) / delta + 1e-9)) + 1
        return cls(start + delta * np.arange(count), delta)


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    """Merged observed + grid axis with index maps back to both."""

    times: np.ndarray      # strictly increasing union
    obs_node: np.ndarray   # node index of each observed time
    grid_node: np.ndarray  # node index of each grid time

    @property
    def n_nodes(self) -> int:
        return self.times.size


def augment_times(t_o: np.ndarray, t_g: np.ndarray,
                  tolerance: float = TIME_TOLERANCE) -> AugmentedSystem:
    """Merge observed and grid times; coincident times (within tolerance) share a node.

    A merged node keeps the observed time, so data attach exactly where they
    were measured.
    """
    t_o = np.asarray(t_o, dtype=float)
    t_g = np.asarray(t_g, dtype=float)
    tag = np.concatenate([np.zeros(t_o.size, dtype=np.intp), np.ones(t_g.size, dtype=np.intp)])
    pos = np.concatenate([np.arange(t_o.size), np.arange(t_g.size)])
    times = np.concatenate([t_o, t_g])
    order = np.lexsort((tag, times))
    times, tag, pos = times[order], tag[order], pos[order]

    obs_node = np.empty(t_o.size, dtype=np.intp)
    grid_node = np.empty(t_g.size, dtype=np.intp)
    node_times = []
    start = 0
    for i in range(1, times.size + 1):
        if i == times.size or times[i] - times[i - 1] > tolerance:
            cluster_tag = tag[start:i]
            obs_here = cluster_tag == 0
            if obs_here.sum() > 1:
                raise DataError("tolerance merged two distinct observed times; "
                                "shrink the grid tolerance or check the data axis")
            node = len(node_times)
            node_times.append(times[start:i][obs_here][0] if obs_here.any()
                              else times[start:i].mean())
            for t, p in zip(cluster_tag, pos[start:i]):
                (obs_node if t == 0 else grid_node)[p] = node
            start = i
    return AugmentedSystem(np.asarray(node_times), obs_node, grid_node)


@dataclass(frozen=True, eq=False)
class Conditional:
    """Joint Gaussian x | y, theta on the augmented axis: N(mean, Q^{-1})."""

    system: AugmentedSystem
    m: int
    mean: np.ndarray
    chol: BandCholesky

    def grid_means(self) -> np.ndarray:
        """(n_g, m) conditional means at grid nodes."""
        return self.mean.reshape(-1, self.m)[self.system.grid_node]

    def grid_variances(self) -> np.ndarray:
        """(n_g, m) conditional marginal variances at grid nodes."""
        var = marginal_variances(self.chol).reshape(-1, self.m)
        return var[self.system.grid_node]


def condition(theta: HyperParams, data: AlignedDataset, grid: ImputationGrid,
              model: CovarianceModel) -> Conditional:
    """Condition the latent field on all observations over observed + grid times.

    Grid-only nodes carry prior precision only (zero data precision); the
    intrinsic prior then interpolates between, and extrapolates beyond, the
    observed nodes.
    """
    if model.m != data.m:
        raise ValueError(f"model has m={model.m}, data has m={data.m}")
    system = augment_times(data.t_o, grid.t_g)
    m = data.m
    qt = build_increment_precision(system.times)
    qx = kronecker_precision(qt, theta.v2, model.sigma(theta))

    idx = system.obs_node[data.obs_time] * m + data.obs_core
    dp_obs = 1.0 / (data.k_factors[data.obs_core] * theta.sigma2_eps)
    dp = np.zeros(system.n_nodes * m)
    dp[idx] = dp_obs
    # center the data, solve, shift back: exact under the flat-level prior
    # and keeps the quadratic solve well conditioned for large offsets
    center = float(np.mean(data.obs_value))
    b = np.zeros(system.n_nodes * m)
    b[idx] = dp_obs * (data.obs_value - center)

    chol = cholesky(qx.add_diagonal(dp))
    mean = solve(chol, b) + center
    return Conditional(system, m, mean, chol)


@dataclass(frozen=True, eq=False)
class MixtureMarginal:
    """Gaussian mixture marginals at every (grid time, core).

    Component j is N(means[j, l, c], variances[j, l, c]) with weight
    weights[j]; the weights are shared across nodes and sum to one.
    """

    grid: ImputationGrid
    core_ids: tuple
    weights: np.ndarray     # (J,)
    means: np.ndarray       # (J, n_g, m)
    variances: np.ndarray   # (J, n_g, m)

    def __post_init__(self):
        if not math.isclose(float(self.weights.sum()), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances < 0):
            raise ValueError("component variances must be non-negative")

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean_grid(self) -> np.ndarray:
        """(n_g, m) mixture means."""
        return np.tensordot(self.weights, self.means, axes=1)

    def variance_grid(self) -> np.ndarray:
        """(n_g, m) mixture variances: spread of component means plus average spread within."""
        mu = self.mean_grid()
        second = np.tensordot(self.weights, self.means ** 2, axes=1)
        within = np.tensordot(self.weights, self.variances, axes=1)
        return second - mu ** 2 + within

    def quantile_grid(self, p: float, tol: float = 1e-10) -> np.ndarray:
        """(n_g, m) mixture quantiles by bisection, tolerance in probability."""
        return _mixture_quantile_array(self.weights, self.means, self.variances, p, tol)

    def iqr_grid(self) -> np.ndarray:
        return self.quantile_grid(0.75) - self.quantile_grid(0.25)


def mixture_marginals(post: DiscretePosterior, data: AlignedDataset,
                      grid: ImputationGrid, model: CovarianceModel | None = None,
                      threads: int = 1) -> MixtureMarginal:
    """Run condition for every posterior atom and collect marginal moments.

    A failing atom aborts the whole call with its index in the message;
    dropping it and renormalizing would silently bias the mixture.
    """
    if model is None:
        model = post.model
    elif model != post.model:
        raise ValueError("model disagrees with the posterior's model")
    if post.n_points < 1:
        raise ValueError("posterior has no support points")

    def one(j: int):
        try:
            cond = condition(post.thetas[j], data, grid, model)
        except IceGridError as exc:
            raise IceGridError(f"conditioning failed for posterior atom {j} "
                               f"(theta={post.thetas[j].as_dict()}): {exc}") from exc
        return cond.grid_means(), cond.grid_variances()

    results = parallel_map(one, range(post.n_points), threads)
    means = np.stack([r[0] for r in results])
    variances = np.stack([r[1] for r in results])
    return MixtureMarginal(grid, tuple(data.core_ids), post.weights.copy(), means, variances)


def mixture_mean(mix: MixtureMarginal, l: int, c: int) -> float:
    """Weighted mean of component means at one node."""
    return float(mix.weights @ mix.means[:, l, c])


def mixture_variance(mix: MixtureMarginal, l: int, c: int) -> float:
    """Between-component variance of means plus weighted within-component variance."""
    w = mix.weights
    mu = mix.means[:, l, c]
    m1 = w @ mu
    return float(w @ mu ** 2 - m1 ** 2 + w @ mix.variances[:, l, c])


def mixture_quantile(mix: MixtureMarginal, l: int, c: int, p: float,
                     tol: float = 1e-10) -> float:
    """Quantile of the mixture at one node; see quantile_grid for the method."""
    out = _mixture_quantile_array(mix.weights, mix.means[:, l:l + 1, c:c + 1],
                                  mix.variances[:, l:l + 1, c:c + 1], p, tol)
    return float(out[0, 0])


def _mixture_quantile_array(weights: np.ndarray, means: np.ndarray,
                            variances: np.ndarray, p: float, tol: float) -> np.ndarray:
    """Vectorized bisection for weighted-Gaussian-CDF roots.

    Bracket is [min mu - 10 max sd, max mu + 10 max sd] per node; iteration
    stops when every node's CDF value is within tol of p.  Components with
    zero variance contribute step functions.
    """
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    w = weights[:, None, None]
    sd = np.sqrt(variances)
    sd_max = sd.max(axis=0)
    lo = means.min(axis=0) - 10.0 * sd_max
    hi = means.max(axis=0) + 10.0 * sd_max

    positive = sd > 0

    def cdf(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(positive, (x[None] - means) / np.where(positive, sd, 1.0), 0.0)
        val = np.where(positive, ndtr(z), (x[None] >= means).astype(float))
        return (w * val).sum(axis=0)

    mid = 0.5 * (lo + hi)
    for _ in range(200):
        f = cdf(mid)
        if np.all(np.abs(f - p) <= tol):
            break
        hi = np.where(f >= p, mid, hi)
        lo = np.where(f < p, mid, lo)
        mid = 0.5 * (lo + hi)
    return mid


def single_component_quantile(mu: float, tau: float, p: float) -> float:
    """Closed form for one Gaussian component; used as a cross-check."""
    return mu + math.sqrt(tau) * float(ndtri(p))


def product_rows(mix: MixtureMarginal, probs=(0.025, 0.25, 0.5, 0.75, 0.975)):
    """Flat (time, core, mean, variance, quantiles...) rows for the data product."""
    mu = mix.mean_grid()
    var = mix.variance_grid()
    qs = [mix.quantile_grid(p) for p in probs]
    rows = []
    for l, t in enumerate(mix.grid.t_g):
        for c, cid in enumerate(mix.core_ids):
            rows.append((t, cid, mu[l, c], var[l, c], *[q[l, c] for q in qs]))
    return rows
