"""Banded Gaussian Markov random field kernel.

The latent process is an intrinsic random walk observed at irregular times
t_1 < ... < t_n, shared by m correlated series.  Its (rank-deficient) prior
precision is the Kronecker product

    Q_x = Q_t (x) (v^2 Sigma)^{-1}

where Q_t is the tridiagonal increment precision with off-diagonals
-1/delta_i and x' Q_t x = sum_i (x_{i+1} - x_i)^2 / delta_i.  With nodes
ordered time-major (all m series at t_1, then t_2, ...) every matrix the
package factorizes has bandwidth 2m - 1, so storage and factorization are
O(n m^2) instead of O((nm)^3).

Symmetric band matrices are held in LAPACK lower band layout:
bands[d, i] = A[i + d, i] for d = 0..bandwidth, with unused tail entries
zero.  Cholesky factors reuse the same layout for L.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NotPositiveDefiniteError


@dataclass(frozen=True, eq=False)
class BandMatrix:
    """Symmetric matrix stored by lower diagonals.

    bands has shape (bandwidth + 1, dim); row d holds the d-th sub-diagonal
    left-aligned, i.e. bands[d, i] = A[i + d, i].
    """

    dim: int
    bandwidth: int
    bands: np.ndarray

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0 <= self.bandwidth < self.dim:
            raise ValueError("need 0 <= bandwidth < dim")
        if self.bands.shape != (self.bandwidth + 1, self.dim):
            raise ValueError(f"bands shape {self.bands.shape} != {(self.bandwidth + 1, self.dim)}")
        if not np.all(np.isfinite(self.bands)):
            raise ValueError("bands contain non-finite entries")

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.dim, self.dim))
        for d in range(self.bandwidth + 1):
            idx = np.arange(self.dim - d)
            a[idx + d, idx] = self.bands[d, : self.dim - d]
            if d:
                a[idx, idx + d] = self.bands[d, : self.dim - d]
        return a

    def add_diagonal(self, diag: np.ndarray) -> "BandMatrix":
        diag = np.asarray(diag, dtype=float)
        if diag.shape != (self.dim,):
            raise ValueError("diagonal length mismatch")
        bands = self.bands.copy()
        bands[0] += diag
        return BandMatrix(self.dim, self.bandwidth, bands)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.bands[0] * x
        for d in range(1, self.bandwidth + 1):
            band = self.bands[d, : self.dim - d]
            y[d:] += band * x[: self.dim - d]
            y[: self.dim - d] += band * x[d:]
        return y


@dataclass(frozen=True, eq=False)
class BandCholesky:
    """Lower Cholesky factor of a positive definite band matrix.

    factor uses the same lower band layout as BandMatrix; log_det is
    log det Q = 2 sum log L_ii.
    """

    dim: int
    bandwidth: int
    factor: np.ndarray
    log_det: float


def cholesky(q: BandMatrix) -> BandCholesky:
    """Banded Cholesky Q = L L'.  Raises NotPositiveDefiniteError on failure."""
    try:
        cb = sla.cholesky_banded(q.bands, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"band Cholesky failed: {exc}") from exc
    log_det = 2.0 * float(np.sum(np.log(cb[0])))
    return BandCholesky(q.dim, q.bandwidth, cb, log_det)


def solve(chol: BandCholesky, rhs: np.ndarray) -> np.ndarray:
    """Solve Q x = rhs given the banded factor of Q."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != chol.dim:
        raise ValueError("rhs length mismatch")
    return sla.cho_solve_banded((chol.factor, True), rhs, check_finite=False)


def _upper_factor(chol: BandCholesky) -> np.ndarray:
    """L' in the (0, bandwidth) banded layout used by solve_banded."""
    bw, n = chol.bandwidth, chol.dim
    ab = np.zeros((bw + 1, n))
    for d in range(bw + 1):
        ab[bw - d, d:] = chol.factor[d, : n - d]
    return ab


def solve_upper(chol: BandCholesky, z: np.ndarray) -> np.ndarray:
    """Solve L' u = z; the sampling backsubstitution."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] != chol.dim:
        raise ValueError("rhs length mismatch")
    return sla.solve_banded((0, chol.bandwidth), _upper_factor(chol), z, check_finite=False)


def sample_gaussian(chol: BandCholesky, mean: np.ndarray, rng: np.random.Generator,
                    size: int | None = None) -> np.ndarray:
    """Draw from N(mean, Q^{-1}) via L' u = z.

    With size=None returns one path of shape (dim,); otherwise (size, dim).
    Draws consume rng in a fixed order, so results are reproducible for a
    seeded generator.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (chol.dim,):
        raise ValueError("mean length mismatch")
    nsamp = 1 if size is None else int(size)
    z = rng.standard_normal((chol.dim, nsamp))
    u = sla.solve_banded((0, chol.bandwidth), _upper_factor(chol), z, check_finite=False)
    out = mean[None, :] + u.T
    return out[0] if size is None else out


def marginal_variances(chol: BandCholesky) -> np.ndarray:
    """diag(Q^{-1}) from the band Cholesky factor without forming Q^{-1}.

    Runs the Takahashi recursion restricted to the band: columns are filled
    right to left using

        Sigma_ij = delta_ij / L_jj^2 - (1/L_jj) sum_{k>j} L_kj Sigma_ki

    which is exact for diag(Q^{-1}) because every L_kj outside the band is
    zero.  Cost O(dim * bandwidth^2).
    """
    n, b = chol.dim, chol.bandwidth
    L = chol.factor
    if b == 0:
        return 1.0 / L[0] ** 2
    # sig[d, j] = Sigma[j + d, j]; filled for d = 0..min(b, n-1-j)
    sig = np.zeros((b + 1, n))
    # index templates: block[e-1, d-1] addresses Sigma[j+e, j+d] for e, d in 1..b
    e = np.arange(1, b + 1)[:, None]
    d = np.arange(1, b + 1)[None, :]
    row_t = np.abs(e - d)
    col_t = np.minimum(e, d)
    sig[0, n - 1] = 1.0 / L[0, n - 1] ** 2
    for j in range(n - 2, -1, -1):
        q = min(b, n - 1 - j)
        ljj = L[0, j]
        lcol = L[1:q + 1, j]
        # entries Sigma[j+d, j], d = 1..q, use columns j+1.. only
        block = sig[row_t[:q, :q], j + col_t[:q, :q]]
        sig[1:q + 1, j] = -(lcol @ block) / ljj
        # the diagonal entry then uses this column's fresh off-diagonals
        sig[0, j] = (1.0 / ljj - lcol @ sig[1:q + 1, j]) / ljj
    return sig[0].copy()


@dataclass(frozen=True, eq=False)
class IncrementPrecision:
    """Tridiagonal structure matrix Q_t of the increment quadratic form."""

    times: np.ndarray
    gaps: np.ndarray
    matrix: BandMatrix


def build_increment_precision(times: np.ndarray) -> IncrementPrecision:
    """Q_t for irregular times: x' Q_t x = sum (x_{i+1} - x_i)^2 / delta_i."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("need at least two time points")
    if not np.all(np.isfinite(times)):
        raise ValueError("times contain non-finite entries")
    gaps = np.diff(times)
    if np.any(gaps <= 0):
        raise ValueError("times must be strictly increasing")
    n = times.size
    inv = 1.0 / gaps
    bands = np.zeros((2, n))
    bands[0, :-1] += inv
    bands[0, 1:] += inv
    bands[1, :-1] = -inv
    return IncrementPrecision(times, gaps, BandMatrix(n, 1, bands))


def _check_spd(sigma: np.ndarray, name: str = "sigma") -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-12):
        raise NotPositiveDefiniteError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from exc
    return sigma


def kronecker_precision(qt: IncrementPrecision, v2: float, sigma: np.ndarray) -> BandMatrix:
    """Joint prior precision Q_t (x) (v^2 Sigma)^{-1}, time-major ordering.

    Node (i, c) sits at flat index i*m + c, which keeps the bandwidth at
    exactly 2m - 1.
    """
    if not (np.isfinite(v2) and v2 > 0):
        raise ValueError("v2 must be positive")
    sigma = _check_spd(sigma)
    m = sigma.shape[0]
    a = np.linalg.inv(v2 * sigma)
    a = 0.5 * (a + a.T)
    n = qt.matrix.dim
    big_n = n * m
    bw = 2 * m - 1
    if m == 1:
        bands = qt.matrix.bands * a[0, 0]
        return BandMatrix(big_n, 1, bands)
    bands = np.zeros((bw + 1, big_n))
    diag_t = qt.matrix.bands[0]
    off_t = qt.matrix.bands[1, : n - 1]
    for c in range(m):
        for d in range(m):
            if c >= d:  # lower triangle of the diagonal blocks
                bands[c - d, d::m] = diag_t * a[c, d]
            # full sub-diagonal blocks: A[(j+1)*m + c, j*m + d]
            bands[m + c - d, d:(n - 1) * m:m] = off_t * a[c, d]
    return BandMatrix(big_n, bw, bands)


def generalized_logdet_prior(v2: float, sigma: np.ndarray, n_times: int) -> float:
    """log of the generalized determinant factor of the intrinsic prior.

    The rank-deficient Q_x contributes |v^2 Sigma|^{-(n-1)} to the improper
    joint density (flat-level convention: the time factor's own generalized
    determinant is absorbed into the likelihood's gap terms).
    """
    if not (np.isfinite(v2) and v2 > 0):
        raise ValueError("v2 must be positive")
    sigma = _check_spd(sigma)
    if n_times < 2:
        raise ValueError("need n_times >= 2")
    m = sigma.shape[0]
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise NotPositiveDefiniteError("sigma is not positive definite")
    return -(n_times - 1) * (m * np.log(v2) + logdet)
