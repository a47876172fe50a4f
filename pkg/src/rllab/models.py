"""Covariance constructions, synthetic data generators and oracle rescalings.

Every sampler takes an explicit ``rng`` (a seed or a ``numpy.random.Generator``)
so that a fixed seed reproduces bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np

from .errors import InvalidParameter, NotPositiveDefinite, NotPositiveSemidefinite

RngLike = Union[int, np.random.Generator, None]

SYMMETRY_RTOL = 1e-10
PSD_RTOL = 1e-8


def as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Covariance:
    """Symmetric positive semi-definite matrix with a lazily cached eigendecomposition."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidParameter(f"covariance must be square, got shape {a.shape}")
        scale = max(float(np.max(np.abs(a))), 1.0) if a.size else 1.0
        if a.size and np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
            raise InvalidParameter("covariance matrix is not symmetric")
        a = (a + a.T) / 2.0
        self.matrix = a
        if a.size:
            evals = self.eigenvalues
            if evals[0] < -PSD_RTOL * max(abs(evals[-1]), 1e-300):
                raise NotPositiveSemidefinite(
                    f"smallest eigenvalue {evals[0]:.3e} is negative"
                )

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def _eigh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.matrix)

    @property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in ascending order."""
        return self._eigh[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eigh[1]

    @cached_property
    def sqrt(self) -> np.ndarray:
        # clamp at zero: rescalable covariances may be singular
        evals, evecs = self._eigh
        return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T

    def norm_sq(self, v: np.ndarray) -> float:
        """Squared Mahalanobis-type norm ``v' Sigma v`` (the prediction error of ``v``)."""
        v = np.asarray(v, dtype=float)
        return float(v @ self.matrix @ v)


@dataclass(frozen=True, eq=False)
class DiagonalScaling:
    """Positive diagonal matrix, stored as its diagonal."""

    d: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.d, dtype=float).reshape(-1)
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise InvalidParameter("diagonal scaling entries must be finite and > 0")
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def sqrt(self) -> np.ndarray:
        return np.sqrt(self.d)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.d)


@dataclass(frozen=True, eq=False)
class SampleMatrix:
    """Design matrix with rows as samples, plus an optional response vector."""

    x: np.ndarray
    y: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise InvalidParameter(f"x must be 2-dimensional, got shape {x.shape}")
        object.__setattr__(self, "x", x)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).reshape(-1)
            if y.shape[0] != x.shape[0]:
                raise InvalidParameter(
                    f"x has {x.shape[0]} rows but y has {y.shape[0]} entries"
                )
            object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @cached_property
    def cov(self) -> np.ndarray:
        """Empirical (uncentered) covariance ``X'X / m``."""
        if self.m == 0:
            return np.zeros((self.n, self.n))
        return self.x.T @ self.x / self.m

    def rows(self, idx) -> "SampleMatrix":
        return SampleMatrix(self.x[idx], None if self.y is None else self.y[idx])


@dataclass(frozen=True, eq=False)
class SparseSpike:
    """Draw from the fixed-size sparse Rademacher prior: ``w = signs / sqrt(k)`` on ``support``."""

    n: int
    support: np.ndarray
    signs: np.ndarray

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=int)
        signs = np.asarray(self.signs, dtype=float)
        if support.shape != signs.shape or support.ndim != 1:
            raise InvalidParameter("support and signs must be matching 1-d arrays")
        if len(np.unique(support)) != len(support):
            raise InvalidParameter("support indices must be distinct")
        if np.any(np.abs(signs) != 1.0):
            raise InvalidParameter("signs must be +1 or -1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "signs", signs)

    @property
    def k(self) -> int:
        return len(self.support)

    @property
    def vector(self) -> np.ndarray:
        w = np.zeros(self.n)
        w[self.support] = self.signs / math.sqrt(self.k)
        return w


@dataclass(frozen=True)
class SpikedWishartParams:
    n: int
    k: int
    beta: float
    m: int

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.n:
            raise InvalidParameter(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.beta <= -1:
            raise InvalidParameter(f"beta must exceed -1, got {self.beta}")
        if self.m < 0:
            raise InvalidParameter("m must be nonnegative")


@dataclass(eq=False)
class SlrInstance:
    """Ground truth for sparse linear regression with Gaussian design."""

    covariance: Covariance
    w_star: np.ndarray
    sigma: float
    k: int
    oracle_scaling: Optional[DiagonalScaling] = None
    low_rank_part: Optional[np.ndarray] = None
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self) -> None:
        self.w_star = np.asarray(self.w_star, dtype=float).reshape(-1)
        if self.w_star.shape[0] != self.covariance.n:
            raise InvalidParameter("w_star length does not match covariance dimension")
        if self.sigma < 0:
            raise InvalidParameter("sigma must be nonnegative")
        if np.count_nonzero(self.w_star) > self.k:
            raise InvalidParameter(f"w_star has more than k={self.k} nonzeros")

    @property
    def n(self) -> int:
        return self.covariance.n

    def prediction_error(self, w_hat: np.ndarray) -> float:
        return self.covariance.norm_sq(np.asarray(w_hat) - self.w_star)


# ---------------------------------------------------------------------------
# Covariance constructions
# ---------------------------------------------------------------------------


def make_lvm_covariance(
    d_diag: np.ndarray, a: Optional[np.ndarray] = None
) -> tuple[Covariance, DiagonalScaling, np.ndarray]:
    """Latent-variable covariance ``diag(d_diag) + a a'``.

    Returns the covariance, the oracle diagonal ``D`` and the factor ``a``
    (so the low-rank part is ``a @ a.T`` with rank at most ``a.shape[1]``).
    """
    d_diag = np.asarray(d_diag, dtype=float).reshape(-1)
    n = d_diag.shape[0]
    if np.any(~np.isfinite(d_diag)) or np.any(d_diag <= 0):
        raise InvalidParameter("latent-variable noise variances must be > 0")
    if a is None:
        a = np.zeros((n, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != n:
        raise InvalidParameter(f"factor has {a.shape[0]} rows, expected {n}")
    if a.shape[1] > n:
        raise InvalidParameter("latent dimension h cannot exceed n")
    sigma = np.diag(d_diag) + a @ a.T
    return Covariance(sigma), DiagonalScaling(d_diag), a


def haar_orthogonal(n: int, rng: RngLike) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-corrected)."""
    rng = as_rng(rng)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def make_outlier_covariance(eigenvalues: np.ndarray, seed: RngLike = None) -> Covariance:
    """``U diag(eigenvalues) U'`` with ``U`` Haar-random."""
    lam = np.asarray(eigenvalues, dtype=float).reshape(-1)
    if np.any(lam <= 0) or np.any(~np.isfinite(lam)):
        raise InvalidParameter("eigenvalues must be finite and positive")
    if np.any(np.diff(lam) < 0):
        raise InvalidParameter("eigenvalues must be sorted ascending")
    u = haar_orthogonal(lam.shape[0], seed)
    return Covariance((u * lam) @ u.T)


def make_decay_covariance(n: int, eps: float) -> Covariance:
    """Identity minus a rank-one dip along ``(1, 1/2, 1/4, ...)``; single eigenvalue ``eps``."""
    if not 0 < eps <= 1:
        raise InvalidParameter("eps must lie in (0, 1]")
    v = 0.5 ** np.arange(n)
    v = v / np.linalg.norm(v)
    return Covariance(np.eye(n) - (1.0 - eps) * np.outer(v, v))


def make_spiked_covariance(n: int, spike: SparseSpike, beta: float) -> Covariance:
    if beta <= -1:
        raise InvalidParameter(f"beta must exceed -1 (got {beta}); I + beta ww' is not PSD")
    if spike.n != n:
        raise InvalidParameter("spike dimension does not match n")
    w = spike.vector
    return Covariance(np.eye(n) + beta * np.outer(w, w))


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def sample_sparse_spike(n: int, k: int, rng: RngLike) -> SparseSpike:
    if not 1 <= k <= n:
        raise InvalidParameter(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = as_rng(rng)
    support = np.sort(rng.choice(n, size=k, replace=False))
    signs = rng.choice(np.array([-1.0, 1.0]), size=k)
    return SparseSpike(n, support, signs)


def sample_gaussian(cov: Covariance, m: int, rng: RngLike) -> np.ndarray:
    if m < 0:
        raise InvalidParameter("m must be nonnegative")
    rng = as_rng(rng)
    g = rng.standard_normal((m, cov.n))
    return g @ cov.sqrt


def sample_slr(instance: SlrInstance, m: int, rng: RngLike) -> SampleMatrix:
    """Draw ``m`` i.i.d. pairs ``X ~ N(0, Sigma)``, ``y = <X, w*> + sigma * xi``."""
    if m < 1:
        raise InvalidParameter("m must be at least 1")
    rng = as_rng(rng)
    x = sample_gaussian(instance.covariance, m, rng)
    y = x @ instance.w_star
    if instance.sigma > 0:
        y = y + instance.sigma * rng.standard_normal(m)
    return SampleMatrix(x, y)


def sample_wishart_data(
    params: SpikedWishartParams, rng: RngLike, planted: bool = True
) -> tuple[SampleMatrix, Optional[SparseSpike]]:
    """Draw ``m`` rows from the spiked model (``planted``) or from ``N(0, I)``.

    Returns the samples together with the drawn spike (``None`` under the null).
    """
    rng = as_rng(rng)
    n, m = params.n, params.m
    if not planted:
        return SampleMatrix(rng.standard_normal((m, n))), None
    spike = sample_sparse_spike(n, params.k, rng)
    g = rng.standard_normal((m, n))
    w = spike.vector
    # (I + beta ww')^{1/2} = I + (sqrt(1 + beta) - 1) ww' for unit w
    c = math.sqrt(1.0 + params.beta) - 1.0
    z = g + c * np.outer(g @ w, w)
    return SampleMatrix(z), spike


# ---------------------------------------------------------------------------
# Oracle rescaling for covariances with outlier eigenvalues
# ---------------------------------------------------------------------------


def construct_outlier_rescaling(sigma: Covariance, d: int, k: int) -> DiagonalScaling:
    """Iteratively halve the coordinates that are heavy in the bottom-``d`` eigenspace.

    Starting from the identity, each of ``T = ceil(log2(lambda_max / lambda_min))``
    rounds halves every entry ``i`` whose unit vector has projection norm
    greater than ``1/(8k)`` onto ``D^{1/2} span(u_1, ..., u_d)``.
    """
    n = sigma.n
    if not 0 <= d < n:
        raise InvalidParameter(f"need 0 <= d < n, got d={d}")
    if k < 1:
        raise InvalidParameter("k must be positive")
    evals, evecs = sigma.eigenvalues, sigma.eigenvectors
    if evals[0] <= PSD_RTOL * evals[-1]:
        raise NotPositiveDefinite("outlier rescaling needs a positive definite covariance")
    rounds = max(0, math.ceil(math.log2(evals[-1] / evals[0])))
    diag = np.ones(n)
    if d == 0:
        return DiagonalScaling(diag)
    kernel = evecs[:, :d]
    cutoff = 1.0 / (8.0 * k)
    for _ in range(rounds):
        q, _r = np.linalg.qr(np.sqrt(diag)[:, None] * kernel)
        heavy = np.linalg.norm(q, axis=1) > cutoff
        if not heavy.any():
            break
        diag[heavy] /= 2.0
    return DiagonalScaling(diag)


# ---------------------------------------------------------------------------
# Restricted lower bound falsifier
# ---------------------------------------------------------------------------


def _in_cone(v: np.ndarray, gamma: float) -> bool:
    return np.abs(v).sum() <= gamma * np.abs(v).max() * (1 + 1e-12)


def find_restricted_violation(
    x: SampleMatrix,
    d: DiagonalScaling,
    gamma: float,
    trials: int = 1000,
    rng: RngLike = None,
) -> Optional[np.ndarray]:
    """Search for ``v`` with ``||v||_1 <= gamma ||v||_inf`` and ``v'v > v' M v``.

    ``M = D^{-1/2} Sigma_hat D^{-1/2}``. Returns a violating vector or ``None``.
    The search is randomized, so ``None`` is evidence and not proof.
    """
    if gamma <= 1:
        raise InvalidParameter("gamma must exceed 1")
    rng = as_rng(rng)
    n = x.n
    s = 1.0 / np.sqrt(d.d)
    mat = x.cov * s[:, None] * s[None, :]
    tol = 1e-12

    def violates(v: np.ndarray) -> bool:
        return float(v @ mat @ v) < float(v @ v) * (1 - tol)

    # 1-sparse directions
    diag = np.diag(mat)
    bad = np.flatnonzero(diag < 1 - tol)
    if bad.size:
        v = np.zeros(n)
        v[bad[0]] = 1.0
        return v

    # exact minimum over every 2-sparse support (needs gamma >= 2)
    if gamma >= 2 and n >= 2:
        a = diag[:, None]
        c = diag[None, :]
        half_gap = (a - c) / 2
        lam_min = (a + c) / 2 - np.sqrt(half_gap**2 + mat**2)
        np.fill_diagonal(lam_min, np.inf)
        i, j = np.unravel_index(np.argmin(lam_min), lam_min.shape)
        block = mat[np.ix_([i, j], [i, j])]
        w, vecs = np.linalg.eigh(block)
        v = np.zeros(n)
        v[[i, j]] = vecs[:, 0]
        if violates(v):
            return v

    # bottom eigenvectors of M, truncated to their largest entries
    evals, evecs = np.linalg.eigh(mat)
    max_support = min(n, max(1, math.ceil(gamma)))
    for col in range(min(n, 5)):
        u = evecs[:, col]
        order = np.argsort(-np.abs(u))
        for size in sorted({1, 2, 3, max_support // 4, max_support // 2, max_support, n}):
            if size < 1 or size > n:
                continue
            v = np.zeros(n)
            v[order[:size]] = u[order[:size]]
            if _in_cone(v, gamma) and violates(v):
                return v

    # random sparse probes pushed out to the cone boundary
    for _ in range(trials):
        size = int(rng.integers(1, max_support + 1))
        support = rng.choice(n, size=size, replace=False)
        v = np.zeros(n)
        v[support] = rng.standard_normal(size)
        if rng.random() < 0.5 and size < n:
            peak = np.abs(v).max()
            slack = gamma * peak - np.abs(v).sum()
            rest = np.setdiff1d(np.arange(n), support)
            if slack > 0 and rest.size:
                tail = rng.standard_normal(rest.size)
                tail *= min(slack / np.abs(tail).sum(), peak / np.abs(tail).max())
                v[rest] = tail
        if violates(v):
            return v
    return None


def check_restricted_lower_bound(
    x: SampleMatrix,
    d: DiagonalScaling,
    gamma: float,
    trials: int = 1000,
    rng: RngLike = None,
) -> bool:
    """Randomized test of ``I <= D^{-1/2} Sigma_hat D^{-1/2}`` on the ``gamma``-sparse cone.

    ``False`` is a certificate of non-membership; ``True`` only means no
    violation was found.
    """
    return find_restricted_violation(x, d, gamma, trials, rng) is None
