"""Testing an empty Gaussian graphical model against a sparse nonempty one.

The test screens every pair of coordinates for a nonzero correlation. A
sparse precision matrix with one strong partial correlation always has some
pair whose marginal correlation is bounded below, so the largest pairwise
statistic separates the two hypotheses.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import DegenerateConditional, InvalidParameter, NotPositiveDefinite
from .models import SYMMETRY_RTOL, RngLike, SampleMatrix, as_rng

DEGENERATE_RTOL = 1e-14


@dataclass(eq=False)
class PrecisionMatrix:
    theta: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.theta, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise InvalidParameter(f"precision matrix must be square, got shape {t.shape}")
        scale = max(float(np.max(np.abs(t))), 1.0) if t.size else 1.0
        if t.size and np.max(np.abs(t - t.T)) > SYMMETRY_RTOL * scale:
            raise InvalidParameter("precision matrix is not symmetric")
        t = (t + t.T) / 2.0
        if t.size and np.linalg.eigvalsh(t)[0] <= 0:
            raise NotPositiveDefinite("precision matrix must be positive definite")
        self.theta = t

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    def covariance(self) -> np.ndarray:
        sigma = np.linalg.inv(self.theta)
        return (sigma + sigma.T) / 2.0

    def max_partial_correlation(self) -> float:
        """``max_{a != b} |Theta_ab| / sqrt(Theta_aa Theta_bb)``."""
        if self.n < 2:
            return 0.0
        s = 1.0 / np.sqrt(np.diag(self.theta))
        r = np.abs(self.theta * s[:, None] * s[None, :])
        np.fill_diagonal(r, 0.0)
        return float(r.max())

    def row_nonzeros(self) -> int:
        return int(np.max(np.count_nonzero(self.theta, axis=1))) if self.n else 0


@dataclass
class GgmTestConfig:
    k: int
    kappa: float
    delta: float = 0.05
    m: Optional[int] = None
    threshold: Optional[float] = None  # defaults to kappa^4 / (16 k^2)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidParameter("k must be positive")
        if not 0 <= self.kappa <= 1:
            raise InvalidParameter("kappa must lie in [0, 1]")
        if not 0 < self.delta < 1:
            raise InvalidParameter("delta must lie in (0, 1)")

    @property
    def decision_threshold(self) -> float:
        if self.threshold is not None:
            return self.threshold
        return self.kappa**4 / (16.0 * self.k**2)


@dataclass
class GgmTestResult:
    reject: bool  # True declares a nonempty graph
    pair: tuple[int, int]
    gamma: float
    threshold: float
    degenerate: bool = False

    @property
    def decision(self) -> str:
        return "H1" if self.reject else "H0"


def gamma_hat(x: np.ndarray, y: np.ndarray) -> float:
    """Explained over residual variance, ``R^2 / (1 - R^2)``, for the regression of ``y`` on ``x`` with intercept."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise InvalidParameter("x and y must have the same length")
    if x.size < 4:
        raise InvalidParameter("need at least 4 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx <= 0:
        raise InvalidParameter("x has zero sample variance")
    if syy <= 0:
        raise DegenerateConditional("y has zero sample variance")
    sxy = float(xc @ yc)
    explained = sxy * sxy / sxx
    residual = syy - explained
    if residual <= DEGENERATE_RTOL * syy:
        raise DegenerateConditional("residual variance vanishes; y is an affine function of x")
    return explained / residual


def pairwise_gamma(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All pairwise statistics at once and a mask of degenerate pairs.

    For a single regressor ``R^2`` is the squared sample correlation, so the
    statistic is symmetric in the pair.
    """
    zc = z - z.mean(axis=0)
    ss = np.einsum("ij,ij->j", zc, zc)
    if np.any(ss <= 0):
        raise InvalidParameter(f"columns {np.flatnonzero(ss <= 0).tolist()} have zero sample variance")
    gram = zc.T @ zc
    r2 = gram**2 / np.outer(ss, ss)
    residual = 1.0 - r2
    degenerate = residual <= DEGENERATE_RTOL
    np.fill_diagonal(degenerate, False)
    with np.errstate(divide="ignore"):
        g = np.where(degenerate, np.inf, r2 / np.where(degenerate, 1.0, residual))
    np.fill_diagonal(g, -np.inf)
    return g, degenerate


def null_threshold(n: int, m: int, delta: float) -> float:
    """Cutoff that every pair stays under with probability ``1 - delta`` when all coordinates are independent.

    Per pair ``gamma_hat <= 4 log(4 / delta') / m``; a union over the
    ``n (n - 1)`` ordered pairs sets ``delta' = delta / (n (n - 1))``.
    """
    if n < 2 or m < 1:
        raise InvalidParameter("need n >= 2 and m >= 1")
    return 4.0 * math.log(4.0 * n * (n - 1) / delta) / m


def recommended_samples(n: int, k: int, kappa: float, delta: float, c: float = 1.0) -> int:
    return math.ceil(c * k * k * math.log(n / delta) / kappa**4)


def ggm_empty_test(z: SampleMatrix, cfg: GgmTestConfig) -> GgmTestResult:
    """Declare a nonempty graph when the largest pairwise statistic exceeds the threshold.

    Ties in the maximum go to the lexicographically smallest pair. A
    degenerate pair (one column an affine function of another) is an
    immediate rejection with ``degenerate`` set.
    """
    if z.n < 2:
        raise InvalidParameter("need at least two coordinates")
    if z.m < 4:
        raise InvalidParameter("need at least 4 samples")
    if cfg.kappa > 0 and z.m < recommended_samples(z.n, cfg.k, cfg.kappa, cfg.delta):
        warnings.warn(
            f"{z.m} samples is below the recommended {recommended_samples(z.n, cfg.k, cfg.kappa, cfg.delta)}",
            stacklevel=2,
        )
    g, degenerate = pairwise_gamma(z.x)
    thr = cfg.decision_threshold
    if degenerate.any():
        i, j = (int(v) for v in np.argwhere(degenerate)[0])
        return GgmTestResult(True, (i, j), math.inf, thr, degenerate=True)
    flat = int(np.argmax(g))
    i, j = divmod(flat, z.n)
    value = float(g[i, j])
    return GgmTestResult(value > thr, (int(i), int(j)), value, thr)


def verify_invlb(theta: PrecisionMatrix, k: int) -> tuple[tuple[int, int], bool]:
    """Find a pair whose marginal correlation is at least ``(1/2k) max partial correlation^2``.

    The correlation is compared in absolute value; a negative partial
    correlation shows up as a negative marginal one.
    """
    n = theta.n
    if n < 2:
        raise InvalidParameter("need at least two coordinates")
    if k < 1:
        raise InvalidParameter("k must be positive")
    sigma = theta.covariance()
    s = 1.0 / np.sqrt(np.diag(sigma))
    corr = np.abs(sigma * s[:, None] * s[None, :])
    np.fill_diagonal(corr, -np.inf)
    target = theta.max_partial_correlation() ** 2 / (2.0 * k)
    flat = int(np.argmax(corr))
    i, j = divmod(flat, n)
    return (int(i), int(j)), bool(corr[i, j] >= target * (1 - 1e-12))


def conditional_variance_pair(theta: PrecisionMatrix, i: int, j: int) -> float:
    """``Var(X_i | X_rest minus j)`` from the 2x2 block of the precision matrix."""
    if i == j:
        raise InvalidParameter("indices must differ")
    t = theta.theta
    return float(t[j, j] / (t[i, i] * t[j, j] - t[i, j] ** 2))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def chain_precision(n: int, partial: float) -> PrecisionMatrix:
    """Tridiagonal precision with unit diagonal and partial correlation ``partial`` between neighbors."""
    if not 0 <= abs(partial) < 0.5:
        raise InvalidParameter("|partial| must be below 1/2 for a positive definite chain")
    t = np.eye(n)
    idx = np.arange(n - 1)
    t[idx, idx + 1] = -partial
    t[idx + 1, idx] = -partial
    return PrecisionMatrix(t)


def random_sparse_precision(n: int, k: int, rng: RngLike, strength: float = 1.0) -> PrecisionMatrix:
    """Random positive definite matrix with at most ``k + 1`` nonzeros per row.

    Builds a graph of maximum degree ``k`` by adding random edges, draws
    edge weights, then sets the diagonal by strict diagonal dominance plus a
    random margin.
    """
    rng = as_rng(rng)
    t = np.zeros((n, n))
    degree = np.zeros(n, dtype=int)
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    order = rng.permutation(len(pairs))
    target_edges = int(rng.integers(1, max(2, n * k // 2 + 1)))
    edges = 0
    for p in order:
        a, b = pairs[p]
        if degree[a] >= k or degree[b] >= k:
            continue
        w = rng.uniform(-strength, strength)
        if w == 0:
            continue
        t[a, b] = t[b, a] = w
        degree[a] += 1
        degree[b] += 1
        edges += 1
        if edges >= target_edges:
            break
    rowsum = np.abs(t).sum(axis=1)
    np.fill_diagonal(t, rowsum + rng.uniform(0.05, 1.0, size=n) * (rowsum + 0.1))
    return PrecisionMatrix(t)


def sample_ggm(theta: PrecisionMatrix, m: int, rng: RngLike) -> SampleMatrix:
    rng = as_rng(rng)
    chol = np.linalg.cholesky(theta.covariance())
    return SampleMatrix(rng.standard_normal((m, theta.n)) @ chol.T)


def write_test_csv(rows: Iterable[dict], path) -> None:
    fields = ["seed", "hypothesis_truth", "decision", "argmax_i", "argmax_j", "gamma_hat", "threshold"]
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({f: row[f] for f in fields})
