"""Negative-spike sparse PCA: detection through sparse regression and kernel certificates.

Detection regresses each coordinate on the others and looks for one whose
out-of-sample residual variance is clearly below one. Under the null every
coordinate is independent standard normal, so no regression can help.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameter, RankDegenerate, RllabError
from .models import DiagonalScaling, RngLike, SampleMatrix, as_rng
from .rescale import SmartScalingConfig, smart_scaling
from .solvers import LassoConfig, weighted_lasso

BACKENDS = ("rescaled_lasso", "weighted_lasso", "oracle")
RANK_RTOL = 1e-9


def default_holdout(n: int) -> int:
    return max(50, math.ceil(10.0 * math.log(n)))


def chi_square_threshold(n: int, holdout: int, delta: float) -> float:
    """Lower-tail cutoff for the smallest of ``n`` holdout averages of ``holdout`` squared standard normals.

    Uses ``P[chi2_h / h <= 1 - 2 sqrt(t / h)] <= exp(-t)`` with ``t = log(n / delta)``,
    so the null rejects with probability at most ``delta``.
    """
    if not 0 < delta < 1:
        raise InvalidParameter("delta must lie in (0, 1)")
    return 1.0 - 2.0 * math.sqrt(math.log(n / delta) / holdout)


@dataclass
class DetectionConfig:
    k: int
    holdout: Optional[int] = None  # defaults to max(50, ceil(10 log n))
    eta_threshold: float = 0.9
    slr_backend: str = "rescaled_lasso"
    lam: Optional[float] = None  # defaults to 2 sqrt(2 log(2n) / m_train)
    support: Optional[Sequence[int]] = None  # required by the oracle backend
    shared_scaling: bool = True  # one SmartScaling run on all coordinates instead of one per regression
    scaling: Optional[SmartScalingConfig] = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidParameter("k must be positive")
        if self.holdout is not None and self.holdout < 1:
            raise InvalidParameter("holdout must be at least 1")
        if not 0 < self.eta_threshold < 1:
            raise InvalidParameter("eta_threshold must lie in (0, 1)")
        if self.slr_backend not in BACKENDS:
            raise InvalidParameter(f"unknown backend {self.slr_backend!r}; choose from {BACKENDS}")
        if self.slr_backend == "oracle" and self.support is None:
            raise InvalidParameter("the oracle backend needs the spike support")


@dataclass
class DetectionResult:
    decision: int
    eta: np.ndarray
    argmin: int
    threshold: float

    @property
    def min_eta(self) -> float:
        return float(self.eta[self.argmin])


class BackendFailure(RllabError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"regression for coordinate {index} failed: {cause}")
        self.index = index
        self.cause = cause


def conditional_variance_spike(k: int, beta: float) -> float:
    """``Var(Z_i | Z_rest)`` for a support coordinate under ``N(0, I + beta w w')``."""
    if beta <= -1:
        raise InvalidParameter(f"beta must exceed -1, got {beta}")
    if k < 1:
        raise InvalidParameter("k must be positive")
    return (1.0 + beta) / (1.0 + beta * (1.0 - 1.0 / k))


def _least_squares(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if x.shape[1] == 0:
        return np.zeros(0)
    return np.linalg.lstsq(x, y, rcond=None)[0]


def pca_detect(z: SampleMatrix, cfg: DetectionConfig) -> DetectionResult:
    """Reject the null when some coordinate is predictable from the others.

    The first ``m - holdout`` rows fit the regressions and the last ``holdout``
    rows score them; ``eta[i]`` is the holdout mean squared residual of
    coordinate ``i``.
    """
    m, n = z.m, z.n
    holdout = cfg.holdout if cfg.holdout is not None else default_holdout(n)
    if m <= holdout:
        raise InvalidParameter(f"need more than {holdout} samples, got {m}")
    train = z.x[: m - holdout]
    test = z.x[m - holdout :]
    m_train = train.shape[0]
    lam = cfg.lam if cfg.lam is not None else 2.0 * math.sqrt(2.0 * math.log(2 * n) / m_train)
    eta = np.empty(n)
    everyone = np.arange(n)

    weights: Optional[np.ndarray] = None
    if cfg.slr_backend == "rescaled_lasso" and cfg.shared_scaling:
        d_hat, _ = smart_scaling(SampleMatrix(train), cfg.scaling or SmartScalingConfig(k=cfg.k))
        weights = d_hat.d
    support = set(int(i) for i in cfg.support) if cfg.support is not None else set()

    for i in range(n):
        rest = everyone[everyone != i]
        try:
            if cfg.slr_backend == "oracle":
                cols = np.array(sorted(support - {i}), dtype=int) if i in support else np.zeros(0, int)
                coef = _least_squares(train[:, cols], train[:, i])
                pred = test[:, cols] @ coef
            else:
                data = SampleMatrix(train[:, rest], train[:, i])
                if cfg.slr_backend == "weighted_lasso":
                    w_diag = data.x.var(axis=0)
                elif weights is not None:
                    w_diag = weights[rest]
                else:
                    d_hat, _ = smart_scaling(SampleMatrix(data.x), cfg.scaling or SmartScalingConfig(k=cfg.k))
                    w_diag = d_hat.d
                coef = weighted_lasso(data, LassoConfig(lam=lam, weights=DiagonalScaling(w_diag)))
                pred = test[:, rest] @ coef
        except RllabError as exc:
            raise BackendFailure(i, exc) from exc
        resid = test[:, i] - pred
        eta[i] = float(resid @ resid) / holdout
    argmin = int(np.argmin(eta))
    return DetectionResult(int(eta[argmin] < cfg.eta_threshold), eta, argmin, cfg.eta_threshold)


# ---------------------------------------------------------------------------
# Kernel certificate for the sparse minimum-eigenvalue relaxation
# ---------------------------------------------------------------------------


@dataclass
class SdpCertificate:
    a: np.ndarray
    objective: float
    l1_mass: float
    feasible: bool
    rank: int = field(default=0)


def sdp_kernel_certificate(z: SampleMatrix, k: float) -> SdpCertificate:
    """Feasible point ``(I - P) / (n - r)`` with ``P`` the projection onto the row space of the data.

    Its inner product with ``Sigma_hat`` vanishes, so whenever its entrywise
    l1 mass is at most ``k`` it certifies a relaxation value of zero.
    """
    m, n = z.m, z.n
    if m >= n:
        raise RankDegenerate(f"kernel of the sample covariance is empty for m={m} >= n={n}")
    if m == 0:
        rank = 0
        proj = np.zeros((n, n))
    else:
        _u, s, vt = np.linalg.svd(z.x, full_matrices=False)
        rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
        basis = vt[:rank]
        proj = basis.T @ basis
    a = (np.eye(n) - proj) / (n - rank)
    a = (a + a.T) / 2.0
    objective = float(np.sum(z.cov * a))
    l1_mass = float(np.abs(a).sum())
    return SdpCertificate(a=a, objective=objective, l1_mass=l1_mass, feasible=l1_mass <= k, rank=rank)


def random_projection(n: int, m: int, rng: RngLike) -> np.ndarray:
    """Orthogonal projection onto a uniformly random ``m``-dimensional subspace of ``R^n``."""
    if not 0 <= m <= n:
        raise InvalidParameter(f"need 0 <= m <= n, got m={m}, n={n}")
    rng = as_rng(rng)
    if m == 0:
        return np.zeros((n, n))
    q, _r = np.linalg.qr(rng.standard_normal((n, m)))
    return q @ q.T


def projection_entry_sum(n: int, m: int, trials: int, rng: RngLike) -> np.ndarray:
    """Entrywise l1 norms ``sum_ij |P_ij|`` of ``trials`` random rank-``m`` projections."""
    rng = as_rng(rng)
    return np.array([np.abs(random_projection(n, m, rng)).sum() for _ in range(trials)])


def projection_sum_bound(n: int, m: int, delta: float) -> float:
    return 11.0 * n * math.sqrt(m * math.log(n / delta))
