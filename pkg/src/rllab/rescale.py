"""SmartScaling, the rescaled Lasso estimator and checks of the scaling guarantees."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConvergenceFailure, InvalidParameter, IterationLimitExceeded
from .models import (
    DiagonalScaling,
    RngLike,
    SampleMatrix,
    SlrInstance,
    as_rng,
    find_restricted_violation,
)
from .solvers import (
    LassoConfig,
    largest_eigenvalue,
    scaled_gram,
    solve_pinned_batch,
    unit_diagonal,
    weighted_lasso,
)


RESOLUTION_FLOOR = 1e-13


@dataclass
class SmartScalingConfig:
    k: int
    div: float = 2.0
    b: Optional[float] = None  # defaults to 16 k
    iteration_cap: Optional[int] = None
    termination_threshold: float = 1.0
    batch: bool = False  # halve every index at or below the threshold in one pass
    tol: float = 1e-8
    max_solver_iters: int = 10_000
    strict: bool = False  # raise when a program cannot be decided within max_solver_iters

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidParameter("k must be positive")
        if self.b is None:
            self.b = 16.0 * self.k
        if self.div <= 1:
            raise InvalidParameter("div must exceed 1")
        if self.b < 1:
            raise InvalidParameter("budget b must be at least 1")
        if self.iteration_cap is not None and self.iteration_cap < 1:
            raise InvalidParameter("iteration_cap must be positive")


@dataclass
class ScalingStep:
    iteration: int
    i_min: int
    value: float
    new_diag_entry: float


@dataclass
class ScalingTrace:
    steps: list[ScalingStep] = field(default_factory=list)
    initial: Optional[np.ndarray] = None
    final: Optional[np.ndarray] = None
    final_values: Optional[np.ndarray] = None  # per-index program values at return
    iterations: int = 0  # passes that halved something
    undecided: int = 0  # programs decided by attained value after the solver budget ran out

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "i_min", "value", "new_diag_entry"])
            for s in self.steps:
                writer.writerow([s.iteration, s.i_min, repr(s.value), repr(s.new_diag_entry)])


def default_iteration_cap(cov: np.ndarray) -> int:
    n = cov.shape[0]
    evals = np.linalg.eigvalsh(cov)
    top = max(evals[-1], 1e-300)
    bottom = max(evals[0], 1e-12 * top)
    return int(n * 64 + n * math.ceil(math.log2(top / bottom)))


def program_values(
    x: SampleMatrix,
    d: np.ndarray,
    budget: float,
    *,
    threshold: Optional[float] = None,
    refine_below: bool = True,
    u0: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iters: int = 10_000,
    lipschitz: Optional[float] = None,
):
    """Solve the pinned program for every index at once under scaling ``d``."""
    gram = scaled_gram(x.cov, d)
    n = x.n
    return solve_pinned_batch(
        gram,
        np.arange(n),
        budget,
        u0,
        tol=tol,
        max_iters=max_iters,
        threshold=threshold,
        refine_below=refine_below,
        lipschitz=lipschitz,
    )


def smart_scaling(x: SampleMatrix, cfg: SmartScalingConfig) -> tuple[DiagonalScaling, ScalingTrace]:
    """Shrink diagonal entries until no pinned program reaches the threshold.

    Starts from ``diag(Sigma_hat)``. Each pass solves the pinned program for
    every index; if the smallest value is at most the threshold the
    corresponding entry is divided by ``div`` (all such entries in batch
    mode), otherwise the current diagonal is returned.
    """
    if x.m < 1:
        raise InvalidParameter("smart_scaling needs at least one sample")
    cov = x.cov
    d = np.diag(cov).copy()
    if np.any(d <= 0):
        zero = np.flatnonzero(d <= 0)
        raise InvalidParameter(f"columns {zero.tolist()} are identically zero")
    cap = cfg.iteration_cap if cfg.iteration_cap is not None else default_iteration_cap(cov)
    thr = cfg.termination_threshold
    trace = ScalingTrace(initial=d.copy())
    # the preconditioned quadratic form is the correlation matrix, fixed across passes
    lipschitz = largest_eigenvalue(unit_diagonal(cov)) * 1.01
    u = None
    iteration = 0
    while True:
        res = program_values(
            x,
            d,
            cfg.b,
            threshold=thr,
            refine_below=not cfg.batch,
            u0=u,
            tol=cfg.tol,
            max_iters=cfg.max_solver_iters,
            lipschitz=lipschitz,
        )
        values = res.values
        below = values <= thr
        undecided = ~res.settled & ~below
        if undecided.any():
            if cfg.strict:
                j = int(np.flatnonzero(undecided)[0])
                raise ConvergenceFailure(
                    f"could not decide the pinned program for index {j} against the threshold",
                    float(res.gaps[j]),
                )
            # attained value above the threshold: treated as above it
            trace.undecided += int(undecided.sum())
        if not below.any():
            trace.final = d.copy()
            trace.final_values = values
            trace.iterations = iteration
            return DiagonalScaling(d), trace
        # rescaling every entry by div multiplies every value by div, so the cap is certain
        top = float(values.max())
        doomed = (
            cfg.batch
            and below.all()
            and (top <= 0.0 or math.log(top) + (cap - iteration) * math.log(cfg.div) <= math.log(thr))
        )
        # past this shrinkage, rounding in Sigma_hat alone can lift a zero program value above the threshold
        unresolved = np.flatnonzero(below & (d < RESOLUTION_FLOOR * trace.initial))
        if iteration >= cap or doomed or unresolved.size:
            trace.final = d.copy()
            trace.final_values = values
            trace.iterations = iteration
            if unresolved.size:
                reason = f"diagonal entries {unresolved.tolist()} fell below machine resolution"
            else:
                reason = f"SmartScaling {'would exceed' if doomed else 'exceeded'} {cap} iterations"
            raise IterationLimitExceeded(
                f"{reason}; the restricted eigenvalue condition likely fails (e.g. duplicated columns)",
                trace,
            )
        iteration += 1
        chosen = np.flatnonzero(below) if cfg.batch else np.array([int(np.argmin(values))])
        old = d[chosen].copy()
        d[chosen] = old / cfg.div
        for i, val in zip(chosen, values[chosen]):
            trace.steps.append(ScalingStep(iteration, int(i), float(val), float(d[i])))
        # warm start: keep v = D^{-1/2} u fixed for every column
        u = res.u
        u[chosen, :] *= np.sqrt(d[chosen] / old)[:, None]


def rescaled_lasso(
    data: SampleMatrix,
    k: int,
    lam: float,
    scaling: Optional[SmartScalingConfig] = None,
    lasso: Optional[LassoConfig] = None,
) -> np.ndarray:
    """SmartScaling on the covariates followed by the weighted Lasso with weights ``D_hat^{1/2}``."""
    d_hat, _ = smart_scaling(data, scaling or SmartScalingConfig(k=k))
    return fit_weighted(data, d_hat, lam, lasso)


def fit_weighted(
    data: SampleMatrix, d_hat: DiagonalScaling, lam: float, lasso: Optional[LassoConfig] = None
) -> np.ndarray:
    cfg = lasso or LassoConfig(lam=lam)
    cfg = LassoConfig(
        lam=lam, max_iters=cfg.max_iters, tol=cfg.tol, weights=d_hat, check_monotone=cfg.check_monotone
    )
    return weighted_lasso(data, cfg)


# ---------------------------------------------------------------------------
# Guarantee checks
# ---------------------------------------------------------------------------


@dataclass
class ScalingReport:
    lower_bound_ok: Optional[bool]  # None when no oracle scaling is known
    restricted_ok: bool
    iterations_ok: Optional[bool]
    iteration_bound: Optional[float]
    iterations: Optional[int]
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(flag is not False for flag in (self.lower_bound_ok, self.restricted_ok, self.iterations_ok))


def find_small_energy_direction(
    x: SampleMatrix,
    d_hat: DiagonalScaling,
    budget: float,
    threshold: float = 1.0,
    probes: int = 1000,
    rng: RngLike = None,
) -> Optional[np.ndarray]:
    """Search for ``v`` with ``(1/m)||Xv||^2 <= threshold`` in the scaled budget cone.

    Candidates satisfy ``||D^{1/2} v||_inf = 1`` and ``||D^{1/2} v||_1 <= budget``.
    """
    rng = as_rng(rng)
    n = x.n
    gram = scaled_gram(x.cov, d_hat.d)
    sqrt_d = d_hat.sqrt

    def energy(u: np.ndarray) -> float:
        return float(u @ gram @ u)

    def normalized(u: np.ndarray) -> Optional[np.ndarray]:
        peak = np.abs(u).max()
        if peak == 0:
            return None
        u = u / peak
        if np.abs(u).sum() > budget * (1 + 1e-12):
            return None
        return u

    candidates = []
    # exact 2-sparse minimizers with entries of modulus at most one
    diag = np.diag(gram)
    for i in range(n):
        c = gram[i].copy()
        c[i] = np.inf
        j = int(np.argmax(np.abs(np.where(np.isfinite(c), c, 0.0)) / np.sqrt(diag)))
        if j == i:
            continue
        u = np.zeros(n)
        u[i] = 1.0
        u[j] = float(np.clip(-gram[i, j] / gram[j, j], -1.0, 1.0))
        candidates.append(u)
    # bottom eigenvectors truncated to fit the budget
    evals, evecs = np.linalg.eigh(gram)
    for col in range(min(n, 5)):
        e = evecs[:, col]
        order = np.argsort(-np.abs(e))
        for size in (1, 2, 4, 8, 16, int(budget)):
            size = min(size, n)
            u = np.zeros(n)
            u[order[:size]] = e[order[:size]]
            candidates.append(u)
    for _ in range(probes):
        size = int(rng.integers(1, min(n, max(1, int(budget))) + 1))
        support = rng.choice(n, size=size, replace=False)
        u = np.zeros(n)
        u[support] = rng.standard_normal(size)
        candidates.append(u)
    for u in candidates:
        u = normalized(u)
        if u is not None and energy(u) <= threshold:
            return u / sqrt_d
    return None


def verify_scaling_guarantees(
    instance: Optional[SlrInstance],
    x: SampleMatrix,
    d_hat: DiagonalScaling,
    trace: Optional[ScalingTrace] = None,
    k: Optional[int] = None,
    probes: int = 1000,
    rng: RngLike = None,
    div: float = 2.0,
) -> ScalingReport:
    """Check the three guarantees of the scaling output against an optional oracle diagonal.

    (i) ``D_hat >= D / 2`` entrywise, (ii) no probed direction in the budget
    cone has normalized energy at most one, (iii) the iteration count is within
    ``n * log_div max_i 2 Sigma_hat_ii / D_ii``.
    """
    violations: list[str] = []
    oracle = None if instance is None else instance.oracle_scaling
    k = k if k is not None else (instance.k if instance is not None else None)
    if k is None:
        raise InvalidParameter("sparsity k is required when no instance is given")
    budget = 16.0 * k

    lower_ok: Optional[bool] = None
    iterations_ok: Optional[bool] = None
    bound: Optional[float] = None
    if oracle is not None:
        ratio = d_hat.d / oracle.d
        lower_ok = bool(np.all(ratio >= 0.5 * (1 - 1e-12)))
        if not lower_ok:
            bad = np.flatnonzero(ratio < 0.5 * (1 - 1e-12))
            violations.append(f"D_hat below D/2 at indices {bad.tolist()}")
        if trace is not None:
            bound = x.n * math.log(max(np.max(2.0 * np.diag(x.cov) / oracle.d), 1.0), div)
            iterations_ok = trace.iterations <= bound + 1e-9
            if not iterations_ok:
                violations.append(f"{trace.iterations} iterations exceed bound {bound:.2f}")

    witness = find_small_energy_direction(x, d_hat, budget, 1.0, probes, rng)
    restricted_ok = witness is None
    if not restricted_ok:
        violations.append("found a budget-cone direction with normalized energy <= 1")
    return ScalingReport(
        lower_bound_ok=lower_ok,
        restricted_ok=restricted_ok,
        iterations_ok=iterations_ok,
        iteration_bound=bound,
        iterations=None if trace is None else trace.iterations,
        violations=violations,
    )


def restricted_condition_holds(
    x: SampleMatrix, oracle: DiagonalScaling, k: int, trials: int = 1000, rng: RngLike = None
) -> bool:
    """Randomized check that the oracle diagonal satisfies the sparse-cone lower bound at ``32k``."""
    return find_restricted_violation(x, oracle, 32.0 * k, trials, rng) is None
