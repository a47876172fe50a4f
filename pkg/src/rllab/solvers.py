"""Convex kernels: the weighted Lasso and the pinned l1-ball quadratic program.

Objective conventions carry no 1/2 factor:

* Lasso: ``(1/m) ||X w - y||^2 + lam * sum_j s_j |w_j|`` with ``s = sqrt(d_hat)``.
* Pinned program: ``min (1/m) ||X v||^2`` subject to ``(D^{1/2} v)_i = 1`` and
  ``||D^{1/2} v||_1 <= B``, solved in the coordinates ``u = D^{1/2} v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConvergenceFailure, InvalidParameter
from .models import DiagonalScaling, SampleMatrix

# ---------------------------------------------------------------------------
# l1-ball projection
# ---------------------------------------------------------------------------


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x : ||x||_1 <= radius}`` by sorting."""
    v = np.asarray(v, dtype=float)
    return project_l1_ball_columns(v.reshape(-1, 1), radius).reshape(v.shape)


def project_l1_ball_columns(v: np.ndarray, radius: float) -> np.ndarray:
    """Project every column of ``v`` onto the l1 ball of the given radius."""
    if radius < 0:
        raise InvalidParameter("radius must be nonnegative")
    if radius == 0:
        return np.zeros_like(v)
    mag = np.abs(v)
    inside = mag.sum(axis=0) <= radius
    if inside.all():
        return v.copy()
    out = v.copy()
    cols = np.flatnonzero(~inside)
    a = mag[:, cols]
    srt = -np.sort(-a, axis=0)
    csum = np.cumsum(srt, axis=0) - radius
    idx = np.arange(1, a.shape[0] + 1)[:, None]
    # last position where the sorted entry still exceeds the running threshold
    cond = srt - csum / idx > 0
    rho = a.shape[0] - 1 - np.argmax(cond[::-1], axis=0)
    theta = csum[rho, np.arange(len(cols))] / (rho + 1)
    out[:, cols] = np.sign(v[:, cols]) * np.maximum(a - theta, 0.0)
    return out


# ---------------------------------------------------------------------------
# Weighted Lasso by coordinate descent
# ---------------------------------------------------------------------------


@dataclass
class LassoConfig:
    lam: float
    max_iters: Optional[int] = None  # sweeps; defaults to 50 * n
    tol: float = 1e-8
    weights: Optional[DiagonalScaling] = None  # penalty uses sqrt of these entries
    check_monotone: bool = True

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise InvalidParameter("lambda must be nonnegative")
        if self.tol <= 0:
            raise InvalidParameter("tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise InvalidParameter("max_iters must be positive")


def lasso_objective(data: SampleMatrix, w: np.ndarray, lam: float, penalty_weights=None) -> float:
    r = data.x @ w - data.y
    s = np.ones(data.n) if penalty_weights is None else np.asarray(penalty_weights)
    return float(r @ r / data.m + lam * np.sum(s * np.abs(w)))


def lasso_kkt_residual(
    gram: np.ndarray, xty: np.ndarray, w: np.ndarray, lam: float, s: np.ndarray
) -> float:
    """Largest KKT violation of ``w`` for the weighted Lasso in covariance form."""
    grad = 2.0 * (gram @ w - xty)
    active = w != 0
    viol = np.where(
        active,
        np.abs(grad + lam * s * np.sign(w)),
        np.maximum(np.abs(grad) - lam * s, 0.0),
    )
    return float(viol.max()) if viol.size else 0.0


def _soft_threshold(z: float, t: float) -> float:
    # ties at the boundary go to zero
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def weighted_lasso(
    data: SampleMatrix, cfg: LassoConfig, w0: Optional[np.ndarray] = None
) -> np.ndarray:
    """Minimize ``(1/m)||Xw - y||^2 + lam ||D^{1/2} w||_1`` by cyclic coordinate descent.

    Sweeps alternate between the full coordinate set and the current active
    set. Between sweeps the iterate is pushed toward the exact minimizer on
    its current sign pattern (kept only when the objective does not rise),
    which removes the slow tail of plain coordinate descent on
    ill-conditioned designs. Convergence is declared only after a full KKT
    check passes.
    """
    if data.y is None:
        raise InvalidParameter("weighted_lasso needs a response vector")
    if data.m < 1:
        raise InvalidParameter("need at least one sample")
    n = data.n
    gram = data.cov
    xty = data.x.T @ data.y / data.m
    s = np.ones(n) if cfg.weights is None else cfg.weights.sqrt
    if s.shape[0] != n:
        raise InvalidParameter("weights length does not match the number of columns")
    thresh = cfg.lam * s / 2.0
    diag = np.diag(gram).copy()
    max_sweeps = cfg.max_iters if cfg.max_iters is not None else 50 * n

    w = np.zeros(n) if w0 is None else np.array(w0, dtype=float)
    gw = gram @ w
    yy = float(data.y @ data.y) / data.m

    def objective() -> float:
        return float(w @ gw - 2.0 * xty @ w + yy + cfg.lam * np.sum(s * np.abs(w)))

    def sweep(coords) -> float:
        biggest = 0.0
        for j in coords:
            djj = diag[j]
            old = w[j]
            if djj <= 0.0:
                new = 0.0
            else:
                z = xty[j] - (gw[j] - djj * old)
                new = _soft_threshold(z, thresh[j]) / djj
            if new != old:
                delta = new - old
                gw[:] += gram[:, j] * delta
                w[j] = new
                biggest = max(biggest, abs(delta) * math.sqrt(max(djj, 0.0)))
        return biggest

    def face_step() -> bool:
        """Move toward the minimizer on the current sign face, stopping at the first zero crossing."""
        active = np.flatnonzero(w)
        if active.size == 0 or active.size > data.m:
            return False
        signs = np.sign(w[active])
        try:
            target = np.linalg.solve(
                gram[np.ix_(active, active)], xty[active] - thresh[active] * signs
            )
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(target)):
            return False
        start = w[active].copy()
        flips = np.flatnonzero(np.sign(target) != signs)
        step = 1.0
        hit = -1
        if flips.size:
            fractions = start[flips] / (start[flips] - target[flips])
            hit = int(flips[np.argmin(fractions)])
            step = float(fractions.min())
        trial = start + step * (target - start)
        if hit >= 0:
            trial[hit] = 0.0
        before = objective()
        w[active] = trial
        gw[:] = gram @ w
        if objective() <= before:
            return True
        w[active] = start
        gw[:] = gram @ w
        return False

    previous = objective()
    sweeps = 0
    residual = math.inf
    while sweeps < max_sweeps:
        sweep(range(n))
        sweeps += 1
        current = objective()
        _check_decrease(cfg, previous, current)
        previous = current
        # inner passes over the active set, with an occasional exact solve on the sign face
        inner = 0
        while sweeps < max_sweeps:
            active = np.flatnonzero(w)
            if active.size == 0:
                break
            change = sweep(active)
            sweeps += 1
            inner += 1
            if inner % 5 == 0:
                face_step()
            current = objective()
            _check_decrease(cfg, previous, current)
            previous = current
            if change <= cfg.tol * 1e-2:
                break
        face_step()
        current = objective()
        _check_decrease(cfg, previous, current)
        previous = current
        gw[:] = gram @ w  # refresh accumulated round-off
        residual = lasso_kkt_residual(gram, xty, w, cfg.lam, s)
        if residual <= cfg.tol:
            return w
    raise ConvergenceFailure(f"weighted_lasso did not converge in {max_sweeps} sweeps", residual)


def _check_decrease(cfg: LassoConfig, previous: float, current: float) -> None:
    if cfg.check_monotone and current > previous + 1e-10 * max(1.0, abs(previous)):
        raise ConvergenceFailure(
            "coordinate descent objective increased", current - previous
        )


# ---------------------------------------------------------------------------
# Pinned l1-ball quadratic program
# ---------------------------------------------------------------------------


@dataclass
class QpL1Config:
    budget: float
    pinned_index: int = 0
    max_iters: int = 10_000
    tol: float = 1e-8
    backtrack_factor: float = 2.0  # multiply the step-size denominator on a failed descent test
    check_every: int = 10

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise InvalidParameter("budget B must be at least 1")
        if self.tol <= 0 or self.max_iters < 1:
            raise InvalidParameter("tol and max_iters must be positive")
        if self.backtrack_factor <= 1:
            raise InvalidParameter("backtrack_factor must exceed 1")


def largest_eigenvalue(mat: np.ndarray, iters: int = 300, rtol: float = 1e-6) -> float:
    """Power iteration for the top eigenvalue of a symmetric PSD matrix."""
    n = mat.shape[0]
    if n == 0:
        return 0.0
    v = np.ones(n) / math.sqrt(n) + 1e-3 * np.cos(np.arange(n))
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / norm
        if abs(new - est) <= rtol * abs(new):
            return max(new, norm)
        est = new
    return max(est, float(np.linalg.norm(mat @ v)))


def project_weighted_l1_columns(v: np.ndarray, weights: np.ndarray, radius: float) -> np.ndarray:
    """Project every column of ``v`` onto ``{x : sum_j weights_j |x_j| <= radius}``.

    ``weights`` is a positive vector shared by all columns. The solution is a
    weighted soft-threshold whose level is found by sorting ``|v_j| / weights_j``.
    """
    if radius < 0:
        raise InvalidParameter("radius must be nonnegative")
    if radius == 0:
        return np.zeros_like(v)
    w = np.asarray(weights, dtype=float)[:, None]
    mag = np.abs(v)
    inside = (w * mag).sum(axis=0) <= radius
    if inside.all():
        return v.copy()
    out = v.copy()
    cols = np.flatnonzero(~inside)
    a = mag[:, cols]
    order = np.argsort(-(a / w), axis=0)
    a_s = np.take_along_axis(a, order, axis=0)
    w_s = np.broadcast_to(w, a.shape)
    w_s = np.take_along_axis(w_s, order, axis=0)
    levels = (np.cumsum(w_s * a_s, axis=0) - radius) / np.cumsum(w_s**2, axis=0)
    cond = a_s / w_s > levels
    rho = a.shape[0] - 1 - np.argmax(cond[::-1], axis=0)
    theta = levels[rho, np.arange(len(cols))]
    out[:, cols] = np.sign(v[:, cols]) * np.maximum(a - theta * w, 0.0)
    return out


@dataclass
class PinnedBatchResult:
    u: np.ndarray  # n x c solutions in rescaled coordinates
    values: np.ndarray  # objective at u
    gaps: np.ndarray  # Frank-Wolfe duality gaps, upper bounds on suboptimality
    pg_norms: np.ndarray  # projected-gradient norms (in the diagonally preconditioned variables)
    settled: np.ndarray  # converged or decided against the threshold
    iterations: int


class _PinnedProblem:
    """The batch program in variables ``z = S u`` where ``S = sqrt(diag G)``.

    In these variables the quadratic form has unit diagonal and the l1
    constraint on the free coordinates becomes ``sum_j |z_j| / S_j <= B - 1``.
    """

    def __init__(self, gram: np.ndarray, pins: np.ndarray, radius: float):
        scale = np.sqrt(np.clip(np.diag(gram), 0.0, None))
        scale[scale == 0] = 1.0
        self.scale = scale
        self.weights = 1.0 / scale
        self.gram = gram / np.outer(scale, scale)
        self.pins = pins
        self.radius = radius

    def project(self, z: np.ndarray, pins: np.ndarray) -> np.ndarray:
        cols = np.arange(z.shape[1])
        free = z.copy()
        free[pins, cols] = 0.0
        out = project_weighted_l1_columns(free, self.weights, self.radius)
        out[pins, cols] = self.scale[pins]
        return out

    def certificates(self, gz: np.ndarray, z: np.ndarray, pins: np.ndarray, lip: float):
        cols = np.arange(z.shape[1])
        grad = 2.0 * gz
        values = np.einsum("ij,ij->j", z, gz)
        gfree = grad.copy()
        gfree[pins, cols] = 0.0
        zfree = z.copy()
        zfree[pins, cols] = 0.0
        # linear minimization over the weighted ball picks the best ratio |g_j| / w_j
        gaps = np.einsum("ij,ij->j", gfree, zfree) + self.radius * np.abs(
            gfree * self.scale[:, None]
        ).max(axis=0)
        step = self.project(z - grad / lip, pins)
        pg = lip * np.linalg.norm(z - step, axis=0)
        return values, np.maximum(gaps, 0.0), pg


def solve_pinned_batch(
    gram: np.ndarray,
    pins: np.ndarray,
    budget: float,
    u0: Optional[np.ndarray] = None,
    *,
    tol: float = 1e-8,
    max_iters: int = 10_000,
    threshold: Optional[float] = None,
    refine_below: bool = True,
    lipschitz: Optional[float] = None,
    backtrack_factor: float = 2.0,
    check_every: int = 10,
) -> PinnedBatchResult:
    """Accelerated projected gradient for ``min u' G u`` over ``u_p = 1, ||u_{-p}||_1 <= B - 1``.

    Each column of the batch has its own pinned coordinate ``pins[c]``. The
    iteration runs on the diagonally preconditioned problem (see
    ``_PinnedProblem``); ``lipschitz`` is the top eigenvalue of the unit-diagonal
    matrix ``G / sqrt(diag G diag G')`` if the caller has it cached. A column
    stops once its projected-gradient norm or duality gap is below ``tol``;
    with a ``threshold`` it also stops when the gap certifies the minimum is
    above the threshold, or (``refine_below=False``) when its value already
    sits at or below it.
    """
    n = gram.shape[0]
    pins = np.asarray(pins, dtype=int)
    c = pins.shape[0]
    radius = budget - 1.0
    cols = np.arange(c)
    prob = _PinnedProblem(gram, pins, radius)
    if u0 is None:
        u0 = np.zeros((n, c))
        u0[pins, cols] = 1.0
    z = prob.project(np.asarray(u0, dtype=float) * prob.scale[:, None], pins)
    g = prob.gram

    lip = 2.0 * (lipschitz if lipschitz is not None else largest_eigenvalue(g) * 1.01)
    lip = max(lip, 1e-300)

    values = np.empty(c)
    gaps = np.empty(c)
    pg = np.empty(c)
    settled = np.zeros(c, dtype=bool)
    live = np.arange(c)

    if radius == 0.0:
        values, _, _ = prob.certificates(g @ z, z, pins, lip)
        return PinnedBatchResult(
            z / prob.scale[:, None], values, np.zeros(c), np.zeros(c), np.ones(c, bool), 0
        )

    xl = z
    gxl = g @ xl
    yl, gyl = xl, gxl
    fl = np.einsum("ij,ij->j", xl, gxl)
    tk = np.ones(c)
    iteration = 0
    while live.size and iteration < max_iters:
        iteration += 1
        pl = pins[live]
        xn = prob.project(yl - 2.0 * gyl / lip, pl)
        gxn = g @ xn
        diff = xn - yl
        curv = np.einsum("ij,ij->j", diff, gxn - gyl)
        # quadratic descent test: d'Gd <= (L/2)||d||^2
        if np.any(curv > 0.5 * lip * np.einsum("ij,ij->j", diff, diff) * (1 + 1e-12)):
            lip *= backtrack_factor
            continue
        fn = np.einsum("ij,ij->j", xn, gxn)
        # function-value restart: drop the momentum of any column that went uphill
        restart = fn > fl
        tn = (1.0 + np.sqrt(1.0 + 4.0 * tk[live] ** 2)) / 2.0
        mom = np.where(restart, 0.0, (tk[live] - 1.0) / tn)
        tk[live] = np.where(restart, 1.0, tn)
        yl = xn + mom * (xn - xl)
        gyl = gxn + mom * (gxn - gxl)
        xl, gxl, fl = xn, gxn, fn

        if iteration % check_every == 0 or iteration == 1:
            v_, g_, p_ = prob.certificates(gxl, xl, pl, lip)
            done = (g_ <= tol) | (p_ <= tol)
            if threshold is not None:
                done |= v_ - g_ > threshold
                if not refine_below:
                    done |= v_ <= threshold
            if done.any():
                idx = live[done]
                z[:, idx] = xl[:, done]
                values[idx], gaps[idx], pg[idx] = v_[done], g_[done], p_[done]
                settled[idx] = True
                keepc = ~done
                live = live[keepc]
                xl, gxl, fl = xl[:, keepc], gxl[:, keepc], fl[keepc]
                yl, gyl = yl[:, keepc], gyl[:, keepc]
    if live.size:
        v_, g_, p_ = prob.certificates(gxl, xl, pins[live], lip)
        z[:, live] = xl
        values[live], gaps[live], pg[live] = v_, g_, p_
    return PinnedBatchResult(z / prob.scale[:, None], values, gaps, pg, settled, iteration)


def unit_diagonal(gram: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    scale[scale == 0] = 1.0
    return gram / np.outer(scale, scale)


def scaled_gram(cov: np.ndarray, d: np.ndarray) -> np.ndarray:
    # sqrt of the outer product keeps cov_ii / d_i exact on the diagonal
    return cov / np.sqrt(np.outer(d, d))


def min_quadratic_l1ball(
    x: SampleMatrix, d_hat: DiagonalScaling, cfg: QpL1Config
) -> tuple[np.ndarray, float]:
    """Solve the pinned program for one index; return ``(v, (1/m)||X v||^2)``."""
    n = x.n
    i = cfg.pinned_index
    if not 0 <= i < n:
        raise InvalidParameter(f"pinned index {i} out of range for n={n}")
    if d_hat.n != n:
        raise InvalidParameter("scaling length does not match the number of columns")
    sqrt_d = d_hat.sqrt
    if cfg.budget == 1:
        v = np.zeros(n)
        v[i] = 1.0 / sqrt_d[i]
    else:
        gram = scaled_gram(x.cov, d_hat.d)
        free = np.delete(np.arange(n), i)
        unit = unit_diagonal(gram)
        lip = largest_eigenvalue(unit[np.ix_(free, free)]) * 1.01 if n > 1 else 0.0
        res = solve_pinned_batch(
            gram,
            np.array([i]),
            cfg.budget,
            tol=cfg.tol,
            max_iters=cfg.max_iters,
            lipschitz=max(lip, 1e-12),
            backtrack_factor=cfg.backtrack_factor,
            check_every=cfg.check_every,
        )
        if not res.settled[0]:
            raise ConvergenceFailure(
                f"pinned program for index {i} did not converge in {cfg.max_iters} iterations",
                float(min(res.pg_norms[0], res.gaps[0])),
            )
        v = res.u[:, 0] / sqrt_d
    xv = x.x @ v
    return v, float(xv @ xv) / x.m


def weighted_lasso_path(
    data: SampleMatrix,
    lambdas: np.ndarray,
    weights: Optional[DiagonalScaling] = None,
    max_steps: Optional[int] = None,
) -> np.ndarray:
    """Exact weighted Lasso solutions at every requested penalty by homotopy.

    Follows the piecewise-linear solution path from the all-zero solution,
    adding a coordinate when its correlation reaches the penalty and removing
    one when its coefficient crosses zero. Returns an array with one row per
    entry of ``lambdas`` (in the given order).
    """
    if data.y is None:
        raise InvalidParameter("weighted_lasso_path needs a response vector")
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 0):
        raise InvalidParameter("penalties must be nonnegative")
    n, m = data.n, data.m
    s = np.ones(n) if weights is None else weights.sqrt
    # standard Lasso in b = s * w with columns x_j / s_j
    gram = data.cov / np.outer(s, s)
    xty = data.x.T @ data.y / m / s
    out = np.zeros((lambdas.size, n))
    order = np.argsort(-lambdas, kind="stable")
    targets = list(lambdas[order])
    slots = list(order)
    max_steps = max_steps if max_steps is not None else 8 * (n + m)

    corr = 2.0 * xty
    lam = float(np.max(np.abs(corr))) if n else 0.0
    b = np.zeros(n)
    sign = np.zeros(n)
    active: list[int] = []
    fresh = -1  # just joined; its coefficient is still zero up to roundoff
    gone = -1  # just left; its correlation still sits on the boundary it left from
    gone_sign = 0.0
    # everything above the entry point is exactly zero
    while targets and targets[0] >= lam:
        targets.pop(0)
        slots.pop(0)
    if targets and lam > 0:
        fresh = int(np.argmax(np.abs(corr)))
        active.append(fresh)
        sign[fresh] = np.sign(corr[fresh])
    steps = 0
    while targets and steps < max_steps:
        steps += 1
        idx = np.array(active, dtype=int)
        signs = sign[idx]
        block = gram[np.ix_(idx, idx)]
        try:
            # resynchronize the active coefficients with the exact stationarity condition
            b[idx] = np.linalg.solve(block, xty[idx] - lam * signs / 2.0)
            direction = np.linalg.solve(block, signs / 2.0)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceFailure("singular active set on the Lasso path", lam) from exc
        corr = 2.0 * (xty - gram @ b)
        slope = 2.0 * (gram[:, idx] @ direction)
        eps = 1e-14 * max(lam, 1e-300)
        # penalty decrease until an inactive coordinate reaches the boundary
        inactive = np.setdiff1d(np.arange(n), idx)
        with np.errstate(divide="ignore", invalid="ignore"):
            up = (lam - corr[inactive]) / (1.0 - slope[inactive])
            down = (lam + corr[inactive]) / (1.0 + slope[inactive])
        # the coordinate that just left may only rejoin through the opposite boundary
        up[(inactive == gone) & (gone_sign > 0)] = np.inf
        down[(inactive == gone) & (gone_sign < 0)] = np.inf
        cand = np.minimum(np.where(up > eps, up, np.inf), np.where(down > eps, down, np.inf))
        join_step = float(cand.min()) if cand.size else np.inf
        join = int(inactive[np.argmin(cand)]) if cand.size else -1
        # penalty decrease until an active coefficient crosses zero
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = -b[idx] / direction
        cross = np.where((cross > eps) & (idx != fresh), cross, np.inf)
        leave_step = float(cross.min()) if cross.size else np.inf
        step = min(join_step, leave_step, lam)
        # record requested penalties on this segment
        while targets and targets[0] >= lam - step:
            sol = b.copy()
            sol[idx] += (lam - targets[0]) * direction
            out[slots[0]] = sol / s
            targets.pop(0)
            slots.pop(0)
        if not targets or step == lam:
            break
        b[idx] += step * direction
        lam -= step
        fresh = gone = -1
        if leave_step <= join_step:
            gone = int(idx[np.argmin(cross)])
            gone_sign = sign[gone]
            b[gone] = 0.0
            sign[gone] = 0.0
            active.remove(gone)
        else:
            fresh = join
            active.append(join)
        corr = 2.0 * (xty - gram @ b)
        if fresh >= 0:
            sign[fresh] = np.sign(corr[fresh])
        if not active:
            fresh = int(np.argmax(np.abs(corr)))
            active.append(fresh)
            sign[fresh] = np.sign(corr[fresh])
    if targets:
        raise ConvergenceFailure(
            f"Lasso path stopped after {steps} steps before reaching all penalties", lam
        )
    return out
