from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_l1_projection, lasso_objective_ref, pinned_qp_cvxpy, proximal_gradient_lasso
from rllab.errors import ConvergenceFailure, InvalidParameter
from rllab.models import DiagonalScaling, SampleMatrix
from rllab.solvers import (
    LassoConfig,
    QpL1Config,
    lasso_kkt_residual,
    min_quadratic_l1ball,
    project_l1_ball,
    project_l1_ball_columns,
    project_weighted_l1_columns,
    scaled_gram,
    solve_pinned_batch,
    weighted_lasso,
    weighted_lasso_path,
)


def random_regression(rng, m, n, weighted=True):
    x = rng.standard_normal((m, n)) * rng.uniform(0.3, 3.0, size=n)
    w = np.zeros(n)
    w[rng.choice(n, size=min(3, n), replace=False)] = rng.standard_normal(min(3, n))
    y = x @ w + 0.3 * rng.standard_normal(m)
    weights = DiagonalScaling(rng.uniform(0.2, 4.0, size=n)) if weighted else None
    return SampleMatrix(x, y), weights


# ---------------------------------------------------------------------------
# l1-ball projection
# ---------------------------------------------------------------------------


def test_projection_matches_face_enumeration():
    rng = np.random.default_rng(0)
    for n in range(1, 9):
        for _ in range(4):
            v = rng.standard_normal(n) * rng.uniform(0.1, 5)
            radius = float(rng.uniform(0.1, 3.0))
            assert np.allclose(project_l1_ball(v, radius), brute_force_l1_projection(v, radius), atol=1e-12)


def test_projection_inside_ball_is_identity():
    v = np.array([0.2, -0.3, 0.1])
    assert np.array_equal(project_l1_ball(v, 1.0), v)


def test_projection_zero_radius():
    assert np.array_equal(project_l1_ball(np.array([1.0, -2.0]), 0.0), np.zeros(2))


def test_projection_rejects_negative_radius():
    with pytest.raises(InvalidParameter):
        project_l1_ball(np.ones(2), -1.0)


@settings(max_examples=200, deadline=None)
@given(
    v=arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
    radius=st.floats(0.01, 20),
)
def test_projection_properties(v, radius):
    p = project_l1_ball(v, radius)
    assert np.abs(p).sum() <= radius * (1 + 1e-12) + 1e-12
    # projection is a nonexpansive idempotent map that keeps signs
    assert np.allclose(project_l1_ball(p, radius), p, atol=1e-9)
    assert np.all(p * v >= -1e-12)
    # variational inequality: (v - p) . (q - p) <= 0 for feasible q
    q = np.zeros_like(v)
    assert float((v - p) @ (q - p)) <= 1e-8 * (1 + np.abs(v).sum() ** 2)


def test_column_projection_agrees_with_single():
    rng = np.random.default_rng(1)
    v = rng.standard_normal((7, 5)) * 3
    cols = project_l1_ball_columns(v, 2.0)
    for c in range(5):
        assert np.allclose(cols[:, c], project_l1_ball(v[:, c], 2.0), atol=1e-14)


def test_weighted_projection_matches_change_of_variables():
    # with weights w the ball {sum w|x| <= r} is handled by enumerating faces of the weighted problem
    rng = np.random.default_rng(2)
    for _ in range(30):
        n = int(rng.integers(1, 7))
        w = rng.uniform(0.2, 3.0, size=n)
        v = rng.standard_normal(n) * 3
        r = float(rng.uniform(0.2, 2.0))
        got = project_weighted_l1_columns(v[:, None], w, r)[:, 0]
        best, best_d = None, np.inf
        if (w * np.abs(v)).sum() <= r:
            best = v
        else:
            for pattern in itertools.product((-1, 0, 1), repeat=n):
                s = np.array(pattern, float)
                sup = s != 0
                if not sup.any():
                    continue
                theta = ((w * s)[sup] @ v[sup] - r) / float(w[sup] @ w[sup])
                x = np.zeros(n)
                x[sup] = v[sup] - theta * w[sup] * s[sup]
                if np.any(s[sup] * x[sup] < -1e-12):
                    continue
                d = float(np.sum((x - v) ** 2))
                if d < best_d:
                    best, best_d = x, d
        assert np.allclose(got, best, atol=1e-10)


# ---------------------------------------------------------------------------
# Weighted Lasso
# ---------------------------------------------------------------------------


def test_lasso_zero_above_critical_penalty():
    rng = np.random.default_rng(3)
    data, weights = random_regression(rng, 40, 10)
    s = weights.sqrt
    lam_max = float(np.max(np.abs(2.0 * data.x.T @ data.y / data.m) / s))
    w = weighted_lasso(data, LassoConfig(lam=lam_max * (1 + 1e-9), weights=weights))
    assert np.all(w == 0)


def test_lasso_zero_penalty_is_least_squares():
    rng = np.random.default_rng(4)
    data, _ = random_regression(rng, 50, 8, weighted=False)
    w = weighted_lasso(data, LassoConfig(lam=0.0, max_iters=100_000))
    grad = 2.0 * data.x.T @ (data.x @ w - data.y) / data.m
    assert np.max(np.abs(grad)) <= 1e-8
    assert np.allclose(w, np.linalg.lstsq(data.x, data.y, rcond=None)[0], atol=1e-7)


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.5, 3.0])
def test_lasso_one_dimensional_closed_form(lam):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((30, 1))
    y = 0.7 * x[:, 0] + rng.standard_normal(30)
    w = weighted_lasso(SampleMatrix(x, y), LassoConfig(lam=lam))
    a = float(x[:, 0] @ y) / 30
    b = float(x[:, 0] @ x[:, 0]) / 30
    expected = np.sign(a) * max(abs(a) - lam / 2, 0.0) / b
    assert w[0] == pytest.approx(expected, abs=1e-12)


def test_lasso_soft_threshold_tie_goes_to_zero():
    x = np.ones((4, 1))
    y = np.ones(4)
    # correlation 1 equals lam / 2 exactly
    w = weighted_lasso(SampleMatrix(x, y), LassoConfig(lam=2.0))
    assert w[0] == 0.0


def test_lasso_matches_proximal_gradient_reference():
    rng = np.random.default_rng(6)
    for _ in range(50):
        m = int(rng.integers(5, 51))
        n = int(rng.integers(1, 31))
        data, weights = random_regression(rng, m, n)
        lam = float(rng.uniform(0.01, 1.0))
        w = weighted_lasso(data, LassoConfig(lam=lam, weights=weights))
        ref = proximal_gradient_lasso(data.x, data.y, lam, weights.sqrt)
        f = lasso_objective_ref(data.x, data.y, w, lam, weights.sqrt)
        f_ref = lasso_objective_ref(data.x, data.y, ref, lam, weights.sqrt)
        assert f <= f_ref + 1e-6


def test_lasso_objective_is_monotone_across_sweeps():
    rng = np.random.default_rng(7)
    data, weights = random_regression(rng, 20, 40)
    # check_monotone raises ConvergenceFailure on any increase; a clean run is the assertion
    weighted_lasso(data, LassoConfig(lam=0.01, weights=weights, check_monotone=True))


def test_lasso_reports_nonconvergence():
    rng = np.random.default_rng(8)
    data, weights = random_regression(rng, 20, 60)
    with pytest.raises(ConvergenceFailure) as err:
        weighted_lasso(data, LassoConfig(lam=1e-5, weights=weights, max_iters=1))
    assert err.value.residual > 0


def test_lasso_needs_response():
    with pytest.raises(InvalidParameter):
        weighted_lasso(SampleMatrix(np.ones((3, 2))), LassoConfig(lam=1.0))


@pytest.mark.parametrize("shape", [(40, 20), (30, 60), (100, 300)])
def test_path_matches_coordinate_descent(shape):
    rng = np.random.default_rng(9)
    data, weights = random_regression(rng, *shape)
    lams = np.logspace(0, -3, 7)
    path = weighted_lasso_path(data, lams, weights)
    xty = data.x.T @ data.y / data.m
    for lam, w in zip(lams, path):
        assert lasso_kkt_residual(data.cov, xty, w, lam, weights.sqrt) <= 1e-8 * max(1.0, lam)
    w_cd = weighted_lasso(data, LassoConfig(lam=lams[2], weights=weights))
    assert np.allclose(path[2], w_cd, atol=1e-6)


def test_path_handles_unsorted_and_huge_penalties():
    rng = np.random.default_rng(10)
    data, weights = random_regression(rng, 30, 10)
    lams = np.array([0.1, 1e6, 0.01])
    path = weighted_lasso_path(data, lams, weights)
    assert np.all(path[1] == 0)
    ordered = weighted_lasso_path(data, np.array([0.1, 0.01]), weights)
    assert np.allclose(path[[0, 2]], ordered, atol=1e-12)


# ---------------------------------------------------------------------------
# Pinned l1-ball quadratic program
# ---------------------------------------------------------------------------


def test_budget_one_gives_pinned_unit_vector():
    rng = np.random.default_rng(11)
    x = SampleMatrix(rng.standard_normal((20, 5)))
    d = DiagonalScaling(rng.uniform(0.5, 2, 5))
    v, value = min_quadratic_l1ball(x, d, QpL1Config(budget=1, pinned_index=2))
    expected = np.zeros(5)
    expected[2] = 1 / np.sqrt(d.d[2])
    assert np.allclose(v, expected)
    assert value == pytest.approx(x.cov[2, 2] / d.d[2], rel=1e-12)


@pytest.mark.parametrize("budget", [1.0, 2.0, 5.0, 40.0])
def test_identity_covariance_value_is_one(budget):
    n = 6
    x = SampleMatrix(np.sqrt(n) * np.eye(n))
    v, value = min_quadratic_l1ball(x, DiagonalScaling(np.ones(n)), QpL1Config(budget=budget, pinned_index=3))
    assert value == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(v, np.eye(n)[3], atol=1e-6)


def test_duplicate_columns_cancel():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((30, 4))
    x = np.column_stack([x, x[:, 1]])
    data = SampleMatrix(x)
    d = DiagonalScaling(np.diag(data.cov))
    _v, value = min_quadratic_l1ball(data, d, QpL1Config(budget=2, pinned_index=1))
    assert value <= 1e-8


def test_budget_below_one_rejected():
    with pytest.raises(InvalidParameter):
        QpL1Config(budget=0.5)


def test_pinned_program_matches_conic_solver():
    rng = np.random.default_rng(13)
    for trial in range(8):
        m, n = int(rng.integers(5, 30)), int(rng.integers(2, 12))
        x = SampleMatrix(rng.standard_normal((m, n)) @ rng.standard_normal((n, n)))
        d = DiagonalScaling(rng.uniform(0.3, 3.0, size=n))
        budget = float(rng.uniform(1.5, 4.0))
        i = int(rng.integers(n))
        _v, value = min_quadratic_l1ball(x, d, QpL1Config(budget=budget, pinned_index=i, max_iters=50_000))
        ref = pinned_qp_cvxpy(scaled_gram(x.cov, d.d), i, budget)
        assert value == pytest.approx(ref, abs=1e-6 * max(1.0, ref))


def test_pinned_program_invariants_on_random_instances():
    rng = np.random.default_rng(14)
    for _ in range(50):
        m, n = int(rng.integers(3, 40)), int(rng.integers(1, 15))
        x = SampleMatrix(rng.standard_normal((m, n)) * rng.uniform(0.1, 10, size=n))
        d = DiagonalScaling(rng.uniform(0.1, 5.0, size=n))
        budget = float(rng.uniform(1.0, 10.0))
        i = int(rng.integers(n))
        v, value = min_quadratic_l1ball(x, d, QpL1Config(budget=budget, pinned_index=i, max_iters=100_000))
        u = d.sqrt * v
        xv = x.x @ v
        assert value == pytest.approx(float(xv @ xv) / m, abs=1e-12 * max(1.0, value))
        assert abs(u[i] - 1) <= 1e-10
        assert np.abs(u).sum() <= budget + 1e-8


def test_batch_threshold_certificates():
    rng = np.random.default_rng(15)
    x = SampleMatrix(rng.standard_normal((40, 8)))
    gram = scaled_gram(x.cov, np.diag(x.cov))
    full = solve_pinned_batch(gram, np.arange(8), 3.0, tol=1e-10, max_iters=50_000)
    early = solve_pinned_batch(gram, np.arange(8), 3.0, threshold=0.5, refine_below=False)
    for c in range(8):
        if early.settled[c]:
            assert (early.values[c] <= 0.5) == (full.values[c] <= 0.5)
