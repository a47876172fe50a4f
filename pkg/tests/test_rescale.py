from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rllab.errors import InvalidParameter, IterationLimitExceeded
from rllab.models import (
    Covariance,
    DiagonalScaling,
    SampleMatrix,
    SlrInstance,
    make_lvm_covariance,
    sample_gaussian,
    sample_slr,
)
from rllab.rescale import (
    SmartScalingConfig,
    fit_weighted,
    program_values,
    rescaled_lasso,
    smart_scaling,
    verify_scaling_guarantees,
)


def identity_design(n):
    return SampleMatrix(math.sqrt(n) * np.eye(n))


def lvm_data(n, h, m, seed):
    rng = np.random.default_rng(seed)
    d_diag = rng.uniform(0.5, 2.0, n)
    sigma, d, _ = make_lvm_covariance(d_diag, rng.standard_normal((n, h)))
    return SampleMatrix(sample_gaussian(sigma, m, rng)), sigma, d


# ---------------------------------------------------------------------------
# Hand traces
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n", [5, 50])
def test_identity_design_halves_every_coordinate_once(n):
    x = identity_design(n)
    d_hat, trace = smart_scaling(x, SmartScalingConfig(k=2))
    # sqrt(n)^2 / n is one only up to rounding; halving itself is exact
    assert np.array_equal(d_hat.d, np.diag(x.cov) / 2)
    assert np.allclose(d_hat.d, 0.5, rtol=4 * np.finfo(float).eps, atol=0)
    assert trace.iterations == n
    # every program value is exactly one at scale one, and ties go to the lowest index
    assert [s.i_min for s in trace.steps] == list(range(n))
    assert all(s.value == pytest.approx(1.0, abs=1e-12) for s in trace.steps)


def test_single_coordinate_halves_once():
    x = SampleMatrix(np.array([[1.0], [-3.0], [2.0]]))
    d_hat, trace = smart_scaling(x, SmartScalingConfig(k=1))
    assert d_hat.d[0] == pytest.approx(x.cov[0, 0] / 2, rel=1e-15)
    assert trace.iterations == 1


def test_batch_mode_on_identity_halves_all_at_once():
    x = identity_design(6)
    d_hat, trace = smart_scaling(x, SmartScalingConfig(k=1, batch=True))
    assert np.array_equal(d_hat.d, np.diag(x.cov) / 2)
    assert trace.iterations == 1
    assert len(trace.steps) == 6


def test_duplicated_columns_exceed_the_cap():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 5))
    x = np.column_stack([x, x[:, 1]])
    with pytest.raises(IterationLimitExceeded) as info:
        smart_scaling(SampleMatrix(x), SmartScalingConfig(k=1, iteration_cap=30))
    assert info.value.trace.iterations == 30
    assert len(info.value.trace.steps) == 30


def test_duplicated_columns_in_batch_mode_fail_early():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((40, 5))
    x = np.column_stack([x, -2.0 * x[:, 3]])
    with pytest.raises(IterationLimitExceeded) as info:
        smart_scaling(SampleMatrix(x), SmartScalingConfig(k=1, batch=True))
    assert info.value.trace.final is not None


def test_rejects_zero_columns_and_empty_samples():
    x = np.random.default_rng(2).standard_normal((10, 3))
    x[:, 1] = 0.0
    with pytest.raises(InvalidParameter):
        smart_scaling(SampleMatrix(x), SmartScalingConfig(k=1))
    with pytest.raises(InvalidParameter):
        smart_scaling(SampleMatrix(np.zeros((0, 3))), SmartScalingConfig(k=1))


def test_config_validation():
    assert SmartScalingConfig(k=3).b == 48.0
    with pytest.raises(InvalidParameter):
        SmartScalingConfig(k=1, div=1.0)
    with pytest.raises(InvalidParameter):
        SmartScalingConfig(k=1, b=0.5)
    with pytest.raises(InvalidParameter):
        SmartScalingConfig(k=0)
    with pytest.raises(InvalidParameter):
        SmartScalingConfig(k=1, iteration_cap=0)


# ---------------------------------------------------------------------------
# Trace invariants
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_determinant_drops_by_div_each_iteration(seed):
    x, _, _ = lvm_data(12, 2, 200, seed)
    cfg = SmartScalingConfig(k=1, div=2.0)
    d_hat, trace = smart_scaling(x, cfg)
    log_det = np.sum(np.log(trace.initial))
    current = trace.initial.copy()
    for t, step in enumerate(trace.steps, start=1):
        assert step.iteration == t
        assert step.new_diag_entry == current[step.i_min] / cfg.div
        current[step.i_min] = step.new_diag_entry
        assert np.sum(np.log(current)) == pytest.approx(log_det - t * math.log(cfg.div), abs=1e-9)
    assert np.array_equal(current, d_hat.d)


@pytest.mark.parametrize("batch", [False, True])
def test_returned_scaling_is_above_threshold_everywhere(batch):
    x, _, _ = lvm_data(15, 2, 300, 7)
    cfg = SmartScalingConfig(k=1, div=1.5, batch=batch)
    d_hat, trace = smart_scaling(x, cfg)
    res = program_values(x, d_hat.d, cfg.b, tol=1e-10, max_iters=50_000)
    assert np.all(res.values > cfg.termination_threshold)
    assert np.all(trace.final_values > cfg.termination_threshold)
    # entries only ever shrink
    assert np.all(d_hat.d <= trace.initial)


def test_trace_csv(tmp_path):
    _, trace = smart_scaling(identity_design(3), SmartScalingConfig(k=1))
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,i_min,value,new_diag_entry"
    assert [line.split(",")[:2] for line in lines[1:]] == [["1", "0"], ["2", "1"], ["3", "2"]]


# ---------------------------------------------------------------------------
# Guarantees against a valid oracle diagonal
# ---------------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), div=st.sampled_from([1.5, 2.0, 3.0]))
def test_output_dominates_any_in_sample_valid_scaling(seed, div):
    # with 32k >= n the restricted cone is all of R^n, so c D with
    # c = lambda_min(D^{-1/2} Sigma_hat D^{-1/2}) satisfies the lower bound exactly
    n, k = 8, 1
    x, _, d = lvm_data(n, 2, 60, seed)
    c = float(np.linalg.eigvalsh(x.cov / np.sqrt(np.outer(d.d, d.d)))[0])
    valid = DiagonalScaling(c * d.d)
    d_hat, trace = smart_scaling(x, SmartScalingConfig(k=k, div=div))
    assert np.all(d_hat.d >= valid.d / div * (1 - 1e-9))
    bound = n * math.log(max(np.max(2 * np.diag(x.cov) / valid.d), 1.0), div)
    assert trace.iterations <= bound + 1e-9


def test_verify_passes_at_the_equality_boundary():
    x = identity_design(10)
    d_hat, trace = smart_scaling(x, SmartScalingConfig(k=1))
    inst = SlrInstance(Covariance(np.eye(10)), np.zeros(10), 0.0, 1, oracle_scaling=DiagonalScaling(np.ones(10)))
    report = verify_scaling_guarantees(inst, x, d_hat, trace, rng=0)
    assert report.lower_bound_ok and report.restricted_ok and report.iterations_ok
    assert report.passed and not report.violations


def test_verify_without_oracle_skips_the_lower_bound():
    x = identity_design(6)
    d_hat, trace = smart_scaling(x, SmartScalingConfig(k=1))
    report = verify_scaling_guarantees(None, x, d_hat, trace, k=1, rng=0)
    assert report.lower_bound_ok is None and report.iterations_ok is None
    assert report.passed
    with pytest.raises(InvalidParameter):
        verify_scaling_guarantees(None, x, d_hat)


def test_verify_flags_an_oversized_oracle():
    x = identity_design(6)
    d_hat, trace = smart_scaling(x, SmartScalingConfig(k=1))
    inst = SlrInstance(Covariance(np.eye(6)), np.zeros(6), 0.0, 1, oracle_scaling=DiagonalScaling(np.full(6, 4.0)))
    report = verify_scaling_guarantees(inst, x, d_hat, trace, rng=0)
    assert report.lower_bound_ok is False
    assert not report.passed


def test_verify_finds_the_duplicate_direction():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((30, 4))
    data = SampleMatrix(np.column_stack([x, x[:, 0]]))
    report = verify_scaling_guarantees(None, data, DiagonalScaling(np.diag(data.cov)), k=1, rng=0)
    assert report.restricted_ok is False


# ---------------------------------------------------------------------------
# Rescaled Lasso
# ---------------------------------------------------------------------------


def test_rescaled_lasso_large_penalty_is_zero():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((30, 6))
    data = SampleMatrix(x, x[:, 0] - x[:, 2])
    assert np.array_equal(rescaled_lasso(data, 2, 1e6), np.zeros(6))


def test_rescaled_lasso_recovers_noiseless_signal():
    n, k = 50, 3
    m = math.ceil(8 * k * math.log(n))
    w = np.zeros(n)
    w[[3, 17, 40]] = [1.0, -1.5, 0.7]
    data = sample_slr(SlrInstance(Covariance(np.eye(n)), w, 0.0, k), m, 5)
    w_hat = rescaled_lasso(data, k, 1e-5)
    assert np.linalg.norm(w_hat - w) <= 1e-3


def test_rescaled_lasso_equals_its_two_stages():
    rng = np.random.default_rng(6)
    x, _, _ = lvm_data(10, 1, 80, 6)
    data = SampleMatrix(x.x, x.x[:, :2] @ np.array([1.0, -1.0]) + 0.1 * rng.standard_normal(80))
    cfg = SmartScalingConfig(k=2, div=1.5)
    d_hat, _ = smart_scaling(SampleMatrix(data.x), cfg)
    staged = fit_weighted(data, d_hat, 0.05)
    assert np.array_equal(rescaled_lasso(data, 2, 0.05, cfg), staged)
