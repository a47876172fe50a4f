"""Configured experiment runners that write CSV tables.

Configs are TOML files. Every runner is a pure function of its config: the
same file gives the same CSV bytes.

Schema (all tables optional except ``kind``)::

    kind = "slr_comparison"   # or pca_detection, ldlr_sweep, sdp_frequency, ggm_errors
    seeds = 10                # a count (0..seeds-1) or an explicit list
    workers = 1

    [model]
    n = 300
    k = 5
    beta = -0.99
    sigma = 0.0

    [grid]
    m = [50, 75, 100, 150, 200, 300]

    [lasso]
    validation_fraction = 0.2
    lambda_count = 30
    lambda_low = 1e-4
    lambda_high = 1e1
    scale_on = "all"          # rows used for covariate scaling: "all" or "train"

    [scaling]
    div = 1.1
    budget_per_k = 2.0
    batch = true
    iteration_cap = 150

    [output]
    csv = "slr.csv"
    svg = "slr.svg"
"""

from __future__ import annotations

import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvalidParameter, IterationLimitExceeded, RllabError, SchemaError
from .ggm import GgmTestConfig, chain_precision, ggm_empty_test, null_threshold, sample_ggm
from .ldlr import (
    SchedulePoint,
    admissible_schedule,
    ldlr_boundedness_sweep,
    log_power_schedule,
)
from .models import (
    DiagonalScaling,
    SampleMatrix,
    SlrInstance,
    SparseSpike,
    SpikedWishartParams,
    make_spiked_covariance,
    sample_slr,
    sample_wishart_data,
)
from .pca import DetectionConfig, chi_square_threshold, pca_detect, sdp_kernel_certificate
from .rescale import SmartScalingConfig, smart_scaling
from .solvers import weighted_lasso_path

KINDS = ("slr_comparison", "pca_detection", "ldlr_sweep", "sdp_frequency", "ggm_errors")


@dataclass
class ExperimentConfig:
    kind: str
    seeds: list[int]
    model: dict[str, Any] = field(default_factory=dict)
    grid: dict[str, Any] = field(default_factory=dict)
    lasso: dict[str, Any] = field(default_factory=dict)
    scaling: dict[str, Any] = field(default_factory=dict)
    detection: dict[str, Any] = field(default_factory=dict)
    output: dict[str, Any] = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if len(self.seeds) < 1:
            raise SchemaError("need at least one seed")
        if "m" in self.grid and len(self.grid["m"]) == 0:
            raise SchemaError("sample-size grid must be non-empty")
        frac = self.lasso.get("validation_fraction", 0.2)
        if not 0 < frac < 1:
            raise SchemaError("validation_fraction must lie in (0, 1)")
        if self.workers < 1:
            raise SchemaError("workers must be positive")

    @property
    def m_grid(self) -> list[int]:
        return [int(m) for m in self.grid.get("m", [])]


def parse_config(data: dict[str, Any]) -> ExperimentConfig:
    if "kind" not in data:
        raise SchemaError("config needs a 'kind' entry")
    seeds = data.get("seeds", 1)
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    known = {"kind", "seeds", "model", "grid", "lasso", "scaling", "detection", "output", "workers"}
    extra = sorted(set(data) - known)
    if extra:
        raise SchemaError(f"unknown config entries {extra}")
    return ExperimentConfig(
        kind=data["kind"],
        seeds=[int(s) for s in seeds],
        model=dict(data.get("model", {})),
        grid=dict(data.get("grid", {})),
        lasso=dict(data.get("lasso", {})),
        scaling=dict(data.get("scaling", {})),
        detection=dict(data.get("detection", {})),
        output=dict(data.get("output", {})),
        workers=int(data.get("workers", 1)),
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return parse_config(data)


# ---------------------------------------------------------------------------
# Sparse regression comparison
# ---------------------------------------------------------------------------


SLR_FIELDS = ["m", "method", "seed", "prediction_error", "lambda", "status"]


def slr_instance(n: int, k: int, beta: float, sigma: float, rng: np.random.Generator) -> SlrInstance:
    """Covariates from the negative spike on a random support, response ``<1_S, X> / sqrt((1 + beta) k)``."""
    support = np.sort(rng.choice(n, size=k, replace=False))
    spike = SparseSpike(n, support, np.ones(k))
    cov = make_spiked_covariance(n, spike, beta)
    w_star = np.zeros(n)
    w_star[support] = 1.0 / math.sqrt((1.0 + beta) * k)
    return SlrInstance(cov, w_star, sigma, k)


def lambda_grid(m_train: int, n: int, count: int = 30, low: float = 1e-4, high: float = 1e1) -> np.ndarray:
    """Log-spaced penalties from ``high`` down to ``low``, times ``sqrt(log n / m)``."""
    return np.logspace(math.log10(high), math.log10(low), count) * math.sqrt(math.log(n) / m_train)


def split_train_validation(data: SampleMatrix, fraction: float) -> tuple[SampleMatrix, SampleMatrix]:
    """Last ``round(fraction * m)`` rows (at least one) validate; the rest train."""
    m = data.m
    m_val = min(max(1, int(round(fraction * m))), m - 1)
    return data.rows(slice(0, m - m_val)), data.rows(slice(m - m_val, m))


def tune_on_validation(
    train: SampleMatrix, validation: SampleMatrix, weights: DiagonalScaling, lambdas: np.ndarray
) -> tuple[np.ndarray, float]:
    """Fit the whole penalty grid on the training rows and keep the fit with least validation error.

    Only ``validation`` responses enter the choice; the caller scores the
    returned coefficients once against the true covariance.
    """
    path = weighted_lasso_path(train, lambdas, weights)
    errors = [float(np.sum((validation.x @ w - validation.y) ** 2)) for w in path]
    best = int(np.argmin(errors))
    return path[best], float(lambdas[best])


def slr_cell(m: int, seed: int, cfg: ExperimentConfig) -> list[dict[str, Any]]:
    n = int(cfg.model.get("n", 300))
    k = int(cfg.model.get("k", 5))
    beta = float(cfg.model.get("beta", -0.99))
    sigma = float(cfg.model.get("sigma", 0.0))
    rng = np.random.default_rng([seed, m])
    instance = slr_instance(n, k, beta, sigma, rng)
    data = sample_slr(instance, m, rng)
    train, validation = split_train_validation(data, float(cfg.lasso.get("validation_fraction", 0.2)))
    lambdas = lambda_grid(
        train.m,
        n,
        int(cfg.lasso.get("lambda_count", 30)),
        float(cfg.lasso.get("lambda_low", 1e-4)),
        float(cfg.lasso.get("lambda_high", 1e1)),
    )
    # covariate-only preprocessing may see every row since it never touches responses
    scale_on = str(cfg.lasso.get("scale_on", "all"))
    if scale_on not in ("all", "train"):
        raise InvalidParameter(f"lasso.scale_on must be 'all' or 'train', got {scale_on!r}")
    covariates = data.x if scale_on == "all" else train.x
    rows = []

    def record(method: str, weights: Optional[DiagonalScaling], status: str) -> None:
        if weights is None:
            rows.append(dict(m=m, method=method, seed=seed, prediction_error="", status=status, **{"lambda": ""}))
            return
        try:
            w_hat, lam = tune_on_validation(train, validation, weights, lambdas)
        except RllabError as exc:
            rows.append(
                dict(m=m, method=method, seed=seed, prediction_error="", status=type(exc).__name__, **{"lambda": ""})
            )
            return
        rows.append(
            dict(
                m=m,
                method=method,
                seed=seed,
                prediction_error=repr(instance.prediction_error(w_hat)),
                status=status,
                **{"lambda": repr(lam)},
            )
        )

    record("standardized", DiagonalScaling(covariates.var(axis=0)), "ok")
    scaling = SmartScalingConfig(
        k=k,
        div=float(cfg.scaling.get("div", 1.1)),
        b=float(cfg.scaling.get("budget_per_k", 2.0)) * k,
        batch=bool(cfg.scaling.get("batch", True)),
        iteration_cap=cfg.scaling.get("iteration_cap"),
    )
    try:
        d_hat, _trace = smart_scaling(SampleMatrix(covariates), scaling)
        record("rescaled", d_hat, "ok")
    except IterationLimitExceeded:
        record("rescaled", None, "IterationLimitExceeded")
    except RllabError as exc:
        record("rescaled", None, type(exc).__name__)
    return rows


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------


DETECTION_FIELDS = ["m", "seed", "hypothesis", "min_eta", "argmin", "threshold", "decision"]


def detection_cell(m: int, seed: int, cfg: ExperimentConfig) -> list[dict[str, Any]]:
    """One planted and one null dataset sharing a seed (and the planted spike, for the oracle backend)."""
    n = int(cfg.model.get("n", 200))
    k = int(cfg.model.get("k", 5))
    beta = float(cfg.model.get("beta", -1.0 + 1.0 / (2 * k)))
    det = cfg.detection
    holdout = det.get("holdout")
    holdout = int(holdout) if holdout is not None else m // 2
    if "threshold" in det:
        threshold = float(det["threshold"])
    else:
        threshold = chi_square_threshold(n, holdout, float(det.get("delta", 0.05)))
    backend = det.get("backend", "oracle")
    rng = np.random.default_rng([seed, m])
    params = SpikedWishartParams(n=n, k=k, beta=beta, m=m)
    planted, spike = sample_wishart_data(params, rng, planted=True)
    null, _ = sample_wishart_data(params, rng, planted=False)
    rows = []
    for hypothesis, z in (("planted", planted), ("null", null)):
        dcfg = DetectionConfig(
            k=k,
            holdout=holdout,
            # tiny holdouts push the cutoff below zero; the decision below applies it directly
            eta_threshold=threshold if 0 < threshold < 1 else 0.5,
            slr_backend=backend,
            lam=det.get("lambda"),
            support=spike.support if backend == "oracle" else None,
            scaling=SmartScalingConfig(
                k=k,
                div=float(cfg.scaling.get("div", 2.0)),
                b=float(cfg.scaling.get("budget_per_k", 16.0)) * k,
                batch=bool(cfg.scaling.get("batch", False)),
                iteration_cap=cfg.scaling.get("iteration_cap"),
            ),
        )
        res = pca_detect(z, dcfg)
        rows.append(
            dict(
                m=m,
                seed=seed,
                hypothesis=hypothesis,
                min_eta=repr(res.min_eta),
                argmin=res.argmin,
                threshold=repr(threshold),
                decision=int(res.min_eta < threshold),
            )
        )
    return rows


def distinguishing_advantage(rows: list[dict[str, Any]]) -> dict[int, float]:
    """``|P_planted[accept] - P_null[accept]|`` per sample size, with accept meaning decision 1."""
    out = {}
    for m in sorted({int(r["m"]) for r in rows}):
        planted = [int(r["decision"]) for r in rows if int(r["m"]) == m and r["hypothesis"] == "planted"]
        null = [int(r["decision"]) for r in rows if int(r["m"]) == m and r["hypothesis"] == "null"]
        out[m] = abs(float(np.mean(planted)) - float(np.mean(null)))
    return out


# ---------------------------------------------------------------------------
# Kernel certificate frequency, LDLR sweeps, GGM error rates
# ---------------------------------------------------------------------------


SDP_FIELDS = ["n", "m", "k", "seed", "l1_mass", "objective", "feasible"]


def sdp_cell(m: int, seed: int, cfg: ExperimentConfig) -> list[dict[str, Any]]:
    n = int(cfg.model.get("n", 200))
    k = float(cfg.model.get("k", 40))
    rng = np.random.default_rng([seed, m])
    z = SampleMatrix(rng.standard_normal((m, n)))
    cert = sdp_kernel_certificate(z, k)
    row = dict(n=n, m=m, k=k, seed=seed, l1_mass=repr(cert.l1_mass), objective=repr(cert.objective))
    return [{**row, "feasible": int(cert.feasible)}]


LDLR_FIELDS = ["n", "k", "m", "D", "beta", "norm_squared", "admissible", "reason"]


def run_ldlr_sweep(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    ns = [int(n) for n in cfg.grid.get("n", [1000, 10000, 100000, 1000000])]
    schedule = cfg.model.get("schedule", "log_power")
    if schedule == "log_power":
        eps = float(cfg.model.get("eps", 2.0))
        c = float(cfg.model.get("c", 1.0))
        points = [log_power_schedule(n, eps, c) for n in ns]
    elif schedule == "admissible":
        points = [admissible_schedule(n) for n in ns]
    elif schedule == "explicit":
        points = [SchedulePoint(**p) for p in cfg.model["points"]]
    else:
        raise SchemaError(f"unknown schedule {schedule!r}")
    rows = []
    for r in ldlr_boundedness_sweep(points):
        p = r.point
        rows.append(
            dict(
                n=p.n,
                k=p.k,
                m=p.m,
                D=p.degree,
                beta=repr(p.beta),
                norm_squared="" if r.norm_squared is None else repr(r.norm_squared),
                admissible=int(r.admissible),
                reason=r.reason,
            )
        )
    return rows


GGM_FIELDS = ["seed", "hypothesis_truth", "decision", "argmax_i", "argmax_j", "gamma_hat", "threshold"]


def ggm_cell(m: int, seed: int, cfg: ExperimentConfig) -> list[dict[str, Any]]:
    n = int(cfg.model.get("n", 50))
    k = int(cfg.model.get("k", 2))
    partial = float(cfg.model.get("partial", 0.4))
    delta = float(cfg.detection.get("delta", 0.05))
    threshold = cfg.detection.get("threshold", "null")
    thr = null_threshold(n, m, delta) if threshold == "null" else float(threshold)
    gcfg = GgmTestConfig(k=k, kappa=partial, delta=delta, m=m, threshold=thr)
    rng = np.random.default_rng([seed, m])
    rows = []
    for truth, z in (
        ("H0", SampleMatrix(rng.standard_normal((m, n)))),
        ("H1", sample_ggm(chain_precision(n, partial), m, rng)),
    ):
        res = ggm_empty_test(z, gcfg)
        rows.append(
            dict(
                seed=seed,
                hypothesis_truth=truth,
                decision=res.decision,
                argmax_i=res.pair[0],
                argmax_j=res.pair[1],
                gamma_hat=repr(res.gamma),
                threshold=repr(thr),
            )
        )
    return rows


def ggm_error_rates(rows: list[dict[str, Any]]) -> tuple[float, float]:
    null = [r for r in rows if r["hypothesis_truth"] == "H0"]
    alt = [r for r in rows if r["hypothesis_truth"] == "H1"]
    type1 = float(np.mean([r["decision"] == "H1" for r in null])) if null else 0.0
    type2 = float(np.mean([r["decision"] == "H0" for r in alt])) if alt else 0.0
    return type1, type2


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


CELLS: dict[str, tuple[Callable[[int, int, ExperimentConfig], list[dict[str, Any]]], list[str]]] = {
    "slr_comparison": (slr_cell, SLR_FIELDS),
    "pca_detection": (detection_cell, DETECTION_FIELDS),
    "sdp_frequency": (sdp_cell, SDP_FIELDS),
    "ggm_errors": (ggm_cell, GGM_FIELDS),
}


def _run_cell(args):
    kind, m, seed, cfg = args
    return CELLS[kind][0](m, seed, cfg)


def run_grid(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    """Evaluate every ``(m, seed)`` cell, in a process pool when ``workers > 1``, in a fixed output order."""
    if not cfg.m_grid:
        raise SchemaError("this experiment needs a non-empty [grid] m list")
    jobs = [(cfg.kind, m, seed, cfg) for m in cfg.m_grid for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    return [row for rows in results for row in rows]


def fields_for(kind: str) -> list[str]:
    if kind == "ldlr_sweep":
        return LDLR_FIELDS
    return CELLS[kind][1]


def run_experiment(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    if cfg.kind == "ldlr_sweep":
        return run_ldlr_sweep(cfg)
    return run_grid(cfg)


def rows_to_csv(rows: list[dict[str, Any]], fields: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\r\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({f: row[f] for f in fields})
    return buf.getvalue()


def write_rows(rows: list[dict[str, Any]], fields: list[str], path) -> None:
    Path(path).write_bytes(rows_to_csv(rows, fields).encode())


def median_by(rows: list[dict[str, Any]], key: str, value: str, group: str) -> dict[tuple[Any, Any], float]:
    """Median of ``value`` per ``(key, group)``; failed cells (empty value) count as infinitely bad."""
    buckets: dict[tuple[Any, Any], list[float]] = {}
    for r in rows:
        v = r[value]
        buckets.setdefault((r[key], r[group]), []).append(math.inf if v == "" else float(v))
    return {k: float(np.median(v)) for k, v in buckets.items()}

