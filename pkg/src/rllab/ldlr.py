"""Exact low-degree likelihood ratio norms for the sparse negatively spiked Wishart model.

All combinatorial quantities are exact rationals. The squared norm of the
degree-``D`` projection is

    1 + sum_{d=1}^{D // 2} (beta^2 / (4 k^2))^d * A(n, k, d) * S(m, d)

where ``A(n, k, d) = k^{2d} E <w1, w2>^{2d}`` over two independent sparse
Rademacher spikes and ``S(m, d)`` sums products of central binomial
coefficients over the ways of spreading degree ``d`` across ``m`` samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Union

from .errors import InvalidParameter

Number = Union[int, float, Fraction]


@dataclass(frozen=True)
class LdlrParams:
    n: int
    k: int
    beta: float
    m: int
    degree: int

    def __post_init__(self) -> None:
        if self.n < 1 or self.k < 1 or self.m < 1:
            raise InvalidParameter("n, k and m must be positive")
        if self.k > self.n:
            raise InvalidParameter(f"need k <= n, got k={self.k}, n={self.n}")
        if not self.beta > -1:
            raise InvalidParameter(f"beta must exceed -1, got {self.beta}")
        if self.degree < 0:
            raise InvalidParameter("degree must be nonnegative")


@lru_cache(maxsize=None)
def _composition_row(m: int, d_max: int) -> tuple[int, ...]:
    # row[d] = S(m, d); built one sample at a time
    central = [math.comb(2 * j, j) for j in range(d_max + 1)]
    row = [1] + [0] * d_max
    for _ in range(m):
        row = [sum(central[j] * row[d - j] for j in range(d + 1)) for d in range(d_max + 1)]
    return tuple(row)


def composition_binom_sum(m: int, d: int) -> int:
    """``sum over d_1 + ... + d_m = d`` of ``prod_i binom(2 d_i, d_i)`` by dynamic programming."""
    if m < 1:
        raise InvalidParameter("m must be at least 1")
    if d < 0:
        raise InvalidParameter("d must be nonnegative")
    return _composition_row(m, d)[d]


def composition_binom_closed_form(m: int, d: int) -> Fraction:
    """``4^d prod_{j<d} (m/2 + j) / d!``, the coefficient of ``x^d`` in ``(1 - 4x)^{-m/2}``."""
    value = Fraction(4**d, math.factorial(d))
    for j in range(d):
        value *= Fraction(m, 2) + j
    return value


def hypergeometric_overlap(n: int, k: int) -> list[Fraction]:
    """Law of ``|S1 & S2|`` for two independent uniform size-``k`` subsets of ``[n]``."""
    total = math.comb(n, k)
    return [Fraction(math.comb(k, l) * math.comb(n - k, k - l), total) for l in range(k + 1)]


def rademacher_sum_moment(l: int, power: int) -> Fraction:
    """``E (a_1 + ... + a_l)^power`` for independent uniform signs, from the exact law of the sum."""
    # dist maps partial sum -> probability numerator over 2^steps
    dist = {0: 1}
    for _ in range(l):
        nxt: dict[int, int] = {}
        for s, c in dist.items():
            nxt[s + 1] = nxt.get(s + 1, 0) + c
            nxt[s - 1] = nxt.get(s - 1, 0) + c
        dist = nxt
    return Fraction(sum(c * s**power for s, c in dist.items()), 2**l)


def overlap_moment(n: int, k: int, d: int) -> Fraction:
    """``A(n, k, d) = k^{2d} E <w1, w2>^{2d}`` for two independent spikes with ``k`` nonzeros."""
    if not 1 <= k <= n:
        raise InvalidParameter(f"need 1 <= k <= n, got k={k}, n={n}")
    if d < 0:
        raise InvalidParameter("d must be nonnegative")
    law = hypergeometric_overlap(n, k)
    power = 2 * d
    total = Fraction(0)
    # one pass of the partial-sum law serves every overlap size
    dist = {0: 1}
    for l, p in enumerate(law):
        if l:
            nxt: dict[int, int] = {}
            for s, c in dist.items():
                nxt[s + 1] = nxt.get(s + 1, 0) + c
                nxt[s - 1] = nxt.get(s - 1, 0) + c
            dist = nxt
        if p:
            total += p * Fraction(sum(c * s**power for s, c in dist.items()), 2**l)
    return total


def ldlr_terms(params: LdlrParams) -> list[Fraction]:
    """Exact summands ``d = 0, ..., D // 2`` (the first is the constant 1)."""
    beta = Fraction(params.beta)
    ratio = beta * beta / (4 * params.k * params.k)
    top = params.degree // 2
    terms = [Fraction(1)]
    for d in range(1, top + 1):
        terms.append(ratio**d * overlap_moment(params.n, params.k, d) * composition_binom_sum(params.m, d))
    return terms


def ldlr_norm_squared_exact(params: LdlrParams) -> Fraction:
    return sum(ldlr_terms(params), Fraction(0))


def ldlr_norm_squared(params: LdlrParams) -> float:
    """Squared norm of the degree-``D`` likelihood ratio projection, summed exactly then rounded."""
    return float(ldlr_norm_squared_exact(params))


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchedulePoint:
    n: int
    k: int
    m: int
    degree: int
    beta: float


@dataclass
class SweepRow:
    point: SchedulePoint
    admissible: bool
    reason: str
    norm_squared: Optional[float]


def hypothesis_violations(p: SchedulePoint) -> list[str]:
    """Reasons the point falls outside ``2e sqrt(m D) <= k <= sqrt(n / (4e))`` (empty when admissible)."""
    reasons = []
    if p.k > p.n:
        reasons.append(f"k={p.k} exceeds n={p.n}")
    lower = 2.0 * math.e * math.sqrt(p.m * p.degree)
    upper = math.sqrt(p.n / (4.0 * math.e))
    if p.k < lower:
        reasons.append(f"k={p.k} below 2e sqrt(mD)={lower:.3g}")
    if p.k > upper:
        reasons.append(f"k={p.k} above sqrt(n/4e)={upper:.3g}")
    if not p.beta > -1:
        reasons.append(f"beta={p.beta} not above -1")
    return reasons


def log_power_schedule(n: int, eps: float = 2.0, c: float = 1.0) -> SchedulePoint:
    """Schedule point with ``k = ceil(log^{10/eps} n)`` and ``m = ceil(c k^{2-eps} log^3 n)``.

    The degree is ``D = floor(log^2 n / (2e)^2)`` and ``beta = -1 + 1/(2k)``.
    """
    if n < 2:
        raise InvalidParameter("n must be at least 2")
    ln = math.log(n)
    k = math.ceil(ln ** (10.0 / eps))
    m = math.ceil(c * k ** (2.0 - eps) * ln**3)
    degree = math.floor(ln**2 / (2.0 * math.e) ** 2)
    return SchedulePoint(n=n, k=k, m=m, degree=degree, beta=-1.0 + 1.0 / (2.0 * k))


def admissible_schedule(n: int) -> SchedulePoint:
    """Largest ``k`` allowed by ``k <= sqrt(n / (4e))``, then the largest ``m`` with ``2e sqrt(m D) <= k``."""
    ln = math.log(n)
    k = max(1, math.floor(math.sqrt(n / (4.0 * math.e))))
    degree = max(2, math.floor(ln**2 / (2.0 * math.e) ** 2))
    m = max(1, math.floor(k * k / (4.0 * math.e**2 * degree)))
    return SchedulePoint(n=n, k=k, m=m, degree=degree, beta=-1.0 + 1.0 / (2.0 * k))


def ldlr_boundedness_sweep(points: Iterable[SchedulePoint]) -> list[SweepRow]:
    """Evaluate admissible points; points outside the hypotheses are flagged and skipped."""
    rows = []
    for p in points:
        reasons = hypothesis_violations(p)
        if reasons:
            rows.append(SweepRow(p, False, "; ".join(reasons), None))
            continue
        value = ldlr_norm_squared(LdlrParams(p.n, p.k, p.beta, p.m, p.degree))
        rows.append(SweepRow(p, True, "", value))
    return rows


def write_sweep_csv(rows: Iterable[SweepRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "k", "m", "D", "beta", "norm_squared"])
        for r in rows:
            p = r.point
            value = "" if r.norm_squared is None else repr(r.norm_squared)
            writer.writerow([p.n, p.k, p.m, p.degree, repr(p.beta), value])
