"""Deterministic SVG line plots from CSV tables."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import SchemaError  # noqa: E402


@dataclass
class PlotSpec:
    x: str
    y: str
    group: Optional[str] = None
    logx: bool = False
    logy: bool = False
    title: str = ""
    aggregate: str = "median"  # how repeated x values within a group are combined: median, mean or none


def read_csv_columns(path, columns: list[str]) -> list[dict[str, str]]:
    """Rows as dictionaries; raises ``SchemaError`` naming the line of any short row or missing column."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: line 1: empty file, expected a header row") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: line 1: missing columns {missing}")
        rows = []
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(header):
                raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(fields)}")
            rows.append(dict(zip(header, fields)))
    return rows


def _number(text: str, path, lineno: int, column: str) -> float:
    if text == "":
        return float("nan")
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"{path}: line {lineno}: column {column!r} is not numeric: {text!r}") from None


def series_from_rows(
    rows: list[dict[str, str]], spec: PlotSpec, path="<csv>"
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    groups: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for lineno, row in enumerate(rows, start=2):
        key = row[spec.group] if spec.group else spec.y
        groups[key].append((_number(row[spec.x], path, lineno, spec.x), _number(row[spec.y], path, lineno, spec.y)))
    out = {}
    for key in sorted(groups):
        pts = np.array(groups[key], dtype=float).reshape(-1, 2)
        if spec.aggregate == "none":
            order = np.argsort(pts[:, 0], kind="stable")
            out[key] = (pts[order, 0], pts[order, 1])
            continue
        reduce = np.nanmedian if spec.aggregate == "median" else np.nanmean
        xs = np.unique(pts[:, 0])
        at = [pts[pts[:, 0] == x, 1] for x in xs]
        ys = np.array([reduce(y) if np.any(~np.isnan(y)) else np.nan for y in at])
        out[key] = (xs, ys)
    return out


def plot_csv(path, spec: PlotSpec, out) -> Path:
    """Render one line per group and write an SVG whose bytes depend only on the inputs."""
    columns = [spec.x, spec.y] + ([spec.group] if spec.group else [])
    rows = read_csv_columns(path, columns)
    series = series_from_rows(rows, spec, path)
    plt.rcParams["svg.hashsalt"] = "rllab"
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for key, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", label=key)
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel(spec.x)
    ax.set_ylabel(spec.y)
    if spec.title:
        ax.set_title(spec.title)
    if series:
        ax.legend()
    out = Path(out)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out
