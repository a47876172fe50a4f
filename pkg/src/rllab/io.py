"""Matrix serialization: a plain CSV form and a compact little-endian binary form."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import SchemaError
from .models import SampleMatrix

PathLike = Union[str, Path]

MAGIC = b"RLLAB1"
# magic, two pad bytes, row count, column count
HEADER = struct.Struct("<6s2xII")


def write_matrix_csv(path: PathLike, a: np.ndarray) -> None:
    """Write ``a`` with a ``n=<columns>`` header line followed by one row per line."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    lines = [f"n={a.shape[1]}"]
    lines.extend(",".join(repr(float(v)) for v in row) for row in a)
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path: PathLike) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("n="):
        raise SchemaError(f"{path}: line 1: expected header 'n=<columns>'")
    try:
        n = int(text[0][2:])
    except ValueError as exc:
        raise SchemaError(f"{path}: line 1: bad column count {text[0][2:]!r}") from exc
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != n:
            raise SchemaError(f"{path}: line {lineno}: expected {n} fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
    return np.array(rows, dtype=float).reshape(len(rows), n)


def write_matrix_bin(path: PathLike, a: np.ndarray) -> None:
    a = np.atleast_2d(np.asarray(a, dtype="<f8"))
    rows, cols = a.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, rows, cols))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_matrix_bin(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise SchemaError(f"{path}: truncated header")
    magic, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    expected = HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise SchemaError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(rows, cols).copy()


def _stack(samples: SampleMatrix) -> np.ndarray:
    if samples.y is None:
        return samples.x
    return np.column_stack([samples.x, samples.y])


def save_samples(path: PathLike, samples: SampleMatrix) -> None:
    """Save by extension: ``.bin`` for binary, anything else CSV. A response becomes the last column."""
    writer = write_matrix_bin if str(path).endswith(".bin") else write_matrix_csv
    writer(path, _stack(samples))


def load_samples(path: PathLike, with_response: bool = False) -> SampleMatrix:
    reader = read_matrix_bin if str(path).endswith(".bin") else read_matrix_csv
    a = reader(path)
    if with_response:
        return SampleMatrix(a[:, :-1], a[:, -1])
    return SampleMatrix(a)
