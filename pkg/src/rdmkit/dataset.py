"""Partitioned activity-pattern data, contrast matrices and file ingestion."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, IngestionError, InvalidArgumentError


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ActivityDataset:
    """M independent K x P pattern estimates, plus optional residuals.

    Parameters
    ----------
    patterns : sequence of ndarray
        One (K, P) matrix of pattern estimates per partition.
    residuals : sequence of ndarray, optional
        One (N_m, P) residual matrix per partition, used to estimate the
        channel noise covariance.
    """

    patterns: tuple
    residuals: tuple | None = None

    def __post_init__(self):
        pats = tuple(_frozen(p) for p in self.patterns)
        if len(pats) == 0:
            raise InvalidArgumentError("dataset needs at least one partition")
        shape = pats[0].shape
        if len(shape) != 2:
            raise InvalidArgumentError(f"pattern matrices must be 2-D, got shape {shape}")
        for i, p in enumerate(pats):
            if p.shape != shape:
                raise InvalidArgumentError(
                    f"partition {i} has shape {p.shape}, expected {shape}")
            if not np.all(np.isfinite(p)):
                raise InvalidArgumentError(f"partition {i} contains non-finite values")
        object.__setattr__(self, "patterns", pats)
        if self.residuals is not None:
            res = tuple(_frozen(r) for r in self.residuals)
            if len(res) != len(pats):
                raise InvalidArgumentError(
                    f"{len(res)} residual matrices for {len(pats)} partitions")
            for i, r in enumerate(res):
                if r.ndim != 2 or r.shape[1] != shape[1]:
                    raise InvalidArgumentError(
                        f"residual matrix {i} has shape {r.shape}, expected (N, {shape[1]})")
                if not np.all(np.isfinite(r)):
                    raise InvalidArgumentError(f"residual matrix {i} contains non-finite values")
            object.__setattr__(self, "residuals", res)

    @property
    def k(self) -> int:
        return self.patterns[0].shape[0]

    @property
    def p(self) -> int:
        return self.patterns[0].shape[1]

    @property
    def m(self) -> int:
        return len(self.patterns)

    def stacked(self) -> np.ndarray:
        """Patterns as one (M, K, P) array."""
        return np.stack(self.patterns)

    @classmethod
    def from_array(cls, patterns: np.ndarray, residuals=None) -> "ActivityDataset":
        return cls(tuple(np.asarray(patterns)), residuals)


@dataclass(frozen=True)
class ContrastMatrix:
    """D x K pairwise contrasts in canonical upper-triangular order.

    Row ``r`` belongs to the pair ``pair_index[r] = (i, j)`` with ``i < j``
    and holds +1 in column ``i`` and -1 in column ``j``. Pairs are zero-based.
    """

    c: np.ndarray
    pair_index: tuple

    @property
    def k(self) -> int:
        return self.c.shape[1]

    @property
    def d(self) -> int:
        return self.c.shape[0]

    @property
    def rows(self) -> np.ndarray:
        return np.array([i for i, _ in self.pair_index], dtype=int)

    @property
    def cols(self) -> np.ndarray:
        return np.array([j for _, j in self.pair_index], dtype=int)


def pair_indices(k: int) -> tuple:
    return tuple(combinations(range(k), 2))


def build_contrast_matrix(k: int) -> ContrastMatrix:
    if int(k) != k or k < 2:
        raise InvalidArgumentError(f"need at least 2 conditions, got k={k}")
    k = int(k)
    pairs = pair_indices(k)
    c = np.zeros((len(pairs), k))
    for r, (i, j) in enumerate(pairs):
        c[r, i] = 1.0
        c[r, j] = -1.0
    c.setflags(write=False)
    return ContrastMatrix(c, pairs)


def pattern_differences(dataset: ActivityDataset, c: ContrastMatrix) -> list:
    """Per-partition pattern differences ``C @ B_m``, each D x P."""
    if c.k != dataset.k:
        raise InvalidArgumentError(
            f"contrast matrix is for {c.k} conditions, dataset has {dataset.k}")
    return [c.c @ b for b in dataset.patterns]


def sqrt_transform(dataset: ActivityDataset) -> ActivityDataset:
    """Element-wise square root of every pattern matrix (for firing-rate data).

    Residuals are passed through unchanged.
    """
    for m, b in enumerate(dataset.patterns):
        bad = np.argwhere(b < 0)
        if bad.size:
            i, j = bad[0]
            raise DomainError(
                f"negative value {b[i, j]!r} at partition {m}, row {i}, column {j}")
    return ActivityDataset(tuple(np.sqrt(b) for b in dataset.patterns), dataset.residuals)


# ---------------------------------------------------------------------------
# file I/O


def read_matrix_csv(path, ncols: int | None = None, nrows: int | None = None) -> np.ndarray:
    """Read a headerless numeric CSV matrix, reporting file and row on failure."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read file ({exc.strerror})") from exc
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    out = []
    for lineno, row in enumerate(rows, start=1):
        try:
            vals = [float(cell) for cell in row]
        except ValueError:
            raise IngestionError(f"{path}: row {lineno}: non-numeric cell") from None
        if not all(np.isfinite(vals)):
            raise IngestionError(f"{path}: row {lineno}: NaN or infinite value")
        if ncols is not None and len(vals) != ncols:
            raise IngestionError(
                f"{path}: row {lineno}: expected {ncols} columns, found {len(vals)}")
        if out and len(vals) != len(out[0]):
            raise IngestionError(f"{path}: row {lineno}: ragged row ({len(vals)} columns)")
        out.append(vals)
    if nrows is not None and len(out) != nrows:
        raise IngestionError(f"{path}: expected {nrows} rows, found {len(out)}")
    if not out:
        raise IngestionError(f"{path}: file is empty")
    return np.array(out, dtype=np.float64)


def write_matrix_csv(path, a: np.ndarray) -> None:
    # %.17g round-trips float64 exactly
    np.savetxt(path, np.atleast_2d(a), delimiter=",", fmt="%.17g")


def load_dataset(manifest_path) -> ActivityDataset:
    """Load a dataset from a JSON manifest.

    The manifest holds ``k``, ``p``, ``m`` and a list of ``partitions``
    (CSV files, K rows by P columns) with an optional parallel list of
    ``residuals`` (CSV files, N_m rows by P columns). Paths are relative
    to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise IngestionError(f"{manifest_path}: cannot read manifest ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{manifest_path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc

    try:
        k, p, m = (int(meta[key]) for key in ("k", "p", "m"))
        parts = list(meta["partitions"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"{manifest_path}: missing or invalid field {exc}") from exc
    if len(parts) != m:
        raise IngestionError(f"{manifest_path}: m={m} but {len(parts)} partition files listed")
    base = manifest_path.parent
    patterns = [read_matrix_csv(base / f, ncols=p, nrows=k) for f in parts]
    residuals = None
    if meta.get("residuals") is not None:
        rfiles = list(meta["residuals"])
        if len(rfiles) != m:
            raise IngestionError(
                f"{manifest_path}: m={m} but {len(rfiles)} residual files listed")
        residuals = [read_matrix_csv(base / f, ncols=p) for f in rfiles]
    return ActivityDataset(tuple(patterns), None if residuals is None else tuple(residuals))


def write_dataset(dataset: ActivityDataset, directory, name: str = "dataset") -> Path:
    """Write ``dataset`` as CSV files plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    parts = []
    for i, b in enumerate(dataset.patterns):
        fname = f"{name}_part{i}.csv"
        write_matrix_csv(directory / fname, b)
        parts.append(fname)
    meta = {"k": dataset.k, "p": dataset.p, "m": dataset.m, "partitions": parts}
    if dataset.residuals is not None:
        res = []
        for i, r in enumerate(dataset.residuals):
            fname = f"{name}_resid{i}.csv"
            write_matrix_csv(directory / fname, r)
            res.append(fname)
        meta["residuals"] = res
    manifest = directory / f"{name}.json"
    tmp = manifest.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, manifest)
    return manifest
