"""Categorical tables with missing cells.

A :class:`CategoricalTable` stores an ``n x K`` integer grid where each cell
is an index into its column's :class:`ColumnDomain` or ``MISSING`` (-1).
Tables are treated as immutable; every operation returns a new table.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MISSING = -1
TABLE_FORMAT_VERSION = 1


class TableError(ValueError):
    """Base class for table construction and validation errors."""


class TableParseError(TableError):
    """Malformed delimited input."""


class DomainError(TableError):
    """A column has no usable labels or a label is outside its domain."""


@dataclass(frozen=True)
class ColumnDomain:
    name: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise DomainError(f"column {self.name!r}: duplicate labels")
        if not self.labels:
            raise DomainError(f"column {self.name!r}: empty domain")

    @property
    def cardinality(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(
                f"label {label!r} not in domain of column {self.name!r}") from None


class CategoricalTable:
    """Immutable categorical data matrix with missing markers.

    Parameters
    ----------
    domains : sequence of ColumnDomain
        One domain per column, shared by all rows.
    cells : array_like of int, shape (n, K)
        Label indices, ``MISSING`` for missing cells.
    """

    def __init__(self, domains: Sequence[ColumnDomain], cells):
        self.domains = tuple(domains)
        cells = np.array(cells, dtype=np.int64, copy=True)
        if cells.ndim != 2 or cells.shape[1] != len(self.domains):
            raise TableError(
                f"cells must have shape (n, {len(self.domains)}), got {cells.shape}")
        card = self.cardinalities
        bad = (cells < MISSING) | (cells >= card[None, :])
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DomainError(
                f"cell ({i}, {j}) = {cells[i, j]} outside domain of "
                f"column {self.domains[j].name!r}")
        cells.setflags(write=False)
        self.cells = cells

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_cols(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([d.cardinality for d in self.domains], dtype=np.int64)

    @property
    def column_names(self) -> list[str]:
        return [d.name for d in self.domains]

    @property
    def missing_mask(self) -> np.ndarray:
        return self.cells == MISSING

    @property
    def n_missing(self) -> int:
        return int(self.missing_mask.sum())

    def with_cells(self, cells) -> "CategoricalTable":
        return CategoricalTable(self.domains, cells)

    def same_domains(self, other: "CategoricalTable") -> bool:
        return self.domains == other.domains

    def labels_at(self, i: int) -> list[str | None]:
        return [None if v == MISSING else d.labels[v]
                for v, d in zip(self.cells[i], self.domains)]

    def __eq__(self, other):
        if not isinstance(other, CategoricalTable):
            return NotImplemented
        return self.domains == other.domains and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        return (f"CategoricalTable(n={self.n_rows}, K={self.n_cols}, "
                f"missing={self.n_missing})")


@dataclass(frozen=True)
class MissingSpec:
    """Per-column MCAR fractions and the generator seed."""

    fractions: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        for f in self.fractions:
            if not 0.0 <= f < 1.0:
                raise ValueError(f"missing fraction {f} not in [0, 1)")

    @classmethod
    def uniform(cls, fraction: float, n_cols: int, seed: int = 0) -> "MissingSpec":
        return cls(tuple([float(fraction)] * n_cols), int(seed))


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def load_csv(source, missing_marker: str = "?", delimiter: str = ",",
             domains: Sequence[ColumnDomain] | None = None) -> CategoricalTable:
    """Read a delimited text table with a header row.

    Labels are the distinct observed values of each column, sorted
    lexicographically, unless fixed ``domains`` are supplied, in which case
    every observed value must belong to the given domain.
    """
    if not missing_marker:
        raise ValueError("missing_marker must be non-empty")
    fh = _open_text(source)
    try:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TableParseError("empty input: header row required") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise TableParseError(
                    f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append([v.strip() for v in row])
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()

    raw = np.array(rows, dtype=object).reshape(len(rows), len(header))
    observed = raw != missing_marker
    if domains is None:
        doms = []
        for j, name in enumerate(header):
            labels = sorted(set(raw[observed[:, j], j]))
            if not labels:
                raise DomainError(f"column {name!r} has no observed values")
            doms.append(ColumnDomain(name, tuple(labels)))
    else:
        doms = list(domains)
        if [d.name for d in doms] != header:
            raise DomainError("header does not match the supplied domains")
    cells = np.full(raw.shape, MISSING, dtype=np.int64)
    for j, d in enumerate(doms):
        lookup = {lab: k for k, lab in enumerate(d.labels)}
        for i in np.flatnonzero(observed[:, j]):
            try:
                cells[i, j] = lookup[raw[i, j]]
            except KeyError:
                raise DomainError(
                    f"row {i + 2}: label {raw[i, j]!r} not in domain of "
                    f"column {d.name!r}") from None
    return CategoricalTable(doms, cells)


def write_csv(table: CategoricalTable, dest, missing_marker: str = "?",
              delimiter: str = ",") -> None:
    """Write ``table`` as delimited text (inverse of :func:`load_csv`)."""
    own = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(table.column_names)
        for i in range(table.n_rows):
            w.writerow([missing_marker if v is None else v for v in table.labels_at(i)])
    finally:
        if own:
            fh.close()


def table_to_dict(table: CategoricalTable) -> dict:
    return {
        "version": TABLE_FORMAT_VERSION,
        "domains": [{"name": d.name, "labels": list(d.labels)} for d in table.domains],
        "cells": table.cells.tolist(),
    }


def table_from_dict(doc: dict) -> CategoricalTable:
    if doc.get("version") != TABLE_FORMAT_VERSION:
        raise TableError(f"unsupported table format version {doc.get('version')!r}")
    doms = [ColumnDomain(d["name"], tuple(d["labels"])) for d in doc["domains"]]
    cells = np.array(doc["cells"], dtype=np.int64).reshape(-1, len(doms))
    return CategoricalTable(doms, cells)


def save_table(table: CategoricalTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table_to_dict(table), fh, separators=(",", ":"))
        fh.write("\n")


def load_table(path) -> CategoricalTable:
    with open(path, encoding="utf-8") as fh:
        return table_from_dict(json.load(fh))


def inject_mcar(truth: CategoricalTable, spec: MissingSpec) -> CategoricalTable:
    """Mask exactly ``floor(fraction * n)`` cells per column, uniformly at random."""
    if truth.n_missing:
        raise TableError("inject_mcar expects a table without missing cells")
    if len(spec.fractions) != truth.n_cols:
        raise ValueError("one missing fraction per column required")
    n = truth.n_rows
    rng = np.random.default_rng(spec.seed)
    cells = truth.cells.copy()
    for j, frac in enumerate(spec.fractions):
        # tolerance keeps products like 0.29 * 100 = 28.999... at 29
        k = int(np.floor(frac * n + 1e-9))
        if k >= n:
            raise TableError(
                f"fraction {frac} leaves column {truth.domains[j].name!r} fully missing")
        if k:
            cells[rng.choice(n, size=k, replace=False), j] = MISSING
    return truth.with_cells(cells)


def mask_of(masked: CategoricalTable) -> set[tuple[int, int]]:
    return {(int(i), int(j)) for i, j in np.argwhere(masked.missing_mask)}


def make_splits(truth: CategoricalTable, spec: MissingSpec, n_splits: int):
    """Independent MCAR injections with sub-seeds ``seed+1 .. seed+n_splits``.

    Returns a list of ``(masked_table, mask)`` pairs.
    """
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    out = []
    for s in range(1, n_splits + 1):
        sub = MissingSpec(spec.fractions, spec.seed + s)
        masked = inject_mcar(truth, sub)
        out.append((masked, mask_of(masked)))
    return out


def column_modes(table: CategoricalTable) -> np.ndarray:
    """Most frequent observed label per column; ties go to the lowest index."""
    modes = np.empty(table.n_cols, dtype=np.int64)
    for j, card in enumerate(table.cardinalities):
        col = table.cells[:, j]
        counts = np.bincount(col[col != MISSING], minlength=card)
        if counts.sum() == 0:
            raise DomainError(f"column {table.domains[j].name!r} has no observed cells")
        modes[j] = int(np.argmax(counts))
    return modes


def mode_fill(table: CategoricalTable) -> CategoricalTable:
    modes = column_modes(table)
    cells = np.where(table.missing_mask, modes[None, :], table.cells)
    return table.with_cells(cells)


def hamming_loss(imputed: CategoricalTable, truth: CategoricalTable,
                 mask: Iterable[tuple[int, int]]) -> float:
    """Fraction of masked cells where ``imputed`` differs from ``truth``."""
    if not imputed.same_domains(truth):
        raise DomainError("tables have different domains")
    if imputed.shape != truth.shape:
        raise TableError("tables have different shapes")
    idx = np.array(sorted(mask), dtype=np.int64).reshape(-1, 2)
    if len(idx) == 0:
        raise ValueError("empty mask")
    a = imputed.cells[idx[:, 0], idx[:, 1]]
    b = truth.cells[idx[:, 0], idx[:, 1]]
    if (a == MISSING).any() or (b == MISSING).any():
        raise TableError("masked positions must be filled in both tables")
    return float(np.mean(a != b))


def write_mask(mask: Iterable[tuple[int, int]], table: CategoricalTable, dest) -> None:
    names = table.column_names
    own = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", encoding="utf-8", newline="\n") if own else dest
    try:
        for i, j in sorted(mask):
            fh.write(f"{i}\t{names[j]}\n")
    finally:
        if own:
            fh.close()


def read_mask(source, table: CategoricalTable) -> set[tuple[int, int]]:
    col = {name: j for j, name in enumerate(table.column_names)}
    out = set()
    fh = _open_text(source)
    try:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                i, name = line.split("\t")
                out.add((int(i), col[name]))
            except (ValueError, KeyError):
                raise TableParseError(f"mask line {lineno}: {line!r}") from None
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()
    return out
