"""Pairwise MRF with indicator features.

The score of a complete row ``y`` is::

    s(y) = sum_j node_j[y_j] + sum_{(j,k) in edges} edge_jk[y_j, y_k]

All potentials live in one flat parameter vector.  The layout is fixed:
node tables in column order, then edge tables in lexicographic ``(j, k)``
order, each table row-major.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .table import ColumnDomain, MISSING

MODEL_FORMAT_VERSION = 1


def complete_edges(n_cols: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(n_cols), 2))


def normalize_edges(edges, n_cols: int) -> tuple[tuple[int, int], ...]:
    out = []
    for j, k in edges:
        j, k = int(j), int(k)
        if j == k or not (0 <= j < n_cols and 0 <= k < n_cols):
            raise ValueError(f"invalid edge ({j}, {k})")
        out.append((min(j, k), max(j, k)))
    if len(set(out)) != len(out):
        raise ValueError("duplicate edges")
    return tuple(sorted(out))


@dataclass(frozen=True)
class ParamLayout:
    """Index map between potential tables and the flat parameter vector."""

    cards: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    node_offsets: tuple[int, ...] = field(init=False)
    edge_offsets: dict = field(init=False, compare=False)
    dim: int = field(init=False)

    def __post_init__(self):
        pos = 0
        node = []
        for c in self.cards:
            node.append(pos)
            pos += c
        edge = {}
        for j, k in self.edges:
            edge[(j, k)] = pos
            pos += self.cards[j] * self.cards[k]
        object.__setattr__(self, "node_offsets", tuple(node))
        object.__setattr__(self, "edge_offsets", edge)
        object.__setattr__(self, "dim", pos)

    @classmethod
    def build(cls, cards, edges=None) -> "ParamLayout":
        cards = tuple(int(c) for c in cards)
        edges = complete_edges(len(cards)) if edges is None else edges
        return cls(cards, normalize_edges(edges, len(cards)))

    @property
    def n_cols(self) -> int:
        return len(self.cards)

    def node(self, theta: np.ndarray, j: int) -> np.ndarray:
        o = self.node_offsets[j]
        return theta[o:o + self.cards[j]]

    def edge(self, theta: np.ndarray, j: int, k: int) -> np.ndarray | None:
        """Edge table oriented as ``[y_j, y_k]`` (a view), or None if absent."""
        if j < k:
            o = self.edge_offsets.get((j, k))
            if o is None:
                return None
            return theta[o:o + self.cards[j] * self.cards[k]].reshape(
                self.cards[j], self.cards[k])
        t = self.edge(theta, k, j)
        return None if t is None else t.T

    def neighbors(self, j: int) -> list[int]:
        return sorted({k if a == j else a for a, k in self.edges if j in (a, k)})

    def node_index(self, j: int, a: int) -> int:
        return self.node_offsets[j] + a

    def edge_index(self, j: int, k: int, a: int, b: int) -> int:
        if j > k:
            j, k, a, b = k, j, b, a
        return self.edge_offsets[(j, k)] + a * self.cards[k] + b


class MrfParams:
    """Node and edge potentials over fixed column domains.

    Parameters
    ----------
    domains : sequence of ColumnDomain
    theta : array_like, optional
        Flat parameter vector; zeros if omitted.
    edges : iterable of (j, k), optional
        Edge set; the complete graph by default.
    """

    def __init__(self, domains: Sequence[ColumnDomain], theta=None, edges=None):
        self.domains = tuple(domains)
        self.layout = ParamLayout.build([d.cardinality for d in self.domains], edges)
        if theta is None:
            theta = np.zeros(self.layout.dim)
        theta = np.array(theta, dtype=np.float64, copy=True)
        if theta.shape != (self.layout.dim,):
            raise ValueError(
                f"parameter vector has shape {theta.shape}, expected ({self.layout.dim},)")
        theta.setflags(write=False)
        self.theta = theta
        self.objective: float | None = None

    @property
    def edges(self):
        return self.layout.edges

    @property
    def dim(self) -> int:
        return self.layout.dim

    def node(self, j: int) -> np.ndarray:
        return self.layout.node(self.theta, j)

    def edge(self, j: int, k: int) -> np.ndarray | None:
        return self.layout.edge(self.theta, j, k)

    def flatten(self) -> np.ndarray:
        return self.theta.copy()

    def with_theta(self, theta) -> "MrfParams":
        return MrfParams(self.domains, theta, self.edges)

    @classmethod
    def from_tables(cls, domains, nodes, edge_tables: dict) -> "MrfParams":
        """Assemble parameters from per-column vectors and ``{(j, k): matrix}``."""
        layout = ParamLayout.build([d.cardinality for d in domains], list(edge_tables))
        theta = np.zeros(layout.dim)
        for j, vec in enumerate(nodes):
            layout.node(theta, j)[:] = vec
        for (j, k), mat in edge_tables.items():
            mat = np.asarray(mat, dtype=float)
            if j > k:
                j, k, mat = k, j, mat.T
            layout.edge(theta, j, k)[:] = mat
        return cls(domains, theta, layout.edges)

    def __eq__(self, other):
        if not isinstance(other, MrfParams):
            return NotImplemented
        return (self.domains == other.domains and self.edges == other.edges
                and np.array_equal(self.theta, other.theta))


def _check_assignment(params: MrfParams, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    cards = np.asarray(params.layout.cards)
    if y.shape != cards.shape:
        raise ValueError(f"assignment must have length {len(cards)}")
    if ((y < 0) | (y >= cards)).any():
        raise ValueError(f"assignment {y.tolist()} outside the column domains")
    return y


def score_row(params: MrfParams, y) -> float:
    y = _check_assignment(params, y)
    s = sum(float(params.node(j)[y[j]]) for j in range(len(y)))
    for j, k in params.edges:
        s += float(params.edge(j, k)[y[j], y[k]])
    return s


def tree_scores(params: MrfParams, y) -> np.ndarray:
    """Per-column spanning-tree scores; each edge counts half toward both ends.

    The entries sum to :func:`score_row`.
    """
    y = _check_assignment(params, y)
    out = np.array([params.node(j)[y[j]] for j in range(len(y))], dtype=float)
    for j, k in params.edges:
        half = 0.5 * params.edge(j, k)[y[j], y[k]]
        out[j] += half
        out[k] += half
    return out


def piece_margin_score(params: MrfParams, row_context, piece_vars, candidate) -> float:
    """Score terms touching ``piece_vars``, with ``candidate`` labels plugged in.

    Edges are counted with full weight, so differences between two candidates
    equal the corresponding differences of :func:`score_row`.
    """
    piece_vars = [int(v) for v in piece_vars]
    if len(piece_vars) not in (1, 2) or len(set(piece_vars)) != len(piece_vars):
        raise ValueError("a piece has one or two distinct variables")
    ctx = np.asarray(row_context, dtype=np.int64).copy()
    outside = np.ones(len(ctx), dtype=bool)
    outside[piece_vars] = False
    if (ctx[outside] == MISSING).any():
        raise ValueError("piece context has missing entries")
    ctx[piece_vars] = candidate
    y = _check_assignment(params, ctx)
    inside = set(piece_vars)
    s = sum(float(params.node(j)[y[j]]) for j in piece_vars)
    for j, k in params.edges:
        if j in inside or k in inside:
            s += float(params.edge(j, k)[y[j], y[k]])
    return s


def delta_hamming(u, u_bar) -> int:
    u, u_bar = np.asarray(u), np.asarray(u_bar)
    if u.shape != u_bar.shape:
        raise ValueError("label vectors differ in length")
    return int(np.count_nonzero(u != u_bar))


def save_model(params: MrfParams, path) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "domains": [{"name": d.name, "labels": list(d.labels)} for d in params.domains],
        "edge_set": [list(e) for e in params.edges],
        # repr() of a float is the shortest string that round-trips exactly
        "theta": [repr(float(v)) for v in params.theta],
    }
    if params.objective is not None:
        doc["objective"] = repr(float(params.objective))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> MrfParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    domains = [ColumnDomain(d["name"], tuple(d["labels"])) for d in doc["domains"]]
    theta = np.array([float(v) for v in doc["theta"]])
    params = MrfParams(domains, theta, [tuple(e) for e in doc["edge_set"]])
    if "objective" in doc:
        params.objective = float(doc["objective"])
    return params
