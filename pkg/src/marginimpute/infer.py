"""MAP completion of the missing cells of a row.

Observed cells are folded into the unaries of their missing neighbours, so
each row reduces to a small pairwise problem over its missing cells only.
Rows whose joint state space fits under a cap are solved exactly by
enumeration; larger ones go through dual decomposition with one slave per
missing-missing edge.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import MrfParams
from .table import MISSING

log = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 1_000_000


class StateSpaceTooLarge(ValueError):
    """Raised by the enumerator; use :func:`map_dual_decomp` instead."""


@dataclass
class DDConfig:
    max_iterations: int = 500
    alpha0: float = 1.0
    tau: float = 50.0
    gap_tol: float = 1e-6

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.tau > 0):
            raise ValueError("alpha0 and tau must be positive")

    def step(self, t: int) -> float:
        return self.alpha0 / (1.0 + t / self.tau)


@dataclass
class DDResult:
    assignment: np.ndarray
    primal: float
    dual: float
    gap: float
    iterations: int


class RowProblem:
    """Completion problem of one row.

    Parameters
    ----------
    params : MrfParams
    row : array_like of int
        Full row; ``MISSING`` marks the cells to fill.
    unary_offsets : dict, optional
        ``{column: vector}`` added to the node potential of a missing cell.
    edge_offsets : dict, optional
        ``{(j, k): matrix}`` oriented ``[y_j, y_k]``, added to the edge
        potential between two missing cells.
    """

    def __init__(self, params: MrfParams, row, unary_offsets=None, edge_offsets=None):
        self.params = params
        self.row = np.asarray(row, dtype=np.int64)
        self.missing = tuple(int(j) for j in np.flatnonzero(self.row == MISSING))
        self.unary_offsets = unary_offsets or {}
        self.edge_offsets = edge_offsets or {}
        cards = params.layout.cards
        for j, v in self.unary_offsets.items():
            if np.shape(v) != (cards[j],):
                raise ValueError(f"offset for column {j} must have length {cards[j]}")

    @property
    def cards(self) -> tuple[int, ...]:
        return tuple(self.params.layout.cards[j] for j in self.missing)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.cards, dtype=object)) if self.missing else 1

    def unaries(self) -> list[np.ndarray]:
        p, y = self.params, self.row
        out = []
        for j in self.missing:
            u = p.node(j).astype(float)
            for k in p.layout.neighbors(j):
                if y[k] != MISSING:
                    u = u + p.edge(j, k)[:, y[k]]
            if j in self.unary_offsets:
                u = u + np.asarray(self.unary_offsets[j], dtype=float)
            out.append(u)
        return out

    def pairs(self) -> dict[tuple[int, int], np.ndarray]:
        """Pairwise tables between missing cells, keyed by local positions."""
        out = {}
        M = self.missing
        for a in range(len(M)):
            for b in range(a + 1, len(M)):
                j, k = M[a], M[b]
                t = self.params.edge(j, k)
                extra = self.edge_offsets.get((j, k))
                if t is None and extra is None:
                    continue
                mat = np.zeros((self.params.layout.cards[j], self.params.layout.cards[k]))
                if t is not None:
                    mat = mat + t
                if extra is not None:
                    mat = mat + extra
                out[(a, b)] = mat
        return out

    def score(self, assignment) -> float:
        """Score of all terms touching the missing cells (offsets included)."""
        x = np.asarray(assignment, dtype=np.int64)
        s = sum(float(u[x[a]]) for a, u in enumerate(self.unaries()))
        for (a, b), mat in self.pairs().items():
            s += float(mat[x[a], x[b]])
        return s


def _score_tensor(unaries, pairs, cards) -> np.ndarray:
    n = len(cards)
    T = np.zeros(cards)
    for a, u in enumerate(unaries):
        shape = [1] * n
        shape[a] = cards[a]
        T += u.reshape(shape)
    for (a, b), mat in pairs.items():
        shape = [1] * n
        shape[a], shape[b] = cards[a], cards[b]
        T += mat.reshape(shape)
    return T


def _outer_sum(us, m: int) -> np.ndarray:
    """``(m, prod cards)`` array of per-row unary sums in C order."""
    acc = np.zeros((m, 1))
    for u in us:
        acc = (acc[:, :, None] + u[:, None, :]).reshape(m, -1)
    return acc


def map_brute_force(problem: RowProblem, cap: int = DEFAULT_STATE_CAP):
    """Exact completion by enumeration.

    Returns ``(assignment, score)``; ties go to the lexicographically smallest
    assignment (first in C order).
    """
    if not problem.missing:
        return np.zeros(0, dtype=np.int64), 0.0
    if problem.n_states > cap:
        raise StateSpaceTooLarge(
            f"{problem.n_states} states exceed the enumeration cap {cap}; "
            "use map_dual_decomp")
    cards = problem.cards
    T = _score_tensor(problem.unaries(), problem.pairs(), cards)
    flat = int(np.argmax(T))
    x = np.array(np.unravel_index(flat, cards), dtype=np.int64)
    return x, float(T.reshape(-1)[flat])


def map_dual_decomp(problem: RowProblem, cfg: DDConfig | None = None) -> DDResult:
    """Dual decomposition over single-edge slaves.

    Node potentials are split equally among a node's incident slaves.  The
    per-iteration primal candidate takes each node's majority label over its
    slaves (ties to the lowest label).  Returns the best primal found, the
    smallest dual bound seen and their gap.
    """
    cfg = cfg or DDConfig()
    if not problem.missing:
        raise ValueError("row has no missing cells")
    unaries = problem.unaries()
    pairs = problem.pairs()
    cards = np.array(problem.cards)
    n = len(cards)
    edges = sorted(pairs)
    deg = np.zeros(n, dtype=np.int64)
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1

    isolated = np.flatnonzero(deg == 0)
    iso_labels = {int(a): int(np.argmax(unaries[a])) for a in isolated}
    iso_value = sum(float(unaries[a][iso_labels[a]]) for a in iso_labels)

    def primal_score(x):
        s = sum(float(unaries[a][x[a]]) for a in range(n))
        return s + sum(float(pairs[e][x[e[0]], x[e[1]]]) for e in edges)

    if not edges:
        x = np.array([iso_labels[a] for a in range(n)], dtype=np.int64)
        return DDResult(x, iso_value, iso_value, 0.0, 1)

    C = int(cards.max())
    E = len(edges)
    src = np.array([a for a, _ in edges])
    dst = np.array([b for _, b in edges])
    base = np.full((E, C, C), -np.inf)
    for e, (a, b) in enumerate(edges):
        ca, cb = cards[a], cards[b]
        base[e, :ca, :cb] = (pairs[(a, b)] + unaries[a][:, None] / deg[a]
                             + unaries[b][None, :] / deg[b])
    lam_s = np.zeros((E, C))
    lam_d = np.zeros((E, C))
    rows = np.arange(E)
    best_x, best_primal, best_dual = None, -np.inf, np.inf
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        M = base + lam_s[:, :, None] + lam_d[:, None, :]
        flat = M.reshape(E, -1)
        idx = np.argmax(flat, axis=1)
        dual = float(flat[rows, idx].sum()) + iso_value
        best_dual = min(best_dual, dual)
        xs, xd = idx // C, idx % C
        votes = np.zeros((n, C))
        np.add.at(votes, (src, xs), 1.0)
        np.add.at(votes, (dst, xd), 1.0)
        x = np.argmax(votes, axis=1)
        for a, lab in iso_labels.items():
            x[a] = lab
        primal = primal_score(x)
        if primal > best_primal:
            best_x, best_primal = x.copy(), primal
        if best_dual - best_primal <= cfg.gap_tol * max(1.0, abs(best_primal)):
            break
        freq = votes / np.maximum(deg, 1)[:, None]
        g_s = -freq[src]
        g_s[rows, xs] += 1.0
        g_d = -freq[dst]
        g_d[rows, xd] += 1.0
        alpha = cfg.step(it - 1)
        lam_s -= alpha * g_s
        lam_d -= alpha * g_d
    gap = max(0.0, best_dual - best_primal)
    return DDResult(best_x.astype(np.int64), best_primal, best_dual, gap, it)


def solve_row(problem: RowProblem, cap: int = DEFAULT_STATE_CAP,
              dd: DDConfig | None = None) -> np.ndarray:
    """Completed copy of ``problem.row`` using the exact solver when it fits."""
    out = problem.row.copy()
    if not problem.missing:
        return out
    if problem.n_states <= cap:
        x, _ = map_brute_force(problem, cap)
    else:
        x = map_dual_decomp(problem, dd).assignment
    out[list(problem.missing)] = x
    return out


class _Pattern:
    """Rows sharing one set of missing columns, with precomputed potentials."""

    def __init__(self, params: MrfParams, cells: np.ndarray, rows: np.ndarray,
                 missing: tuple[int, ...]):
        self.rows = rows
        self.missing = missing
        lay = params.layout
        self.cards = tuple(lay.cards[j] for j in missing)
        self.n_states = int(np.prod(self.cards, dtype=object)) if missing else 1
        sub = cells[rows]
        self.observed = {k: sub[:, k] for k in range(cells.shape[1]) if k not in missing}
        self.unaries = []
        for j in missing:
            u = np.tile(params.node(j), (len(rows), 1))
            for k in lay.neighbors(j):
                if k in self.observed:
                    u += params.edge(j, k)[:, self.observed[k]].T
            self.unaries.append(u)
        self.pairs = {}
        for a in range(len(missing)):
            for b in range(a + 1, len(missing)):
                t = params.edge(missing[a], missing[b])
                if t is not None:
                    self.pairs[(a, b)] = np.array(t)
        self._P = None

    def pair_tensor(self) -> np.ndarray:
        if self._P is None:
            self._P = _score_tensor([], self.pairs, self.cards)
        return self._P


class BatchSolver:
    """Completes many rows at once, grouping them by missing pattern.

    Potentials are precomputed once; :meth:`solve` accepts per-column unary
    offsets and per-edge offsets (both shared by all rows) plus optional
    per-row unary offsets, which is what constrained imputation needs.

    Parameters
    ----------
    params : MrfParams
    cells : ndarray of int, shape (n, K)
        Rows with ``MISSING`` cells.
    cap : int
        Enumeration cap on a row's joint state count.
    chunk : int
        Upper bound on ``rows * states`` evaluated per vectorized block.
    """

    def __init__(self, params: MrfParams, cells, cap: int = DEFAULT_STATE_CAP,
                 dd: DDConfig | None = None, chunk: int = 4_000_000):
        self.params = params
        self.cells = np.asarray(cells, dtype=np.int64)
        self.cap = cap
        self.dd = dd or DDConfig()
        self.chunk = chunk
        miss = self.cells == MISSING
        self.patterns: list[_Pattern] = []
        has = miss.any(axis=1)
        if has.any():
            keys, inv = np.unique(miss[has], axis=0, return_inverse=True)
            idx = np.flatnonzero(has)
            inv = np.asarray(inv).reshape(-1)
            for p, key in enumerate(keys):
                rows = idx[inv == p]
                self.patterns.append(
                    _Pattern(params, self.cells, rows, tuple(np.flatnonzero(key).tolist())))

    def solve(self, unary_offsets=None, edge_offsets=None, row_offsets=None):
        """Return the completed cell array.

        Parameters
        ----------
        unary_offsets : dict, optional
            ``{j: vector}`` added to every missing cell of column ``j``.
        edge_offsets : dict, optional
            ``{(j, k): matrix}`` added where both ``j`` and ``k`` are missing.
        row_offsets : callable, optional
            Called once per pattern group as ``row_offsets(pattern)``; returns
            ``{j: array of shape (rows_in_group, c_j)}`` of per-row unary terms.
        """
        unary_offsets = unary_offsets or {}
        edge_offsets = edge_offsets or {}
        out = self.cells.copy()
        for pat in self.patterns:
            us = []
            extra_rows = row_offsets(pat) if row_offsets is not None else {}
            for a, j in enumerate(pat.missing):
                u = pat.unaries[a]
                if j in unary_offsets:
                    u = u + unary_offsets[j]
                if j in extra_rows:
                    u = u + extra_rows[j]
                us.append(u)
            pair_extra = {}
            for a in range(len(pat.missing)):
                for b in range(a + 1, len(pat.missing)):
                    key = (pat.missing[a], pat.missing[b])
                    if key in edge_offsets:
                        pair_extra[(a, b)] = edge_offsets[key]
            if pat.n_states <= self.cap:
                X = self._enumerate(pat, us, pair_extra)
            else:
                X = self._decompose(pat, us, pair_extra)
            out[np.ix_(pat.rows, pat.missing)] = X
        return out

    def _enumerate(self, pat: _Pattern, us, pair_extra) -> np.ndarray:
        Q = pat.pair_tensor()
        if pair_extra:
            Q = Q + _score_tensor([], pair_extra, pat.cards)
        n = len(pat.cards)
        m = len(pat.rows)
        # row-specific unaries enter as outer sums over two halves of the
        # variables, so the full state tensor is touched only a few times
        h = n // 2
        s1 = int(np.prod(pat.cards[:h], dtype=np.int64))
        s2 = int(np.prod(pat.cards[h:], dtype=np.int64))
        Q = Q.reshape(s1, s2)
        X = np.empty((m, n), dtype=np.int64)
        step = max(1, self.chunk // max(pat.n_states, 1))
        for lo in range(0, m, step):
            hi = min(m, lo + step)
            A = _outer_sum([u[lo:hi] for u in us[:h]], hi - lo)
            B = _outer_sum([u[lo:hi] for u in us[h:]], hi - lo)
            T = Q[None, :, :] + B[:, None, :]
            T += A[:, :, None]
            flat = np.argmax(T.reshape(hi - lo, -1), axis=1)
            X[lo:hi] = np.stack(np.unravel_index(flat, pat.cards), axis=1)
        return X

    def _decompose(self, pat: _Pattern, us, pair_extra) -> np.ndarray:
        X = np.empty((len(pat.rows), len(pat.cards)), dtype=np.int64)
        for r, i in enumerate(pat.rows):
            offsets = {j: us[a][r] - pat.unaries[a][r] for a, j in enumerate(pat.missing)}
            edge_off = {(pat.missing[a], pat.missing[b]): m for (a, b), m in pair_extra.items()}
            prob = RowProblem(self.params, self.cells[i], offsets, edge_off)
            X[r] = map_dual_decomp(prob, self.dd).assignment
        return X

    def total_score(self, completed) -> float:
        """Sum over rows of the score terms touching missing cells."""
        completed = np.asarray(completed)
        total = 0.0
        for pat in self.patterns:
            X = completed[np.ix_(pat.rows, pat.missing)]
            r = np.arange(len(pat.rows))
            for a, u in enumerate(pat.unaries):
                total += float(u[r, X[:, a]].sum())
            for (a, b), mat in pat.pairs.items():
                total += float(mat[X[:, a], X[:, b]].sum())
        return total
