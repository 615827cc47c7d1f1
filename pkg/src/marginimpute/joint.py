"""Joint imputation under label and pairwise count constraints.

Count targets come from the observed data: the imputed cells of column ``j``
should bring the column's label counts to ``p_j * n``, and the not fully
observed rows of a pair ``(j, k)`` should bring its joint counts to
``q_jk * n``.  The constraints are relaxed with Lagrange multipliers that
shift the row potentials; rows are then solved independently and the
multipliers follow the count residuals by subgradient steps.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .infer import BatchSolver, DDConfig, DEFAULT_STATE_CAP
from .learn import conditional_scores
from .model import MrfParams
from .table import CategoricalTable, MISSING

log = logging.getLogger(__name__)

CONSTRAINT_FORMAT_VERSION = 1
KINDS = ("label", "pairwise")


@dataclass
class DistributionConstraint:
    """Count targets for the imputed cells of one column or column pair.

    ``target`` is over the constrained cells only (missing cells of the column,
    or rows where the pair is not fully observed); ``duals`` has its shape.
    """

    kind: str
    columns: tuple[int, ...]
    target: np.ndarray
    rows: np.ndarray
    duals: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"constraint kind must be one of {KINDS}")
        self.target = np.asarray(self.target, dtype=float)
        if (self.target < 0).any():
            raise ValueError("targets must be non-negative")
        if self.duals is None:
            self.duals = np.zeros_like(self.target)

    @property
    def n_cells(self) -> int:
        return len(self.rows)

    @property
    def empty(self) -> bool:
        return self.n_cells == 0

    def realized(self, cells: np.ndarray) -> np.ndarray:
        if self.kind == "label":
            (j,) = self.columns
            return np.bincount(cells[self.rows, j], minlength=len(self.target)).astype(float)
        j, k = self.columns
        ca, cb = self.target.shape
        flat = cells[self.rows, j] * cb + cells[self.rows, k]
        return np.bincount(flat, minlength=ca * cb).reshape(ca, cb).astype(float)

    def violation(self, cells: np.ndarray) -> float:
        """Largest absolute gap between realized and target counts."""
        if self.empty:
            return 0.0
        return float(np.max(np.abs(self.realized(cells) - self.target)))


@dataclass
class JointConfig:
    max_iterations: int = 200
    alpha0: float = 1.0
    tau: float = 50.0
    epsilon: float | None = None
    epsilon_fraction: float = 0.02
    cap: int = DEFAULT_STATE_CAP
    dd: DDConfig = field(default_factory=DDConfig)
    repair: bool = True
    patience: int | None = 20

    def __post_init__(self):
        if self.alpha0 < 0 or self.tau <= 0:
            raise ValueError("alpha0 must be >= 0 and tau > 0")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def step(self, t: int) -> float:
        return self.alpha0 / (1.0 + t / self.tau)

    def tolerance(self, c: DistributionConstraint) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return max(1.0, self.epsilon_fraction * c.n_cells)


@dataclass
class JointResult:
    table: CategoricalTable
    violations: list[float]
    duals: list[np.ndarray]
    status: str
    iterations: int
    best_iteration: int
    score: float
    max_violations: list[float] = field(default_factory=list)


def _rescaled(raw: np.ndarray, total: int) -> np.ndarray:
    raw = np.maximum(raw, 0.0)
    s = raw.sum()
    if total == 0:
        return np.zeros_like(raw)
    if s <= 0:
        return np.full_like(raw, total / raw.size)
    return raw * (total / s)


def label_constraint(masked: CategoricalTable, j: int, dist=None) -> DistributionConstraint:
    """Label-count constraint for column ``j``.

    ``dist`` overrides the observed label distribution.
    """
    col = masked.cells[:, j]
    card = masked.domains[j].cardinality
    obs = col[col != MISSING]
    if len(obs) == 0:
        raise ValueError(f"column {masked.domains[j].name!r} has no observed values")
    counts = np.bincount(obs, minlength=card).astype(float)
    p = counts / counts.sum() if dist is None else np.asarray(dist, dtype=float)
    rows = np.flatnonzero(col == MISSING)
    target = _rescaled(p * masked.n_rows - counts, len(rows))
    return DistributionConstraint("label", (j,), target, rows)


def pairwise_constraint(masked: CategoricalTable, j: int, k: int,
                        dist=None) -> DistributionConstraint:
    """Joint-count constraint for columns ``j < k`` over rows not fully observed."""
    if j > k:
        j, k = k, j
        dist = None if dist is None else np.asarray(dist).T
    a, b = masked.cells[:, j], masked.cells[:, k]
    ca, cb = masked.domains[j].cardinality, masked.domains[k].cardinality
    both = (a != MISSING) & (b != MISSING)
    if not both.any():
        raise ValueError(
            f"columns {masked.domains[j].name!r} and {masked.domains[k].name!r} "
            "are never observed together")
    counts = np.bincount(a[both] * cb + b[both], minlength=ca * cb).reshape(ca, cb).astype(float)
    q = counts / counts.sum() if dist is None else np.asarray(dist, dtype=float)
    rows = np.flatnonzero(~both)
    target = _rescaled(q * masked.n_rows - counts, len(rows))
    return DistributionConstraint("pairwise", (j, k), target, rows)


def cramers_v(a: np.ndarray, b: np.ndarray, ca: int, cb: int) -> float:
    if len(a) == 0 or min(ca, cb) < 2:
        return 0.0
    table = np.bincount(a * cb + b, minlength=ca * cb).reshape(ca, cb).astype(float)
    n = table.sum()
    expected = table.sum(1, keepdims=True) * table.sum(0, keepdims=True) / n
    nz = expected > 0
    chi2 = float((((table - expected) ** 2)[nz] / expected[nz]).sum())
    return float(np.sqrt(chi2 / (n * (min(ca, cb) - 1))))


def top_correlated_pairs(masked: CategoricalTable, n_pairs: int = 5) -> list[tuple[int, int]]:
    """Column pairs with the largest Cramér's V on co-observed rows."""
    scored = []
    for j, k in itertools.combinations(range(masked.n_cols), 2):
        a, b = masked.cells[:, j], masked.cells[:, k]
        both = (a != MISSING) & (b != MISSING)
        if not both.any():
            continue
        v = cramers_v(a[both], b[both], masked.domains[j].cardinality,
                      masked.domains[k].cardinality)
        scored.append((-v, j, k))
    scored.sort()
    return [(j, k) for _, j, k in scored[:n_pairs]]


def build_constraints(masked: CategoricalTable, kinds=("label",), pairs=None,
                      n_pairs: int = 5) -> list[DistributionConstraint]:
    """Constraints derived from the observed data.

    Parameters
    ----------
    kinds : iterable of {"label", "pairwise"}
    pairs : list of (j, k), "all", or None
        Column pairs for pairwise constraints; None picks the ``n_pairs``
        most associated pairs.
    """
    kinds = tuple(kinds)
    for k in kinds:
        if k not in KINDS:
            raise ValueError(f"unknown constraint kind {k!r}")
    out = []
    if "label" in kinds:
        out.extend(label_constraint(masked, j) for j in range(masked.n_cols))
    if "pairwise" in kinds:
        if pairs is None:
            pairs = top_correlated_pairs(masked, n_pairs)
        elif pairs == "all":
            pairs = list(itertools.combinations(range(masked.n_cols), 2))
        out.extend(pairwise_constraint(masked, j, k) for j, k in pairs)
    return out


def save_constraints(constraints, masked: CategoricalTable, path) -> None:
    """Write target distributions (normalized full-table targets) to JSON."""
    names = masked.column_names
    docs = []
    for c in constraints:
        full = c.target + _fixed_counts(c, masked)
        dist = full / full.sum() if full.sum() else full
        docs.append({"kind": c.kind, "columns": [names[j] for j in c.columns],
                     "distribution": dist.tolist()})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"version": CONSTRAINT_FORMAT_VERSION, "constraints": docs}, fh, indent=1)
        fh.write("\n")


def _fixed_counts(c: DistributionConstraint, masked: CategoricalTable) -> np.ndarray:
    keep = np.ones(masked.n_rows, dtype=bool)
    keep[c.rows] = False
    return _count_rows(c, masked.cells, np.flatnonzero(keep))


def _count_rows(c: DistributionConstraint, cells, rows) -> np.ndarray:
    probe = DistributionConstraint(c.kind, c.columns, np.zeros_like(c.target), rows)
    return probe.realized(cells)


def load_constraints(path, masked: CategoricalTable) -> list[DistributionConstraint]:
    """Read constraints whose distributions override the observed ones.

    The document is JSON: ``{"version": 1, "constraints": [{"kind", "columns",
    "distribution"}]}``; label distributions are lists over the column's labels
    or ``{label: weight}`` maps, pairwise ones are nested lists.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CONSTRAINT_FORMAT_VERSION:
        raise ValueError(f"unsupported constraint file version {doc.get('version')!r}")
    col = {name: j for j, name in enumerate(masked.column_names)}
    out = []
    for entry in doc["constraints"]:
        try:
            cols = [col[name] for name in entry["columns"]]
        except KeyError as e:
            raise ValueError(f"unknown column {e.args[0]!r} in constraint file") from None
        dist = entry["distribution"]
        if entry["kind"] == "label":
            (j,) = cols
            if isinstance(dist, dict):
                dom = masked.domains[j]
                vec = np.zeros(dom.cardinality)
                for lab, w in dist.items():
                    vec[dom.index(lab)] = w
                dist = vec
            dist = np.asarray(dist, dtype=float)
            out.append(label_constraint(masked, j, dist / dist.sum()))
        elif entry["kind"] == "pairwise":
            j, k = cols
            dist = np.asarray(dist, dtype=float)
            out.append(pairwise_constraint(masked, j, k, dist / dist.sum()))
        else:
            raise ValueError(f"unknown constraint kind {entry['kind']!r}")
    return out


def impute_independent(params: MrfParams, masked: CategoricalTable,
                       cap: int = DEFAULT_STATE_CAP, dd: DDConfig | None = None
                       ) -> CategoricalTable:
    """Complete every row by its own MAP assignment."""
    if masked.n_missing == 0:
        return masked
    return masked.with_cells(BatchSolver(params, masked.cells, cap, dd).solve())


def largest_remainder(target: np.ndarray) -> np.ndarray:
    """Integer counts summing to ``round(sum(target))`` closest to ``target``."""
    target = np.asarray(target, dtype=float)
    total = int(round(target.sum()))
    base = np.floor(target).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(target - base), kind="stable")
        base[order[:short]] += 1
    return base


def repair_label_counts(params: MrfParams, cells: np.ndarray,
                        c: DistributionConstraint) -> np.ndarray:
    """Move cells of one column between labels until the counts hit the
    rounded targets, each time taking the move that loses the least
    conditional score."""
    (j,) = c.columns
    cells = cells.copy()
    if c.empty:
        return cells
    want = largest_remainder(c.target)
    rows = c.rows
    cur = cells[rows, j].copy()
    have = np.bincount(cur, minlength=len(want))
    if np.array_equal(have, want):
        return cells
    S = conditional_scores(params, cells[rows], j)
    # costs never change and a cell moves at most once, so walking all
    # (cell, new label) moves in order of cost reproduces the greedy choice
    cost = S[np.arange(len(rows)), cur][:, None] - S
    ii, bb = np.nonzero(np.isfinite(cost))
    order = np.lexsort((bb, ii, cost[ii, bb]))
    moved = np.zeros(len(rows), dtype=bool)
    for t in order:
        i, b = ii[t], bb[t]
        a = cur[i]
        if moved[i] or have[a] <= want[a] or have[b] >= want[b]:
            continue
        have[a] -= 1
        have[b] += 1
        cur[i] = b
        moved[i] = True
        if np.array_equal(have, want):
            break
    cells[rows, j] = cur
    return cells


def update_duals(duals: np.ndarray, realized: np.ndarray, target: np.ndarray,
                 alpha: float, scale: float = 1.0) -> np.ndarray:
    """Subgradient step on an equality constraint's multipliers."""
    return duals + alpha * (realized - target) / scale


def _flat_duals(constraints) -> np.ndarray:
    if not constraints:
        return np.zeros(0)
    return np.concatenate([c.duals.ravel() for c in constraints])


def impute_constrained(params: MrfParams, masked: CategoricalTable, constraints,
                       cfg: JointConfig | None = None) -> JointResult:
    """Impute all rows jointly under count constraints.

    Each iteration solves every row with the multipliers subtracted from its
    potentials, (optionally) repairs label counts of columns whose violation
    exceeds tolerance, and steps the multipliers along the count residual
    of the unrepaired assignment.  The returned table is the iterate with the
    smallest total absolute violation (ties to the higher score).  Status is
    ``"converged"`` once every constraint is within tolerance,
    ``"stalled"`` when the best violation has not improved for
    ``cfg.patience`` iterations, and ``"infeasible_warning"`` when the
    iteration budget runs out.

    Constraint multipliers are updated in place, so passing the same
    constraint objects again warm-starts the duals.
    """
    cfg = cfg or JointConfig()
    constraints = [c for c in constraints if not c.empty]
    solver = BatchSolver(params, masked.cells, cfg.cap, cfg.dd)
    if not constraints or masked.n_missing == 0:
        cells = solver.solve()
        table = masked.with_cells(cells)
        return JointResult(table, [0.0], [np.zeros(0)], "converged", 1, 1,
                           solver.total_score(cells), [0.0])
    labels = [c for c in constraints if c.kind == "label"]
    pairwise = [c for c in constraints if c.kind == "pairwise"]
    tol = [cfg.tolerance(c) for c in constraints]

    def row_offsets(pat):
        extra = {}
        for c in pairwise:
            j, k = c.columns
            if j in pat.missing and k in pat.observed:
                term = -c.duals[:, pat.observed[k]].T
                extra[j] = extra.get(j, 0) + term
            elif k in pat.missing and j in pat.observed:
                term = -c.duals[pat.observed[j], :]
                extra[k] = extra.get(k, 0) + term
        return extra

    best = None
    viol_trace, max_trace, dual_trace = [], [], []
    status = "infeasible_warning"
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        unary = {}
        for c in labels:
            unary[c.columns[0]] = -c.duals
        edge = {c.columns: -c.duals for c in pairwise}
        raw = solver.solve(unary, edge, row_offsets if pairwise else None)
        cand = raw
        if cfg.repair:
            for c, t in zip(constraints, tol):
                if c.kind == "label" and c.violation(cand) > t:
                    cand = repair_label_counts(params, cand, c)
        gaps = [c.violation(cand) for c in constraints]
        total = float(sum(np.abs(c.realized(cand) - c.target).sum() for c in constraints))
        viol_trace.append(total)
        max_trace.append(max(gaps))
        if best is None or total <= best[0]:
            score = solver.total_score(cand)
            if best is None or total < best[0] or score > best[1]:
                best = (total, score, cand, it)
        if all(g <= t for g, t in zip(gaps, tol)):
            status = "converged"
            dual_trace.append(_flat_duals(constraints))
            break
        if cfg.patience is not None and it - best[3] >= cfg.patience:
            status = "stalled"
            dual_trace.append(_flat_duals(constraints))
            break
        alpha = cfg.step(it - 1)
        for c in constraints:
            c.duals = update_duals(c.duals, c.realized(raw), c.target, alpha,
                                   max(1.0, c.n_cells))
        dual_trace.append(_flat_duals(constraints))
    total, score, cells, best_it = best
    if status != "converged":
        log.info("count constraints not met after %d iterations (total violation %.3g)",
                    it, total)
    return JointResult(masked.with_cells(cells), viol_trace, dual_trace, status, it,
                       best_it, score, max_trace)
