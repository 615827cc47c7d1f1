"""Piecewise large-margin training of the pairwise MRF.

Each training piece is one row with one or two originally observed target
columns; every other column of the row is frozen context.  The squared-hinge
(Weston-Watkins) objective over all pieces is::

    ||theta||^2 / 2 + lam/2 * sum_pieces sum_{ubar != u} max(0, psi(ubar))^2
    psi(ubar) = s(ubar) + hamming(u, ubar) - s(u)

where ``s`` collects the score terms touching the piece's target columns.
The objective is differentiable and minimized with L-BFGS.  The hinge
(Crammer-Singer) variant uses a single loss-augmented rival per piece and
is minimized by stochastic subgradient descent.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .model import MrfParams, ParamLayout
from .optim import OptimizerConfig, minimize, subgradient_descent
from .table import CategoricalTable, MISSING, mode_fill

log = logging.getLogger(__name__)

PIECE_TYPES = ("single", "pair", "both")
DEFAULT_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class PieceExample:
    """One training piece.

    ``context`` is the full completed row; its entries at ``targets`` hold the
    gold labels ``gold``.
    """

    row: int
    targets: tuple[int, ...]
    gold: tuple[int, ...]
    context: np.ndarray = field(compare=False, repr=False)


@dataclass
class TrainConfig:
    lam: float = 1.0
    piece_type: str = "single"
    formulation: str = "wwfp"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    edges: Sequence[tuple[int, int]] | None = None
    warm_start: bool = False
    csfp_epochs: int = 20
    csfp_step: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.piece_type not in PIECE_TYPES:
            raise ValueError(f"piece_type must be one of {PIECE_TYPES}")
        if self.formulation not in ("wwfp", "csfp"):
            raise ValueError("formulation must be 'wwfp' or 'csfp'")


def _piece_target_sets(observed_row: np.ndarray, piece_type: str):
    cols = np.flatnonzero(observed_row).tolist()
    if piece_type in ("single", "both"):
        for j in cols:
            yield (j,)
    if piece_type in ("pair", "both"):
        yield from itertools.combinations(cols, 2)


def build_pieces(table: CategoricalTable, observed_mask, piece_type: str = "single"):
    """List the training pieces of a completed table.

    Only columns flagged in ``observed_mask`` (the originally observed cells)
    become targets; imputed cells only ever appear as context.
    """
    if table.n_missing:
        raise ValueError("build_pieces expects a completed table")
    if piece_type not in PIECE_TYPES:
        raise ValueError(f"piece_type must be one of {PIECE_TYPES}")
    observed_mask = np.asarray(observed_mask, dtype=bool)
    pieces = []
    for i in range(table.n_rows):
        ctx = table.cells[i]
        for u in _piece_target_sets(observed_mask[i], piece_type):
            pieces.append(PieceExample(i, u, tuple(int(ctx[j]) for j in u), ctx))
    return pieces


@dataclass
class PieceBatch:
    """All pieces sharing one target set, stacked for vectorized scoring."""

    targets: tuple[int, ...]
    contexts: np.ndarray  # (m, K) completed rows


def batch_pieces(pieces) -> list[PieceBatch]:
    """Group pieces by target set (sorted), preserving order within a group."""
    groups: dict[tuple[int, ...], list[np.ndarray]] = {}
    for p in pieces:
        ctx = np.asarray(p.context, dtype=np.int64).copy()
        ctx[list(p.targets)] = p.gold
        u = tuple(sorted(int(v) for v in p.targets))
        groups.setdefault(u, []).append(ctx)
    return [PieceBatch(u, np.array(groups[u], dtype=np.int64))
            for u in sorted(groups, key=lambda t: (len(t), t))]


def batches_from_table(cells: np.ndarray, observed_mask, piece_type: str) -> list[PieceBatch]:
    """Vectorized equivalent of ``batch_pieces(build_pieces(...))``."""
    cells = np.asarray(cells, dtype=np.int64)
    observed_mask = np.asarray(observed_mask, dtype=bool)
    K = cells.shape[1]
    out = []
    if piece_type in ("single", "both"):
        for j in range(K):
            rows = observed_mask[:, j]
            if rows.any():
                out.append(PieceBatch((j,), cells[rows]))
    if piece_type in ("pair", "both"):
        for j, k in itertools.combinations(range(K), 2):
            rows = observed_mask[:, j] & observed_mask[:, k]
            if rows.any():
                out.append(PieceBatch((j, k), cells[rows]))
    return out


def _onehot(values: np.ndarray, card: int) -> np.ndarray:
    out = np.zeros((len(values), card))
    out[np.arange(len(values)), values] = 1.0
    return out


class _Block:
    """Gather map for the edge tables that connect column ``j`` to ``others``.

    ``theta[idx]`` is a ``(sum_k c_k, c_j)`` matrix whose rows are indexed by
    the stacked one-hot encoding of the ``others`` columns.
    """

    def __init__(self, layout: ParamLayout, j: int, others: list[int]):
        idx = []
        for k in others:
            ck, cj = layout.cards[k], layout.cards[j]
            a = np.arange(cj)[None, :]
            b = np.arange(ck)[:, None]
            if j < k:
                flat = layout.edge_offsets[(j, k)] + a * ck + b
            else:
                flat = layout.edge_offsets[(k, j)] + b * cj + a
            idx.append(flat)
        cj = layout.cards[j]
        self.idx = np.vstack(idx) if idx else np.zeros((0, cj), dtype=np.int64)
        self.others = others


class _CompiledBatch:
    def __init__(self, layout: ParamLayout, batch: PieceBatch):
        # identical contexts contribute identical terms; keep one copy with a weight
        ctx, counts = np.unique(batch.contexts, axis=0, return_counts=True)
        self.w = counts.astype(float)
        self.targets = batch.targets
        self.m = len(ctx)
        self.gold = [ctx[:, j] for j in batch.targets]
        self.blocks = []
        self.features = []
        for j in batch.targets:
            others = [k for k in layout.neighbors(j) if k not in batch.targets]
            blk = _Block(layout, j, others)
            self.blocks.append(blk)
            if others:
                X = np.hstack([_onehot(ctx[:, k], layout.cards[k]) for k in others])
            else:
                X = np.zeros((self.m, 0))
            self.features.append(X)
        if len(batch.targets) == 2:
            j, k = batch.targets
            self.pair_edge = layout.edge_offsets.get((j, k))


class WwfpObjective:
    """Squared-hinge piecewise objective with analytic gradient.

    Parameters
    ----------
    layout : ParamLayout
    pieces : list of PieceExample or PieceBatch
    lam : float
        Weight on the loss sum (the objective uses ``lam / 2``).
    """

    def __init__(self, layout: ParamLayout, pieces, lam: float):
        self.layout = layout
        self.lam = float(lam)
        pieces = list(pieces)
        if pieces and not isinstance(pieces[0], PieceBatch):
            pieces = batch_pieces(pieces)
        self.batches = [_CompiledBatch(layout, b) for b in pieces if len(b.contexts)]

    def _scores(self, theta, cb, t):
        j = cb.targets[t]
        blk = cb.blocks[t]
        S = np.broadcast_to(self.layout.node(theta, j), (cb.m, self.layout.cards[j]))
        if blk.idx.size:
            S = S + cb.features[t] @ theta[blk.idx]
        return np.array(S)

    def _backprop(self, grad, cb, t, dS):
        j = cb.targets[t]
        blk = cb.blocks[t]
        o = self.layout.node_offsets[j]
        grad[o:o + self.layout.cards[j]] += dS.sum(axis=0)
        if blk.idx.size:
            grad[blk.idx] += cb.features[t].T @ dS

    def loss_terms(self, theta) -> float:
        return self(theta)[0] - 0.5 * float(theta @ theta)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.layout.dim,):
            raise ValueError(
                f"parameter vector has shape {theta.shape}, expected ({self.layout.dim},)")
        lam = self.lam
        value = 0.5 * float(theta @ theta)
        grad = theta.copy()
        for cb in self.batches:
            rows = np.arange(cb.m)
            if len(cb.targets) == 1:
                S = self._scores(theta, cb, 0)
                g = cb.gold[0]
                psi = S - S[rows, g][:, None] + 1.0
                psi[rows, g] = 0.0
                h = np.maximum(psi, 0.0)
                value += 0.5 * lam * float(cb.w @ np.sum(h * h, axis=1))
                dS = (lam * cb.w)[:, None] * h
                dS[rows, g] -= dS.sum(axis=1)
                self._backprop(grad, cb, 0, dS)
            else:
                j, k = cb.targets
                cj, ck = self.layout.cards[j], self.layout.cards[k]
                Sj = self._scores(theta, cb, 0)
                Sk = self._scores(theta, cb, 1)
                T = Sj[:, :, None] + Sk[:, None, :]
                if cb.pair_edge is not None:
                    T += theta[cb.pair_edge:cb.pair_edge + cj * ck].reshape(cj, ck)
                gj, gk = cb.gold
                delta = ((np.arange(cj)[None, :] != gj[:, None])[:, :, None].astype(float)
                         + (np.arange(ck)[None, :] != gk[:, None])[:, None, :])
                psi = T - T[rows, gj, gk][:, None, None] + delta
                h = np.maximum(psi, 0.0)
                value += 0.5 * lam * float(cb.w @ np.sum(h * h, axis=(1, 2)))
                dT = (lam * cb.w)[:, None, None] * h
                dT[rows, gj, gk] -= dT.sum(axis=(1, 2))
                self._backprop(grad, cb, 0, dT.sum(axis=2))
                self._backprop(grad, cb, 1, dT.sum(axis=1))
                if cb.pair_edge is not None:
                    grad[cb.pair_edge:cb.pair_edge + cj * ck] += dT.sum(axis=0).ravel()
        return value, grad


def wwfp_value_grad(theta, pieces, lam: float, layout: ParamLayout):
    """Objective value and gradient for the squared-hinge piecewise formulation."""
    return WwfpObjective(layout, pieces, lam)(theta)


def _piece_features(layout: ParamLayout, context, targets, labels) -> dict[int, float]:
    """Sparse indicator features of the score terms that touch ``targets``."""
    y = np.array(context, dtype=np.int64)
    y[list(targets)] = labels
    feats: dict[int, float] = {}
    inside = set(targets)
    for j in targets:
        i = layout.node_index(j, y[j])
        feats[i] = feats.get(i, 0.0) + 1.0
    for j, k in layout.edges:
        if j in inside or k in inside:
            i = layout.edge_index(j, k, y[j], y[k])
            feats[i] = feats.get(i, 0.0) + 1.0
    return feats


def _piece_score(theta, feats: dict[int, float]) -> float:
    return sum(theta[i] * v for i, v in feats.items())


def loss_augmented_argmax(theta, piece: PieceExample, layout: ParamLayout):
    """Best rival by score plus Hamming error; ties go to the lexicographically
    smallest candidate."""
    best, best_val = None, -np.inf
    for cand in itertools.product(*(range(layout.cards[j]) for j in piece.targets)):
        val = _piece_score(theta, _piece_features(layout, piece.context, piece.targets, cand))
        val += sum(a != b for a, b in zip(cand, piece.gold))
        if val > best_val:
            best, best_val = cand, val
    return best, best_val


def csfp_subgradient(theta, piece: PieceExample, lam: float, layout: ParamLayout) -> np.ndarray:
    """Subgradient of ``lam * max(0, psi(u_hat))`` for one piece."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout.dim,):
        raise ValueError(
            f"parameter vector has shape {theta.shape}, expected ({layout.dim},)")
    g = np.zeros(layout.dim)
    u_hat, val = loss_augmented_argmax(theta, piece, layout)
    gold_feats = _piece_features(layout, piece.context, piece.targets, piece.gold)
    if val - _piece_score(theta, gold_feats) <= 0:
        return g
    for i, v in _piece_features(layout, piece.context, piece.targets, u_hat).items():
        g[i] += lam * v
    for i, v in gold_feats.items():
        g[i] -= lam * v
    return g


def csfp_objective(theta, pieces, lam: float, layout: ParamLayout) -> float:
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    for p in pieces:
        _, val = loss_augmented_argmax(theta, p, layout)
        gold = _piece_score(theta, _piece_features(layout, p.context, p.targets, p.gold))
        total += max(0.0, val - gold)
    return 0.5 * float(theta @ theta) + lam * total


def train(table: CategoricalTable, observed_mask, cfg: TrainConfig | None = None,
          init: MrfParams | None = None) -> MrfParams:
    """Fit MRF parameters on a completed table.

    The returned params carry the final objective value in ``.objective``.
    """
    cfg = cfg or TrainConfig()
    if table.n_missing:
        raise ValueError("train expects a completed table")
    layout = ParamLayout.build(table.cardinalities, cfg.edges)
    observed_mask = np.asarray(observed_mask, dtype=bool)
    if cfg.formulation == "wwfp":
        batches = batches_from_table(table.cells, observed_mask, cfg.piece_type)
        obj = WwfpObjective(layout, batches, cfg.lam)
        x0 = np.zeros(layout.dim)
        if cfg.warm_start and init is not None and init.dim == layout.dim:
            x0 = init.flatten()
        res = minimize(obj, x0, cfg.optimizer)
        log.debug("wwfp: %d iterations, status %s, value %.6g",
                  res.iterations, res.status, res.value)
        params = MrfParams(table.domains, res.x, layout.edges)
        params.objective = res.value
        return params

    pieces = build_pieces(table, observed_mask, cfg.piece_type)
    n = len(pieces)
    lam = cfg.lam

    def oracle(x, i):
        return csfp_subgradient(x, pieces[i], lam, layout)

    # mean-normalized: l2/2 ||x||^2 + mean_i lam*hinge_i is the objective divided by n
    step0 = cfg.csfp_step
    x = subgradient_descent(
        oracle, np.zeros(layout.dim), n, cfg.csfp_epochs,
        lambda t: step0 / (1.0 + t / max(n, 1)), l2=1.0 / max(n, 1), seed=cfg.seed)
    params = MrfParams(table.domains, x, layout.edges)
    params.objective = csfp_objective(x, pieces, lam, layout)
    return params


def conditional_scores(params: MrfParams, cells: np.ndarray, j: int) -> np.ndarray:
    """Scores of every label of column ``j`` given the rest of each row."""
    layout = params.layout
    S = np.tile(params.node(j), (len(cells), 1))
    for k in layout.neighbors(j):
        S += params.edge(j, k)[:, cells[:, k]].T
    return S


def predict_cells(params: MrfParams, cells: np.ndarray, targets) -> np.ndarray:
    """Single-variable conditional argmax for each ``(row, col)`` in ``targets``."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1, 2)
    out = np.empty(len(targets), dtype=np.int64)
    for j in np.unique(targets[:, 1]):
        sel = np.flatnonzero(targets[:, 1] == j)
        S = conditional_scores(params, cells[targets[sel, 0]], int(j))
        out[sel] = np.argmax(S, axis=1)
    return out


def holdout_mask(masked: CategoricalTable, fraction: float = 0.2, seed: int = 0):
    """Re-mask a fraction of each column's observed cells as pseudo-missing.

    At least one observed cell per column is always kept.
    """
    rng = np.random.default_rng(seed)
    cells = masked.cells.copy()
    held = []
    for j in range(masked.n_cols):
        obs = np.flatnonzero(cells[:, j] != MISSING)
        k = min(int(np.floor(fraction * len(obs))), len(obs) - 1)
        if k > 0:
            rows = np.sort(rng.choice(obs, size=k, replace=False))
            cells[rows, j] = MISSING
            held.extend((int(i), j) for i in rows)
    return masked.with_cells(cells), np.array(sorted(held), dtype=np.int64).reshape(-1, 2)


class MrfLearner:
    """MRF trainer/predictor pair used by :func:`cross_validate_lambda`."""

    def __init__(self, cfg: TrainConfig | None = None):
        self.cfg = cfg or TrainConfig()

    def fit(self, filled: CategoricalTable, observed, lam: float) -> MrfParams:
        return train(filled, observed, replace(self.cfg, lam=float(lam)))

    def predict(self, model: MrfParams, cells: np.ndarray, targets) -> np.ndarray:
        return predict_cells(model, cells, targets)


def cross_validate_lambda(masked: CategoricalTable, lambda_grid=DEFAULT_LAMBDA_GRID,
                          protocol: str = "holdout", truth: CategoricalTable | None = None,
                          cfg: TrainConfig | None = None, seed: int = 0,
                          learner=None, return_losses: bool = False):
    """Choose the regularization constant with the smallest 0/1 prediction loss.

    ``"holdout"`` re-masks 20% of each column's observed cells, mode-fills,
    trains for each lambda and predicts the held-out cells from the rest of
    their rows.  ``"truth-oracle"`` trains on the mode-filled table and
    predicts every observed cell with the other columns taken from ``truth``,
    averaging the loss per column.  Ties go to the smaller lambda.

    Parameters
    ----------
    learner : object, optional
        Provides ``fit(filled, observed_mask, lam) -> model`` and
        ``predict(model, cells, targets) -> labels``; the MRF by default.
    """
    grid = sorted(float(v) for v in lambda_grid)
    if not grid:
        raise ValueError("empty lambda grid")
    learner = learner or MrfLearner(cfg)
    losses: dict[float, float] = {}
    if len(grid) == 1:
        losses[grid[0]] = 0.0
    elif protocol == "holdout":
        pseudo, held = holdout_mask(masked, 0.2, seed)
        filled = mode_fill(pseudo)
        observed = ~pseudo.missing_mask
        gold = masked.cells[held[:, 0], held[:, 1]]
        for lam in grid:
            if len(held) == 0:
                losses[lam] = 0.0
                continue
            model = learner.fit(filled, observed, lam)
            pred = learner.predict(model, filled.cells, held)
            losses[lam] = float(np.mean(pred != gold))
    elif protocol == "truth-oracle":
        if truth is None:
            raise ValueError("the truth-oracle protocol needs the ground-truth table")
        if truth.shape != masked.shape or not truth.same_domains(masked):
            raise ValueError("truth table does not match the masked table")
        filled = mode_fill(masked)
        observed = ~masked.missing_mask
        targets = np.argwhere(observed)
        gold = masked.cells[targets[:, 0], targets[:, 1]]
        for lam in grid:
            model = learner.fit(filled, observed, lam)
            pred = learner.predict(model, truth.cells, targets)
            per_col = [np.mean(pred[targets[:, 1] == j] != gold[targets[:, 1] == j])
                       for j in range(masked.n_cols) if (targets[:, 1] == j).any()]
            losses[lam] = float(np.mean(per_col))
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    best = min(grid, key=lambda lam: (losses[lam], lam))
    log.debug("lambda losses: %s -> %g", losses, best)
    return (best, losses) if return_losses else best
