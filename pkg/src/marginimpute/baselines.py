"""Reference imputers: column mode and deterministic backfitting."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .optim import OptimizerConfig, minimize
from .table import CategoricalTable, mode_fill

log = logging.getLogger(__name__)


def one_hot_context(cells: np.ndarray, cards, skip: int) -> np.ndarray:
    """One-hot encoding of every column except ``skip``, plus a constant."""
    blocks = []
    n = len(cells)
    for k, c in enumerate(cards):
        if k == skip:
            continue
        X = np.zeros((n, c))
        X[np.arange(n), cells[:, k]] = 1.0
        blocks.append(X)
    blocks.append(np.ones((n, 1)))
    return np.hstack(blocks)


@dataclass
class OvrHinge:
    """One-vs-rest linear classifiers with squared hinge loss.

    Each class ``c`` minimizes ``||w_c||^2 / 2 + lam/2 * sum_i
    max(0, 1 - t_ic * w_c . x_i)^2`` with ``t_ic = +1`` for class ``c`` and
    ``-1`` otherwise.  The classes are fitted jointly since the problems
    are separable.
    """

    W: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, n_classes: int, lam: float,
            opt: OptimizerConfig | None = None) -> "OvrHinge":
        F = X.shape[1]
        # repeated (x, y) examples contribute identical terms; weight one copy
        XY, counts = np.unique(np.column_stack([X, y]), axis=0, return_counts=True)
        X, y = XY[:, :-1], XY[:, -1].astype(np.int64)
        wl = lam * counts.astype(float)[:, None]
        T = -np.ones((len(y), n_classes))
        T[np.arange(len(y)), y] = 1.0

        def oracle(w):
            W = w.reshape(F, n_classes)
            h = np.maximum(0.0, 1.0 - T * (X @ W))
            val = 0.5 * float(w @ w) + 0.5 * float(np.sum(wl * h * h))
            grad = W - X.T @ (wl * T * h)
            return val, grad.ravel()

        res = minimize(oracle, np.zeros(F * n_classes), opt)
        return cls(res.x.reshape(F, n_classes))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(X @ self.W, axis=1)


def _fit_column(cells, cards, j, rows, lam):
    """Classifier for column ``j`` from ``rows``, or the constant label if
    only one label is observed."""
    labels = np.unique(cells[rows, j])
    if len(labels) == 1:
        return int(labels[0])
    X = one_hot_context(cells[rows], cards, j)
    return OvrHinge.fit(X, cells[rows, j], cards[j], lam)


def _predict_column(model, cells, cards, j, rows):
    if isinstance(model, int):
        return np.full(len(rows), model, dtype=np.int64)
    return model.predict(one_hot_context(cells[rows], cards, j))


class BackfitLearner:
    """Per-column classifiers in the fit/predict form used for lambda
    selection."""

    def fit(self, filled: CategoricalTable, observed, lam: float):
        cards = filled.cardinalities
        models = [_fit_column(filled.cells, cards, j, np.flatnonzero(observed[:, j]), lam)
                  for j in range(filled.n_cols)]
        return cards, models

    def predict(self, fitted, cells, targets) -> np.ndarray:
        cards, models = fitted
        targets = np.asarray(targets, dtype=np.int64).reshape(-1, 2)
        out = np.empty(len(targets), dtype=np.int64)
        for j in np.unique(targets[:, 1]):
            sel = np.flatnonzero(targets[:, 1] == j)
            out[sel] = _predict_column(models[j], cells, cards, int(j), targets[sel, 0])
        return out


def backfit(masked: CategoricalTable, lam: float, max_sweeps: int = 25):
    """Deterministic chained-classifier imputation.

    Starts from the column modes and sweeps the columns in order; each
    column's classifier is trained on the rows where it is observed, with
    the current completed values as inputs, and its argmax overwrites the
    column's missing cells.  Stops after a sweep that changes nothing.

    Returns
    -------
    table : CategoricalTable
    sweeps : int
    """
    cells = mode_fill(masked).cells.copy()
    miss = masked.missing_mask
    cards = masked.cardinalities
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        changed = 0
        for j in range(masked.n_cols):
            rows_m = np.flatnonzero(miss[:, j])
            if len(rows_m) == 0:
                continue
            model = _fit_column(cells, cards, j, np.flatnonzero(~miss[:, j]), lam)
            pred = _predict_column(model, cells, cards, j, rows_m)
            changed += int(np.count_nonzero(pred != cells[rows_m, j]))
            cells[rows_m, j] = pred
        log.debug("backfit sweep %d: %d changes", sweeps, changed)
        if changed == 0:
            break
    return masked.with_cells(cells), sweeps
