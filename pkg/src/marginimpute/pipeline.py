"""Alternating learn/impute driver, method dispatch and the benchmark harness.

The driver starts from the column modes and alternates two phases until
the training objective stops improving or the imputed cells stop changing:
fit the MRF on the current completed table, then re-impute the missing
cells with it (independently per row, or jointly under count constraints).
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BackfitLearner, backfit
from .joint import JointConfig, build_constraints, impute_constrained, impute_independent
from .learn import DEFAULT_LAMBDA_GRID, TrainConfig, cross_validate_lambda, train
from .table import CategoricalTable, MissingSpec, hamming_loss, make_splits, mode_fill

log = logging.getLogger(__name__)

METHODS = ("MO", "BF", "WWFP-WO", "WWFP-WC")


class PipelineError(RuntimeError):
    """A phase of a run failed; the message names the phase and iteration."""


def normalize_method(name: str) -> str:
    m = name.strip().upper()
    if m not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return m


@dataclass
class RunConfig:
    method: str = "WWFP-WC"
    tol: float = 1e-4
    max_iterations: int = 25
    train: TrainConfig = field(default_factory=TrainConfig)
    joint: JointConfig = field(default_factory=JointConfig)
    constraint_kinds: tuple[str, ...] = ("label", "pairwise")
    constraint_pairs: object = None
    lam: float | None = None
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    cv_protocol: str = "holdout"
    bf_max_sweeps: int = 25
    warm_duals: bool = False
    seed: int = 0

    def __post_init__(self):
        self.method = normalize_method(self.method)
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class ImputationRun:
    """Result of one imputation run with its per-iteration traces."""

    table: CategoricalTable
    method: str
    lam: float | None
    objectives: list[float] = field(default_factory=list)
    changes: list[int] = field(default_factory=list)
    violations: list[float | None] = field(default_factory=list)
    train_seconds: list[float] = field(default_factory=list)
    impute_seconds: list[float] = field(default_factory=list)
    status: str = "ok"
    exit_reason: str = ""
    cv_seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.changes)

    def trace(self, timing: bool = True) -> dict:
        def t(v):
            return v if timing else None
        return {
            "method": self.method,
            "lambda": self.lam,
            "iterations": self.iterations,
            "status": self.status,
            "exit_reason": self.exit_reason,
            "objectives": [repr(v) for v in self.objectives],
            "changes": self.changes,
            "violations": self.violations,
            "seconds": {
                "cv": t(self.cv_seconds),
                "train": [t(v) for v in self.train_seconds],
                "impute": [t(v) for v in self.impute_seconds],
            },
        }


def select_lambda(masked: CategoricalTable, cfg: RunConfig, truth=None,
                  learner=None) -> float:
    if cfg.lam is not None:
        return float(cfg.lam)
    return cross_validate_lambda(masked, cfg.lambda_grid, cfg.cv_protocol, truth,
                                 cfg.train, seed=cfg.seed, learner=learner)


def _phase(name: str, it: int, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:  # noqa: BLE001 - re-raised with phase context
        raise PipelineError(f"{name} phase failed at iteration {it}: {e}") from e


def run_algorithm1(masked: CategoricalTable, cfg: RunConfig, truth=None) -> ImputationRun:
    """Alternate training and imputation starting from the column modes.

    Exit reasons: ``"tolerance"`` when the relative improvement (decrease)
    of the training objective over the previous iteration is below
    ``cfg.tol``, including when the objective went up; ``"no_change"`` when
    no imputed cell changes; ``"max_iter"`` at the iteration cap.
    """
    if cfg.method not in ("WWFP-WO", "WWFP-WC"):
        raise ValueError("run_algorithm1 handles WWFP-WO and WWFP-WC")
    t0 = time.perf_counter()
    lam = _phase("cross-validation", 0, select_lambda, masked, cfg, truth)
    run = ImputationRun(masked, cfg.method, lam, cv_seconds=time.perf_counter() - t0)
    tcfg = replace(cfg.train, lam=lam)
    observed = ~masked.missing_mask
    current = mode_fill(masked)
    constraints = []
    if cfg.method == "WWFP-WC":
        constraints = _phase("constraint", 0, build_constraints, masked,
                             cfg.constraint_kinds, cfg.constraint_pairs)
    params = None
    prev = None
    run.exit_reason = "max_iter"
    for it in range(1, cfg.max_iterations + 1):
        t0 = time.perf_counter()
        params = _phase("train", it, train, current, observed, tcfg, params)
        t1 = time.perf_counter()
        if cfg.method == "WWFP-WO":
            new = _phase("impute", it, impute_independent, params, masked,
                         cfg.joint.cap, cfg.joint.dd)
            viol = None
        else:
            if not cfg.warm_duals:
                for c in constraints:
                    c.duals = np.zeros_like(c.target)
            res = _phase("impute", it, impute_constrained, params, masked, constraints,
                         cfg.joint)
            new = res.table
            viol = res.max_violations[res.best_iteration - 1]
        t2 = time.perf_counter()
        changes = int(np.count_nonzero(new.cells != current.cells))
        obj = float(params.objective)
        run.objectives.append(obj)
        run.changes.append(changes)
        run.violations.append(viol)
        run.train_seconds.append(t1 - t0)
        run.impute_seconds.append(t2 - t1)
        current = new
        log.info("%s iteration %d: objective %.6g, %d changes", cfg.method, it, obj, changes)
        if changes == 0:
            run.exit_reason = "no_change"
            break
        if prev is not None and (prev - obj) < cfg.tol * max(abs(prev), 1e-300):
            run.exit_reason = "tolerance"
            break
        prev = obj
    run.table = current
    return run


def run_method(masked: CategoricalTable, cfg: RunConfig, truth=None) -> ImputationRun:
    """Impute ``masked`` with ``cfg.method``."""
    if cfg.method == "MO":
        t0 = time.perf_counter()
        out = mode_fill(masked)
        run = ImputationRun(out, "MO", None, exit_reason="closed_form")
        run.impute_seconds.append(time.perf_counter() - t0)
        run.changes.append(masked.n_missing)
        run.objectives.append(float("nan"))
        run.violations.append(None)
        return run
    if cfg.method == "BF":
        t0 = time.perf_counter()
        lam = _phase("cross-validation", 0, select_lambda, masked, cfg, truth, BackfitLearner())
        t1 = time.perf_counter()
        out, sweeps = _phase("backfit", 1, backfit, masked, lam, cfg.bf_max_sweeps)
        run = ImputationRun(out, "BF", lam, cv_seconds=t1 - t0,
                            exit_reason="no_change" if sweeps < cfg.bf_max_sweeps else "max_iter")
        run.impute_seconds.append(time.perf_counter() - t1)
        run.changes.append(sweeps)
        run.objectives.append(float("nan"))
        run.violations.append(None)
        return run
    return run_algorithm1(masked, cfg, truth)


@dataclass
class SplitRecord:
    dataset: str
    fraction: float
    split: int
    method: str
    loss: float | None
    seconds: float
    lam: float | None = None
    iterations: int = 0
    exit_reason: str = ""
    error: str = ""
    label_slack: float | None = None


@dataclass
class ExperimentResult:
    records: list[SplitRecord]

    def summary(self) -> list[dict]:
        """One row per (dataset, fraction, method): mean and sample std of the
        loss in percent, and mean wall-clock seconds."""
        keys = []
        for r in self.records:
            k = (r.dataset, r.fraction, r.method)
            if k not in keys:
                keys.append(k)
        rows = []
        for k in keys:
            recs = [r for r in self.records if (r.dataset, r.fraction, r.method) == k]
            losses = [100.0 * r.loss for r in recs if r.loss is not None]
            ok = len(losses) == len(recs) and losses
            mean = float(np.mean(losses)) if ok else None
            std = float(np.std(losses, ddof=1)) if ok and len(losses) > 1 else None
            rows.append({
                "dataset": k[0], "fraction": k[1], "method": k[2],
                "mean_loss_pct": mean, "std_loss_pct": std,
                "mean_seconds": float(np.mean([r.seconds for r in recs])),
                "errors": "; ".join(r.error for r in recs if r.error),
            })
        return rows


def _fmt(v, digits=4):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return f"{v:.{digits}f}"


def write_summary_tsv(result: ExperimentResult, dest, timing: bool = True) -> None:
    cols = ["dataset", "fraction", "method", "mean_loss_pct", "std_loss_pct", "mean_seconds"]
    lines = ["\t".join(cols)]
    for row in result.summary():
        lines.append("\t".join([
            row["dataset"], f"{row['fraction']:g}", row["method"],
            _fmt(row["mean_loss_pct"]), _fmt(row["std_loss_pct"]),
            _fmt(row["mean_seconds"], 3) if timing else "NA",
        ]))
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def run_experiment(truth: CategoricalTable, fractions=(0.1, 0.3, 0.5), n_splits: int = 6,
                   methods=METHODS, seed: int = 0, dataset: str = "data",
                   base: RunConfig | None = None, share_lambda: bool = True,
                   progress=None) -> ExperimentResult:
    """Benchmark imputation methods on MCAR splits of a complete table.

    Split ``s`` of fraction ``f`` masks with seed ``seed + s``.  The MRF
    lambda is chosen once per split and shared by WWFP-WO and WWFP-WC when
    ``share_lambda`` is set.  A failing method is recorded with its error
    and a missing loss; the experiment carries on.
    """
    if truth.n_missing:
        raise ValueError("run_experiment expects a complete ground-truth table")
    methods = [normalize_method(m) for m in methods]
    base = base or RunConfig()
    records = []
    for frac in fractions:
        spec = MissingSpec.uniform(frac, truth.n_cols, seed)
        for s, (masked, mask) in enumerate(make_splits(truth, spec, n_splits), start=1):
            shared_lam = None
            for method in methods:
                cfg = replace(base, method=method, seed=seed + s)
                if method in ("WWFP-WO", "WWFP-WC") and share_lambda and shared_lam is not None:
                    cfg = replace(cfg, lam=shared_lam)
                t0 = time.perf_counter()
                rec = SplitRecord(dataset, float(frac), s, method, None, 0.0)
                try:
                    run = run_method(masked, cfg,
                                     truth if cfg.cv_protocol == "truth-oracle" else None)
                    rec.loss = hamming_loss(run.table, truth, mask) if mask else 0.0
                    rec.lam = run.lam
                    rec.iterations = run.iterations
                    rec.exit_reason = run.exit_reason
                    if method == "WWFP-WC":
                        rec.label_slack = label_slack(masked, run.table, cfg.joint)
                    if method in ("WWFP-WO", "WWFP-WC") and shared_lam is None:
                        shared_lam = run.lam
                except Exception as e:  # noqa: BLE001 - recorded, run continues
                    log.exception("%s failed on %s split %d", method, dataset, s)
                    rec.error = f"{type(e).__name__}: {e}"
                rec.seconds = time.perf_counter() - t0
                records.append(rec)
                if progress is not None:
                    progress(rec)
    return ExperimentResult(records)


def label_slack(masked: CategoricalTable, completed: CategoricalTable,
                joint: JointConfig | None = None) -> float:
    """Largest label-count violation minus its tolerance, over columns.

    Non-positive means every column meets its label constraint.
    """
    joint = joint or JointConfig()
    cons = build_constraints(masked, ("label",))
    return max((c.violation(completed.cells) - joint.tolerance(c) for c in cons
                if not c.empty), default=0.0)


def save_trace(run: ImputationRun, path, timing: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(run.trace(timing), fh, indent=1)
        fh.write("\n")
