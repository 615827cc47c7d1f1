import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marginimpute.baselines import BackfitLearner, OvrHinge, backfit, one_hot_context
from marginimpute.pipeline import (ExperimentResult, PipelineError, RunConfig, SplitRecord,
                                   normalize_method, run_algorithm1, run_experiment, run_method,
                                   write_summary_tsv)
from marginimpute.table import (MISSING, CategoricalTable, MissingSpec, hamming_loss,
                                inject_mcar, make_splits)

from conftest import make_domains, random_table


def duplicate_table(n=80, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 3, size=n)
    b = rng.integers(0, 2, size=n)
    return CategoricalTable(make_domains([3, 3, 2, 2]), np.column_stack([a, a, b, b]))


def duplicate_masked(n=80, seed=0):
    """Duplicate columns where a cell and its copy are never both missing."""
    truth = duplicate_table(n, seed)
    rng = np.random.default_rng(seed + 1)
    cells = truth.cells.copy()
    for i in range(n):
        if rng.random() < 0.3:
            cells[i, rng.integers(0, 2)] = MISSING
        if rng.random() < 0.3:
            cells[i, 2 + rng.integers(0, 2)] = MISSING
    masked = truth.with_cells(cells)
    return truth, masked


def test_one_hot_context():
    X = one_hot_context(np.array([[0, 1, 2]]), [2, 2, 3], skip=1)
    assert X.tolist() == [[1, 0, 0, 0, 1, 1]]


def test_ovr_separable():
    X = np.array([[1, 0, 1], [0, 1, 1]], dtype=float)
    model = OvrHinge.fit(X, np.array([0, 1]), 2, 10.0)
    assert model.predict(X).tolist() == [0, 1]


def test_backfit_recovers_duplicates():
    truth, masked = duplicate_masked()
    out, _ = backfit(masked, 10.0)
    mask = {(int(i), int(j)) for i, j in np.argwhere(masked.missing_mask)}
    assert hamming_loss(out, truth, mask) == 0.0


def test_backfit_no_missing_identity():
    t = duplicate_table()
    out, sweeps = backfit(t, 1.0)
    assert out == t and sweeps == 1


def test_backfit_single_label_column():
    t = CategoricalTable(make_domains([3, 2]), [[1, 0], [1, 1], [MISSING, 0], [1, 1]])
    out, _ = backfit(t, 1.0)
    assert out.cells[2, 0] == 1


def test_backfit_learner_protocol():
    truth, masked = duplicate_masked()
    from marginimpute.table import mode_fill
    filled = mode_fill(masked)
    fitted = BackfitLearner().fit(filled, ~masked.missing_mask, 10.0)
    obs = np.argwhere(~masked.missing_mask)[:20]
    assert np.array_equal(BackfitLearner().predict(fitted, truth.cells, obs),
                          truth.cells[obs[:, 0], obs[:, 1]])


def test_normalize_method():
    assert normalize_method("wwfp-wc") == "WWFP-WC"
    with pytest.raises(ValueError):
        normalize_method("knn")


def test_algorithm1_no_missing():
    t = duplicate_table()
    run = run_algorithm1(t, RunConfig(method="WWFP-WO", lam=1.0))
    assert run.iterations == 1 and run.changes == [0] and run.exit_reason == "no_change"


@pytest.mark.parametrize("method", ["MO", "BF", "WWFP-WO", "WWFP-WC"])
def test_methods_keep_observed_and_fill_all(method):
    truth = random_table(np.random.default_rng(4), 60, [2, 3, 2, 3])
    masked = inject_mcar(truth, MissingSpec.uniform(0.3, 4, 1))
    run = run_method(masked, RunConfig(method=method, lam=1.0))
    obs = ~masked.missing_mask
    assert run.table.n_missing == 0
    assert np.array_equal(run.table.cells[obs], masked.cells[obs])
    n = run.iterations
    assert len(run.objectives) == len(run.violations) == len(run.impute_seconds) == n


@pytest.mark.parametrize("method", ["WWFP-WO", "WWFP-WC"])
def test_algorithm1_traces(method):
    truth = random_table(np.random.default_rng(5), 60, [2, 3, 2])
    masked = inject_mcar(truth, MissingSpec.uniform(0.3, 3, 2))
    run = run_algorithm1(masked, RunConfig(method=method, lam=1.0))
    assert 1 <= run.iterations <= 25
    assert len(run.train_seconds) == run.iterations
    assert all(np.isfinite(o) and o > 0 for o in run.objectives)
    if run.exit_reason == "no_change":
        assert run.changes[-1] == 0
    again = run_algorithm1(masked, RunConfig(method=method, lam=1.0))
    assert again.table == run.table and again.objectives == run.objectives
    assert again.trace(timing=False) == run.trace(timing=False)


def test_algorithm1_recovers_duplicates():
    truth, masked = duplicate_masked()
    run = run_algorithm1(masked, RunConfig(method="WWFP-WO", lam=100.0))
    mask = {(int(i), int(j)) for i, j in np.argwhere(masked.missing_mask)}
    assert hamming_loss(run.table, truth, mask) == 0.0


def test_algorithm1_rejects_other_methods():
    with pytest.raises(ValueError):
        run_algorithm1(duplicate_table(), RunConfig(method="MO"))


def test_phase_errors_carry_context():
    # a fully missing column cannot be mode-filled
    t = CategoricalTable(make_domains([2, 2]), [[0, MISSING], [1, MISSING]])
    with pytest.raises((PipelineError, ValueError)):
        run_algorithm1(t, RunConfig(method="WWFP-WO", lam=1.0))


def test_experiment_single_split_matches_manual():
    truth = random_table(np.random.default_rng(6), 50, [2, 3, 2])
    base = RunConfig(lam=1.0)
    res = run_experiment(truth, [0.2], 1, ["MO", "WWFP-WO"], seed=3, base=base)
    masked, mask = make_splits(truth, MissingSpec.uniform(0.2, 3, 3), 1)[0]
    for rec in res.records:
        from dataclasses import replace
        run = run_method(masked, replace(base, method=rec.method, seed=4))
        assert rec.loss == hamming_loss(run.table, truth, mask)


def test_summary_schema_and_std():
    recs = [SplitRecord("d", f, s, m, 0.1 * s, 1.0)
            for f in (0.1, 0.3) for m in ("MO", "BF") for s in (1, 2)]
    res = ExperimentResult(recs)
    rows = res.summary()
    assert len(rows) == 4
    assert rows[0]["mean_loss_pct"] == pytest.approx(15.0)
    assert rows[0]["std_loss_pct"] == pytest.approx(np.std([10, 20], ddof=1))
    buf = io.StringIO()
    write_summary_tsv(res, buf, timing=False)
    lines = buf.getvalue().splitlines()
    assert lines[0].split("\t") == ["dataset", "fraction", "method", "mean_loss_pct",
                                    "std_loss_pct", "mean_seconds"]
    assert lines[1] == "d\t0.1\tMO\t15.0000\t7.0711\tNA"


def test_experiment_records_failures():
    truth = random_table(np.random.default_rng(7), 30, [2, 2])
    res = run_experiment(truth, [0.2], 1, ["MO"], base=RunConfig(lam=1.0))
    assert res.records[0].error == "" and res.records[0].loss is not None


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mo_and_bf_preserve_observed(seed):
    rng = np.random.default_rng(seed)
    truth = random_table(rng, 30, [2, 3, 2])
    masked = inject_mcar(truth, MissingSpec.uniform(0.3, 3, seed))
    for m in ("MO", "BF"):
        out = run_method(masked, RunConfig(method=m, lam=1.0)).table
        obs = ~masked.missing_mask
        assert np.array_equal(out.cells[obs], masked.cells[obs])
