import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marginimpute.infer import (BatchSolver, DDConfig, RowProblem, StateSpaceTooLarge,
                                map_brute_force, map_dual_decomp, solve_row)
from marginimpute.model import MrfParams, score_row
from marginimpute.table import MISSING

from conftest import make_domains, random_params


def oracle_map(params, row):
    """Second enumerator: complete the row and rank by the full-row score."""
    row = np.asarray(row)
    miss = np.flatnonzero(row == MISSING)
    cards = params.layout.cards
    best, best_s = None, -np.inf
    for cand in itertools.product(*(range(cards[j]) for j in miss)):
        y = row.copy()
        y[miss] = cand
        s = score_row(params, y)
        if s > best_s + 1e-12:
            best, best_s = np.array(cand), s
    return best, best_s


def random_row(rng, cards, n_missing):
    row = np.array([rng.integers(0, c) for c in cards])
    row[rng.choice(len(cards), size=n_missing, replace=False)] = MISSING
    return row


def test_single_binary_cell_follows_net_preference():
    nodes = [np.array([0.0, 0.7]), np.zeros(2)]
    p = MrfParams.from_tables(make_domains([2, 2]), nodes, {(0, 1): np.zeros((2, 2))})
    x, s = map_brute_force(RowProblem(p, [MISSING, 0]))
    assert x.tolist() == [1] and s == pytest.approx(0.7)


def test_zero_params_lexicographic_tie():
    p = MrfParams(make_domains([2, 3, 2]))
    x, _ = map_brute_force(RowProblem(p, [MISSING] * 3))
    assert x.tolist() == [0, 0, 0]


def test_cap_exceeded():
    p = MrfParams(make_domains([3] * 5))
    with pytest.raises(StateSpaceTooLarge):
        map_brute_force(RowProblem(p, [MISSING] * 5), cap=100)


def test_offsets_shape_checked():
    p = MrfParams(make_domains([2, 2]))
    with pytest.raises(ValueError):
        RowProblem(p, [MISSING, 0], {0: np.zeros(3)})


def test_brute_force_with_offsets(rng):
    p = random_params(rng, [3, 2, 3])
    row = [MISSING, 1, MISSING]
    uo = {0: rng.normal(size=3), 2: rng.normal(size=3)}
    eo = {(0, 2): rng.normal(size=(3, 3))}
    prob = RowProblem(p, row, uo, eo)
    x, s = map_brute_force(prob)
    best = max(itertools.product(range(3), range(3)), key=lambda c: prob.score(c))
    assert tuple(x) == best and s == pytest.approx(prob.score(best))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_brute_force_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    cards = [3] * 5
    p = random_params(rng, cards)
    row = random_row(rng, cards, 3)
    x, _ = map_brute_force(RowProblem(p, row))
    ox, _ = oracle_map(p, row)
    assert np.array_equal(x, ox)


def test_dd_single_missing_cell(rng):
    p = random_params(rng, [4, 2, 2])
    prob = RowProblem(p, [MISSING, 1, 0], {0: rng.normal(size=4)})
    res = map_dual_decomp(prob)
    assert res.assignment.tolist() == [int(np.argmax(prob.unaries()[0]))]
    assert res.iterations == 1 and res.gap == pytest.approx(0.0, abs=1e-12)


def test_dd_duplicate_attractive_model():
    # strong agreement potentials between all columns: missing cells copy the
    # majority label of the observed ones
    K = 6
    agree = 2.0 * np.eye(2)
    p = MrfParams.from_tables(make_domains([2] * K), [np.zeros(2)] * K,
                              {e: agree for e in itertools.combinations(range(K), 2)})
    row = np.array([1, 1, 0, MISSING, MISSING, MISSING])
    res = map_dual_decomp(RowProblem(p, row))
    assert res.assignment.tolist() == [1, 1, 1]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_dd_bounds_and_invariances(seed):
    rng = np.random.default_rng(seed)
    cards = [2] * 7
    p = random_params(rng, cards)
    row = random_row(rng, cards, 5)
    prob = RowProblem(p, row)
    res = map_dual_decomp(prob)
    _, opt = map_brute_force(prob)
    assert res.primal <= opt + 1e-9
    assert res.dual >= opt - 1e-9
    assert res.primal <= res.dual + 1e-9
    assert prob.score(res.assignment) == pytest.approx(res.primal, abs=1e-9)
    # constant shift of one node's potential leaves the assignment unchanged
    theta = p.flatten()
    j = int(np.flatnonzero(row == MISSING)[0])
    o = p.layout.node_offsets[j]
    theta[o:o + 2] += 3.0
    shifted = map_dual_decomp(RowProblem(p.with_theta(theta), row))
    assert np.array_equal(shifted.assignment, res.assignment)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_dd_without_edges_is_independent_argmax(seed):
    rng = np.random.default_rng(seed)
    cards = [3, 2, 4, 3]
    p = random_params(rng, cards, edges=[])
    row = random_row(rng, cards, 3)
    prob = RowProblem(p, row)
    res = map_dual_decomp(prob)
    assert res.assignment.tolist() == [int(np.argmax(u)) for u in prob.unaries()]


def test_dd_rows_against_brute_force(rng):
    start = time.perf_counter()
    exact = 0
    for _ in range(200):
        cards = [2] * 8
        p = random_params(rng, cards)
        row = random_row(rng, cards, int(rng.integers(1, 7)))
        prob = RowProblem(p, row)
        res = map_dual_decomp(prob)
        _, opt = map_brute_force(prob)
        exact += abs(res.primal - opt) <= 1e-9
        assert abs(res.primal - opt) <= 0.02 * abs(opt) + 1e-9
        assert res.dual >= opt - 1e-9
    assert exact >= 180
    assert time.perf_counter() - start < 120


def test_solve_row_falls_back_to_dd(rng):
    p = random_params(rng, [3] * 6)
    row = np.array([MISSING] * 6)
    out = solve_row(RowProblem(p, row), cap=10, dd=DDConfig(max_iterations=50))
    assert (out >= 0).all()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_batch_solver_matches_row_solver(seed):
    rng = np.random.default_rng(seed)
    cards = [2, 3, 2, 3, 2]
    p = random_params(rng, cards)
    cells = np.array([random_row(rng, cards, int(rng.integers(0, 4))) for _ in range(25)])
    uo = {j: rng.normal(size=c) for j, c in enumerate(cards)}
    eo = {(0, 1): rng.normal(size=(2, 3))}
    out = BatchSolver(p, cells).solve(uo, eo)
    for i, row in enumerate(cells):
        prob = RowProblem(p, row, {j: uo[j] for j in np.flatnonzero(row == MISSING)}, eo)
        assert np.array_equal(out[i], solve_row(prob))
    obs = cells != MISSING
    assert np.array_equal(out[obs], cells[obs])


def test_batch_solver_uses_dd_above_cap(rng):
    cards = [3] * 6
    p = random_params(rng, cards)
    cells = np.full((3, 6), MISSING)
    out = BatchSolver(p, cells, cap=10, dd=DDConfig(max_iterations=100)).solve()
    for i in range(3):
        res = map_dual_decomp(RowProblem(p, cells[i]), DDConfig(max_iterations=100))
        assert np.array_equal(out[i], res.assignment)
