import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marginimpute.optim import (OptimizationError, OptimizerConfig, SmoothProblem,
                                gradient_check, minimize, subgradient_descent)


def quad(A, b):
    def f(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b
    return f


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_bowl():
    res = minimize(lambda x: (0.5 * x @ x, x), np.array([3.0, 4.0]))
    assert res.value <= 1e-10
    assert np.allclose(res.x, 0, atol=1e-5)


def test_shifted_bowl(rng):
    c = rng.normal(size=6)
    res = minimize(lambda x: (0.5 * (x - c) @ (x - c), x - c), np.zeros(6))
    assert np.allclose(res.x, c, atol=1e-6)


def test_rosenbrock():
    res = minimize(rosenbrock, np.array([-1.2, 1.0]),
                   OptimizerConfig(max_iterations=200, gtol=1e-10))
    assert res.iterations <= 200
    assert res.value <= 1e-8
    assert np.allclose(res.x, 1.0, atol=1e-4)


def test_non_finite_raises_with_point():
    with pytest.raises(OptimizationError) as e:
        minimize(lambda x: (float("nan"), x), np.ones(2))
    assert np.array_equal(e.value.point, np.ones(2))


def test_bad_line_search_constants():
    with pytest.raises(ValueError):
        OptimizerConfig(c1=0.5, c2=0.1)


def test_wrong_gradient_shape():
    with pytest.raises(ValueError):
        SmoothProblem(3, lambda x: (0.0, np.zeros(2)))(np.zeros(3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), dim=st.integers(1, 10))
def test_quadratic_optimum_within_d_plus_5(seed, dim):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eig = np.exp(rng.uniform(0, np.log(100), size=dim))
    A = Q @ np.diag(eig) @ Q.T
    b = rng.normal(size=dim)
    x_star = np.linalg.solve(A, b)
    res = minimize(quad(A, b), np.zeros(dim), OptimizerConfig(gtol=1e-9))
    assert res.iterations <= dim + 5
    assert np.allclose(res.x, x_star, atol=1e-6 * (1 + np.abs(x_star).max()))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_gradient_check_accepts_exact_and_flags_wrong(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=2)
    assert gradient_check(rosenbrock, x) <= 1e-5
    assert gradient_check(lambda z: (rosenbrock(z)[0], 1.1 * rosenbrock(z)[1]), x) > 1e-3


def test_subgradient_quadratic_near_optimum(rng):
    # f(x) = mean_i ||x - c_i||^2 / 2, optimum at the mean
    C = rng.normal(size=(20, 3))
    x = subgradient_descent(lambda x, i: x - C[i], np.zeros(3), 20, 100,
                            lambda t: 0.5 / (1 + t / 20))
    f = lambda z: 0.5 * np.mean(np.sum((z - C) ** 2, axis=1))  # noqa: E731
    assert f(x) <= 1.01 * f(C.mean(axis=0))


def test_subgradient_zero_oracle_stationary():
    x0 = np.array([1.0, -2.0])
    x = subgradient_descent(lambda x, i: np.zeros(2), x0, 5, 3, 0.1)
    assert np.array_equal(x, x0)


def test_subgradient_deterministic(rng):
    C = rng.normal(size=(10, 2))
    run = lambda: subgradient_descent(lambda x, i: np.sign(x - C[i]), np.zeros(2), 10, 5,  # noqa: E731
                                      lambda t: 0.1 / (1 + t), seed=3)
    assert np.array_equal(run(), run())


def test_subgradient_rejects_non_finite():
    with pytest.raises(OptimizationError):
        subgradient_descent(lambda x, i: np.array([np.inf]), np.zeros(1), 1, 1, 0.1)
