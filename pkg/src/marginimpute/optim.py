"""Smooth unconstrained minimization and a stochastic subgradient driver."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np


class OptimizationError(RuntimeError):
    """Raised when the objective returns non-finite values."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = None if point is None else np.array(point, copy=True)


@dataclass
class SmoothProblem:
    """Objective returning ``(value, gradient)`` at a point of dimension ``dim``."""

    dim: int
    oracle: Callable[[np.ndarray], tuple[float, np.ndarray]]

    def __call__(self, x):
        f, g = self.oracle(x)
        g = np.asarray(g, dtype=float)
        if g.shape != (self.dim,):
            raise ValueError(f"gradient has shape {g.shape}, expected ({self.dim},)")
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise OptimizationError("non-finite objective or gradient", x)
        return float(f), g


@dataclass
class OptimizerConfig:
    memory: int = 10
    max_iterations: int = 500
    gtol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    refine: bool = True

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line search constants must satisfy 0 < c1 < c2 < 1")
        if self.memory < 1 or self.max_iterations < 0:
            raise ValueError("memory >= 1 and max_iterations >= 0 required")


@dataclass
class OptimizeResult:
    x: np.ndarray
    value: float
    iterations: int
    status: str
    grad_norm: float
    n_evals: int


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _strong_wolfe(phi, f0, g0, alpha1, c1, c2, max_steps=25, alpha_max=1e10):
    """Line search for the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, slope, payload)``.  Returns
    ``(alpha, f, payload)`` or None on failure.
    """
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = alpha1

    def zoom(lo, flo, glo, hi, fhi, ghi):
        for _ in range(30):
            width = hi - lo
            trial = _cubic_min(lo, flo, glo, hi, fhi, ghi)
            lo_b, hi_b = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if trial is None or not (lo_b <= trial <= hi_b):
                trial = lo + 0.5 * width
            ft, gt, pt = phi(trial)
            if ft > f0 + c1 * trial * g0 or ft >= flo:
                hi, fhi, ghi = trial, ft, gt
            else:
                if abs(gt) <= -c2 * g0:
                    return trial, ft, pt
                if gt * (hi - lo) >= 0:
                    hi, fhi, ghi = lo, flo, glo
                lo, flo, glo = trial, ft, gt
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    for i in range(max_steps):
        fa, ga, pa = phi(a)
        if fa > f0 + c1 * a * g0 or (i > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, g_prev, a, fa, ga)
        if abs(ga) <= -c2 * g0:
            return a, fa, pa
        if ga >= 0:
            return zoom(a, fa, ga, a_prev, f_prev, g_prev)
        a_prev, f_prev, g_prev = a, fa, ga
        a = min(2.0 * a, alpha_max)
    return None


def _backtrack(fun, x, f, g, c1, max_halvings=60):
    """Armijo backtracking along steepest descent."""
    d = -g
    slope = float(g @ d)
    step = 1.0 / max(1.0, float(np.linalg.norm(g)))
    for _ in range(max_halvings):
        xn = x + step * d
        fn, gn = fun(xn)
        if fn <= f + c1 * step * slope and fn < f:
            return xn, fn, gn
        step *= 0.5
    return None


def minimize(problem, x0, cfg: OptimizerConfig | None = None) -> OptimizeResult:
    """Limited-memory BFGS with a strong Wolfe line search.

    Stops when ``||g|| <= gtol * max(1, ||g0||)`` (status ``"converged"``) or
    after ``max_iterations`` (status ``"max_iter"``).  If neither the
    quasi-Newton step nor a steepest-descent backtracking step can decrease
    the objective, returns the current iterate with status
    ``"line_search_failed"``.
    """
    cfg = cfg or OptimizerConfig()
    x = np.array(x0, dtype=float, copy=True)
    if not isinstance(problem, SmoothProblem):
        problem = SmoothProblem(len(x), problem)
    if x.shape != (problem.dim,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({problem.dim},)")

    n_evals = 0

    def fun(z):
        nonlocal n_evals
        n_evals += 1
        return problem(z)

    f, g = fun(x)
    gnorm = float(np.linalg.norm(g))
    tol = cfg.gtol * max(1.0, gnorm)
    hist: deque = deque(maxlen=cfg.memory)
    it = 0
    status = "max_iter"
    while True:
        if gnorm <= tol:
            status = "converged"
            break
        if it >= cfg.max_iterations:
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(hist):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if hist:
            s, y, _ = hist[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(hist, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        slope = float(g @ d)
        if slope >= 0:
            hist.clear()
            d = -g
            slope = -gnorm * gnorm
        alpha1 = 1.0 if hist else min(1.0, 1.0 / gnorm)

        def phi(a, d=d):
            xa = x + a * d
            fa, ga = fun(xa)
            return fa, float(ga @ d), (xa, ga)

        res = _strong_wolfe(phi, f, slope, alpha1, cfg.c1, cfg.c2)
        if res is not None and res[1] < f:
            a_acc, f_new, (x_new, g_new) = res
            if cfg.refine:
                # one cubic step toward the exact line minimizer; exact on quadratics
                g_acc = float(g_new @ d)
                a_star = _cubic_min(0.0, f, slope, a_acc, f_new, g_acc)
                if (a_star is not None and 0 < a_star < 4 * a_acc
                        and abs(a_star - a_acc) > 1e-3 * a_acc):
                    f_r, _, (x_r, g_r) = phi(a_star)
                    if f_r < f_new:
                        f_new, x_new, g_new = f_r, x_r, g_r
        else:
            fb = _backtrack(fun, x, f, g, cfg.c1)
            if fb is None:
                status = "line_search_failed"
                break
            x_new, f_new, g_new = fb
            hist.clear()
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            hist.append((s, yv, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
    return OptimizeResult(x, f, it, status, gnorm, n_evals)


def subgradient_descent(oracle, x0, n_examples: int, epochs: int, step_schedule,
                        l2: float = 0.0, seed: int = 0) -> np.ndarray:
    """Stochastic subgradient method over ``n_examples`` terms.

    Minimizes ``l2/2 * ||x||^2 + mean_i f_i(x)`` where ``oracle(x, i)``
    returns a subgradient of ``f_i``.  The example order is reshuffled each
    epoch by a seeded generator; the average of the iterates visited during
    the final epoch is returned.

    Parameters
    ----------
    step_schedule : float or callable
        Constant step or ``t -> step`` for global step counter ``t``;
        must be positive and non-increasing.
    """
    if callable(step_schedule):
        schedule = step_schedule
    else:
        const = float(step_schedule)
        schedule = lambda t: const  # noqa: E731
    x = np.array(x0, dtype=float, copy=True)
    if n_examples == 0 or epochs == 0:
        return x
    rng = np.random.default_rng(seed)
    t = 0
    last_step = math.inf
    avg = np.zeros_like(x)
    for epoch in range(epochs):
        order = rng.permutation(n_examples)
        final = epoch == epochs - 1
        for i in order:
            step = float(schedule(t))
            if not step > 0 or step > last_step:
                raise ValueError("step schedule must be positive and non-increasing")
            last_step = step
            g = np.asarray(oracle(x, int(i)), dtype=float)
            if not np.all(np.isfinite(g)):
                raise OptimizationError("non-finite subgradient", x)
            if l2:
                g = g + l2 * x
            x = x - step * g
            t += 1
            if final:
                avg += x
    return avg / n_examples


def gradient_check(fun, x, rel_step: float = 1e-6) -> float:
    """Relative error between the analytic gradient and central differences.

    ``fun(x)`` returns ``(value, gradient)``; the step for coordinate ``i``
    is ``rel_step * (1 + |x_i|)``.  Returns ``||fd - g|| / max(||fd||, ||g||)``.
    """
    x = np.asarray(x, dtype=float)
    _, g = fun(x)
    fd = np.empty_like(x)
    for i in range(len(x)):
        h = rel_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fd[i] = (fun(xp)[0] - fun(xm)[0]) / (2 * h)
    scale = max(np.linalg.norm(fd), np.linalg.norm(g), 1e-12)
    return float(np.linalg.norm(fd - g) / scale)
