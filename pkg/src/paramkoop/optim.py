"""First-order optimizers: Adam for training, projected L-BFGS for boxes.

The box-constrained minimizer is gradient-projection L-BFGS: search
directions come from a two-loop recursion fed with projected gradients,
iterates are projected back onto the box after every trial step, and an
Armijo backtracking line search acts on the projected arc.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def with_learning_rate(self, lr: float) -> "AdamState":
        return replace(self, learning_rate=float(lr))


def adam_init(n_params: int, learning_rate: float, beta1=0.9, beta2=0.999,
              eps=1e-8) -> AdamState:
    return AdamState(
        first_moment=np.zeros(n_params),
        second_moment=np.zeros(n_params),
        step_count=0,
        learning_rate=float(learning_rate),
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update; returns (new_state, new_params)."""
    if not (state.first_moment.shape == params.shape == grads.shape):
        raise ValueError("params, grads and moments must share a length")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = replace(state, first_moment=m, second_moment=v, step_count=t)
    return new_state, new_params


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape:
            raise ValueError("bound arrays differ in shape")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def cube(cls, lo: float, hi: float, n: int) -> "BoxBounds":
        return cls(np.full(n, lo), np.full(n, hi))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


@dataclass
class MinimizeResult:
    x: np.ndarray
    f: float
    iterations: int
    converged: bool
    message: str = ""


def _projected_gradient(x, g, bounds, eps=1e-12):
    """KKT residual of the box problem: zero exactly at a stationary point."""
    pg = g.copy()
    at_lower = x <= bounds.lower + eps
    at_upper = x >= bounds.upper - eps
    pg[at_lower] = np.minimum(g[at_lower], 0.0)
    pg[at_upper] = np.maximum(g[at_upper], 0.0)
    return pg


def _two_loop(pg, mem):
    """L-BFGS two-loop recursion: approximate H @ pg."""
    q = pg.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    s, y, _ = mem[-1]
    gamma = np.dot(s, y) / np.dot(y, y)
    q *= gamma
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def _line_search(objective, grad, bounds, x, f0, g0, d):
    """Weak-Wolfe bisection along the projected arc t -> P(x + t*d).

    Returns (x_new, f_new, g_new, ok). Falls back to the best point that
    satisfied the sufficient-decrease condition if the curvature condition
    cannot be met (e.g. the arc saturates on the box boundary).
    """
    c1, c2 = 1e-4, 0.9
    lo, hi = 0.0, np.inf
    t = 1.0
    fallback = None
    for _ in range(60):
        x_new = bounds.project(x + t * d)
        step = x_new - x
        if not np.any(step):
            hi = t
        else:
            slope = np.dot(g0, step)
            f_new = float(objective(x_new))
            if not np.isfinite(f_new) or f_new > f0 + c1 * slope:
                hi = t
            else:
                g_new = np.asarray(grad(x_new), dtype=np.float64)
                if np.dot(g_new, step) < c2 * slope:
                    fallback = (x_new, f_new, g_new)
                    lo = t
                else:
                    return x_new, f_new, g_new, True
        t = 2.0 * lo if np.isinf(hi) else 0.5 * (lo + hi)
        if t < 1e-16 or t > 1e12:
            break
    if fallback is not None:
        return (*fallback, True)
    return x, f0, g0, False


def minimize_box(objective, grad, x0, bounds: BoxBounds, max_iter=200,
                 tol=1e-9, memory=10) -> MinimizeResult:
    """Minimize a smooth function over a box from (clamped) ``x0``.

    Terminates when the projected-gradient infinity norm drops below ``tol``
    or after ``max_iter`` accepted steps. The returned point is always
    feasible and never worse than the projected start.
    """
    x = bounds.project(np.asarray(x0, dtype=np.float64))
    f = float(objective(x))
    if not np.isfinite(f):
        raise FloatingPointError("objective is non-finite at the start point")
    g = np.asarray(grad(x), dtype=np.float64)
    best_x, best_f = x.copy(), f

    mem = deque(maxlen=memory)
    iterations = 0
    message = "max_iter reached"
    converged = False

    for iterations in range(1, max_iter + 1):
        pg = _projected_gradient(x, g, bounds)
        if np.max(np.abs(pg)) < tol:
            converged, message = True, "projected gradient below tol"
            iterations -= 1
            break

        d = -_two_loop(pg, mem) if mem else -pg
        x_new, f_new, g_new, ok = _line_search(objective, grad, bounds, x, f, g, d)
        if not ok and mem:
            # Quasi-Newton direction failed on the arc: restart from
            # steepest descent with a fresh memory.
            mem.clear()
            x_new, f_new, g_new, ok = _line_search(objective, grad, bounds,
                                                   x, f, g, -pg)
        if not ok:
            message = "line search failed"
            break

        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_x, best_f = x.copy(), f
    return MinimizeResult(x=best_x, f=best_f, iterations=iterations,
                          converged=converged, message=message)
