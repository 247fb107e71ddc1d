"""Limited-memory BFGS with two-loop recursion and Armijo backtracking."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    converged: bool
    iterations: int
    message: str
    trace: list[float] = field(default_factory=list)


def two_loop(g: np.ndarray, S, Y) -> np.ndarray:
    """Approximate inverse-Hessian times ``g`` from the stored curvature pairs."""
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(S, Y)]
    for s, y, rho in reversed(list(zip(S, Y, rhos))):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(S, Y, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def minimize_lbfgs(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    memory: int = 5,
    gtol: float = 1e-6,
    max_iter: int = 500,
    c1: float = 1e-4,
    min_step: float = 1e-20,
) -> LbfgsResult:
    """Minimise ``f`` given ``fun_grad(x) -> (f, grad)``.

    Stops when ``||grad|| <= gtol * (1 + |f|)`` or after ``max_iter`` iterations.
    Non-finite trial values are treated as failed Armijo tests (step halved).
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    trace = [f]
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol * (1.0 + abs(f)):
            return LbfgsResult(x, f, g, True, it, "gradient tolerance reached", trace)
        d = -two_loop(g, S, Y)
        slope = float(g @ d)
        if slope >= 0:
            S.clear()
            Y.clear()
            d = -g
            slope = -gnorm ** 2
        step = 1.0 if S else min(1.0, 1.0 / gnorm)
        while True:
            x_new = x + step * d
            if step < min_step or np.array_equal(x_new, x):
                msg = f"line search failed at iteration {it} (step underflow)"
                log.warning(msg)
                return LbfgsResult(x, f, g, False, it, msg, trace)
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                break
            step *= 0.5
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            S.append(s)
            Y.append(y)
        x, f, g = x_new, f_new, g_new
        trace.append(f)
    converged = float(np.linalg.norm(g)) <= gtol * (1.0 + abs(f))
    return LbfgsResult(x, f, g, converged, max_iter, "maximum iterations reached", trace)
