"""Limited-memory BFGS with a step-rejecting backtracking line search.

The line search halves the step until the Armijo condition holds AND the
candidate satisfies a caller-provided feasibility predicate; infeasible
candidates are rejected outright so barrier terms are never evaluated
outside their domain. An optional retraction is applied to each candidate
before evaluation (used to pin down gauge freedom in the variables; it
must leave the objective value unchanged).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class LBFGSResult:
    x: np.ndarray
    f: float
    n_iter: int
    converged: bool
    stop_reason: str
    n_rejected: int = 0
    history: list | None = None


def minimize(fun_grad, x0, feasible=None, retract=None, memory: int = 10,
             max_iter: int = 300, rel_tol: float = 1e-6, c1: float = 1e-4,
             max_halvings: int = 40, grad_tol: float = 0.0,
             keep_history: bool = False) -> LBFGSResult:
    """Minimize fun_grad(x) -> (f, grad).

    feasible(x) -> bool gates every trial point. retract(x) -> x is applied
    to trial points before evaluation and must not change the objective.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    if retract is not None:
        x = retract(x)
    f, g = fun_grad(x)
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    rho: deque = deque(maxlen=memory)
    n_rejected = 0
    history = [f] if keep_history else None

    def two_loop(grad):
        q = grad.copy()
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            a = r * (s @ q)
            alphas.append(a)
            q -= a * y
        if S:
            s, y = S[-1], Y[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
            beta = r * (y @ q)
            q += (a - beta) * s
        return q

    it = 0
    for it in range(1, max_iter + 1):
        p = -two_loop(g)
        gp = g @ p
        if not np.isfinite(gp) or gp >= 0.0:
            S.clear(); Y.clear(); rho.clear()
            p = -g
            gp = g @ p
            if gp >= 0.0:
                return LBFGSResult(x, f, it - 1, True, "stationary",
                                   n_rejected, history)
        alpha = 1.0
        accepted = False
        fc = gc = xc = None
        for _ in range(max_halvings):
            xt = x + alpha * p
            if retract is not None:
                xt = retract(xt)
            if feasible is not None and not feasible(xt):
                n_rejected += 1
                alpha *= 0.5
                continue
            ft, gt = fun_grad(xt)
            if np.isfinite(ft) and ft <= f + c1 * alpha * gp:
                xc, fc, gc = xt, ft, gt
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return LBFGSResult(x, f, it, False, "line_search_failure",
                               n_rejected, history)
        s = xc - x
        y = gc - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s); Y.append(y); rho.append(1.0 / sy)
        df = f - fc
        x, f, g = xc, fc, gc
        if keep_history:
            history.append(f)
        if grad_tol > 0.0 and np.max(np.abs(g)) <= grad_tol:
            return LBFGSResult(x, f, it, True, "grad_tol", n_rejected, history)
        if df <= rel_tol * max(1.0, abs(f)):
            return LBFGSResult(x, f, it, True, "rel_tol", n_rejected, history)
    return LBFGSResult(x, f, it, False, "max_iter", n_rejected, history)
