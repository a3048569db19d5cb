"""Batch gradient descent with Armijo backtracking.

Shared by the logistic learner and the vector/matrix scalers so that both
follow the same optimisation discipline.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DescentResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def gradient_descent(fun, x0, tol=1e-6, max_iter=1000, armijo=1e-4, shrink=0.5,
                     record=False):
    """Minimise ``fun`` (returning ``(value, grad)``) from ``x0``.

    Each trial step starts from the Barzilai-Borwein estimate and is halved
    until the Armijo condition holds, so the objective never increases.
    Stops when the gradient infinity-norm drops below ``tol``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    history = [f] if record else []
    step = 1.0 / max(1.0, float(np.abs(g).max()))
    x_prev = g_prev = None
    it = 0
    converged = float(np.abs(g).max()) < tol
    while not converged and it < max_iter:
        if x_prev is not None:
            s = x - x_prev
            y = g - g_prev
            sy = float(s @ y)
            if sy > 0:
                step = float(s @ s) / sy
        gg = float(g @ g)
        t = step
        while True:
            x_new = x - t * g
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f - armijo * t * gg:
                break
            t *= shrink
            if t < 1e-20:
                break
        if not (np.isfinite(f_new) and f_new <= f):
            # no descent possible at machine precision
            break
        x_prev, g_prev = x, g
        x, f, g = x_new, f_new, g_new
        it += 1
        if record:
            history.append(f)
        converged = float(np.abs(g).max()) < tol
    return DescentResult(x, float(f), float(np.abs(g).max()), it, converged, history)
