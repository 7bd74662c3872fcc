"""Damped Newton with Armijo backtracking for small smooth convex subproblems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg


@dataclass
class NewtonResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool


def _newton_direction(g, H):
    """Solve ``H d = -g``; ``None`` when H is not numerically positive definite."""
    n = g.size
    tr = np.trace(H)
    if not np.isfinite(tr) or tr <= 0:
        return None
    jitter = 0.0
    for _ in range(3):
        try:
            c = linalg.cho_factor(H + jitter * np.eye(n), check_finite=False)
            return linalg.cho_solve(c, -g, check_finite=False)
        except linalg.LinAlgError:
            jitter = 1e-14 * tr if jitter == 0 else jitter * 1e3
    return None


def armijo(phi, x, f, g, d, c1=1e-4, shrink=0.5, max_halvings=60):
    """Backtracking on ``phi(x + t d)``; returns ``(t, x_new, f_new)`` or ``t = 0``."""
    slope = float(g @ d)
    t = 1.0
    for _ in range(max_halvings):
        xn = x + t * d
        fn = phi(xn)
        if np.isfinite(fn) and fn <= f + c1 * t * slope:
            return t, xn, fn
        t *= shrink
    return 0.0, x, f


def damped_newton(phi, grad, hess, x0, *, max_iter=50, rtol=1e-15, fscale=0.0,
                  exact=False, use_hessian=True, gtol=0.0, c1=1e-4):
    """Minimise a convex ``phi`` from ``x0``.

    The iteration stops once the predicted decrease ``g^T H^{-1} g / 2`` drops
    below ``rtol * max(|phi|, fscale)``, once ``||g|| <= gtol``, or when the
    line search stops making progress. When the Hessian is not positive
    definite the step falls back to steepest descent, which is also the only
    step used when ``use_hessian=False``. With ``exact=True`` (the quadratic
    case) a single full Newton step is taken.
    """
    x = np.array(x0, dtype=float)
    f = phi(x)
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")
    stalls = 0
    for it in range(1, max_iter + 1):
        g = grad(x)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("gradient is not finite")
        if not np.any(g) or np.linalg.norm(g) <= gtol:
            return NewtonResult(x, f, it - 1, True)
        d = _newton_direction(g, hess(x)) if use_hessian else None
        newton_step = d is not None and g @ d < 0
        if not newton_step:
            d = -g
        tol = rtol * max(abs(f), fscale)
        if newton_step and -0.5 * (g @ d) <= tol:
            return NewtonResult(x, f, it - 1, True)
        if exact and newton_step:
            xn = x + d
            fn = phi(xn)
            if fn <= f:
                return NewtonResult(xn, fn, it, True)
        t, xn, fn = armijo(phi, x, f, g, d, c1=c1)
        if t == 0.0:
            return NewtonResult(x, f, it, newton_step)
        decrease = f - fn
        x, f = xn, fn
        if decrease <= tol:
            stalls += 1
            if not newton_step or stalls >= 3:
                return NewtonResult(x, f, it, True)
        else:
            stalls = 0
    return NewtonResult(x, f, max_iter, False)
