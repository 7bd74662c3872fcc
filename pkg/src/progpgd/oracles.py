"""Brute-force references used to check the solver.

Everything here works on the full dense tensor and is only meant for small
("desk scale") problems.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._newton import armijo, damped_newton
from .tensor_core import DenseTensor, TensorSpace, as_array


@dataclass
class OracleConfig:
    max_iters: int = 50_000
    grad_tol: float = 1e-10
    step_rule: str = "newton"  # or "backtracking_gd"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or not self.grad_tol > 0:
            raise ValueError("max_iters and grad_tol must be positive")
        if self.step_rule not in ("newton", "backtracking_gd"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


class OracleNotConverged(RuntimeError):
    def __init__(self, msg, solution=None, value=None):
        super().__init__(msg)
        self.solution = solution
        self.value = value


@dataclass
class DenseSolution:
    u: DenseTensor
    J: float
    grad_norm: float
    iterations: int


def dense_minimize(J, cfg: OracleConfig | None = None) -> DenseSolution:
    """Minimise ``J`` over the whole (dense) space.

    Quadratic functionals are solved directly from the assembled normal
    equations; the others by damped Newton or backtracking gradient descent on
    all ``prod(dims)`` unknowns. Raises :class:`OracleNotConverged` when the
    gradient test ``||grad|| <= grad_tol * (1 + |J*|)`` is not met.
    """
    cfg = cfg or OracleConfig()
    space: TensorSpace = J.space
    space.check_cap()
    N = space.size
    if getattr(J, "is_quadratic", False):
        K = J.assemble()
        b = (J._omega * J.rhs_dense).ravel()
        x = np.linalg.solve(K, b)
        X = x.reshape(space.dims)
        iters = 1
    else:
        eye = np.eye(N).reshape((N,) + space.dims)

        def phi(x):
            return J._value(x.reshape(space.dims))

        def grad(x):
            return J._gradient(x.reshape(space.dims)).ravel()

        x0 = np.zeros(N)
        if cfg.step_rule == "newton":
            x, iters = _newton_to_tolerance(J, phi, grad, eye, x0, cfg)
        else:
            x, iters = _gradient_descent(phi, grad, x0, cfg)
        X = x.reshape(space.dims)
    val = float(J._value(X))
    gnorm = float(np.linalg.norm(J._gradient(X)))
    sol = DenseSolution(DenseTensor(space, X), val, gnorm, iters)
    if gnorm > cfg.grad_tol * (1 + abs(val)):
        raise OracleNotConverged(
            f"dense oracle stopped with |grad| = {gnorm:.3e} after {iters} iterations",
            sol.u, val)
    return sol


def _newton_to_tolerance(J, phi, grad, eye, x0, cfg):
    hess = lambda y: J._hess_project(y.reshape(J.space.dims), eye)  # noqa: E731
    x, total = x0, 0
    # restart while the gradient test fails; each restart resets the stall counter
    for _ in range(5):
        f = phi(x)
        res = damped_newton(phi, grad, hess, x, max_iter=cfg.max_iters - total, rtol=0.0,
                            gtol=0.1 * cfg.grad_tol * (1 + abs(f)))
        x, total = res.x, total + res.iterations
        if np.linalg.norm(grad(x)) <= cfg.grad_tol * (1 + abs(res.fun)) or total >= cfg.max_iters:
            break
    return x, total


def _gradient_descent(phi, grad, x, cfg):
    f = phi(x)
    step = 1.0
    for it in range(1, cfg.max_iters + 1):
        g = grad(x)
        if np.linalg.norm(g) <= cfg.grad_tol * (1 + abs(f)):
            return x, it - 1
        t, xn, fn = armijo(phi, x, f, g, -step * g)
        if t == 0.0:
            return x, it
        # Barzilai-Borwein style warm start for the next trial step
        s, y = xn - x, grad(xn) - g
        sy = s @ y
        step = (s @ s) / sy if sy > 0 else step * t * 2
        x, f = xn, fn
    return x, cfg.max_iters


@dataclass
class TruncatedSVD:
    sigma: np.ndarray
    left: np.ndarray
    right: np.ndarray
    approx: DenseTensor
    all_sigma: np.ndarray


def truncated_svd(matrix, m: int, space: TensorSpace | None = None) -> TruncatedSVD:
    """Best rank-``m`` approximation of a 2-d tensor in the weighted Frobenius norm.

    Uses the eigendecomposition of the smaller weighted Gram matrix. With
    unit weights this is the ordinary SVD; in general the singular vectors
    are orthonormal for the ``mu_1`` and ``mu_2`` inner products.
    """
    if space is None:
        space = getattr(matrix, "space", None)
    X = as_array(matrix, space)
    if X.ndim != 2:
        raise ValueError(f"truncated_svd needs a 2-d tensor, got {X.ndim} dims")
    if space is None:
        space = TensorSpace(X.shape)
    n1, n2 = X.shape
    if not 0 <= m <= min(n1, n2):
        raise ValueError(f"rank {m} out of range 0..{min(n1, n2)}")
    r1 = np.sqrt(space.weights[0])
    r2 = np.sqrt(space.weights[1])
    Y = r1[:, None] * X * r2[None, :]
    transpose = n1 > n2
    if transpose:
        Y = Y.T
    lam, V = np.linalg.eigh(Y @ Y.T)
    order = np.argsort(lam)[::-1]
    lam, V = np.clip(lam[order], 0, None), V[:, order]
    sig = np.sqrt(lam)
    Uk = V[:, :m]
    with np.errstate(divide="ignore", invalid="ignore"):
        Wk = (Y.T @ Uk) / np.where(sig[:m] > 0, sig[:m], 1.0)
    if transpose:
        Uk, Wk = Wk, Uk
    left = Uk / r1[:, None]
    right = Wk / r2[:, None]
    approx = (left * sig[:m]) @ right.T
    return TruncatedSVD(sig[:m].copy(), left, right, DenseTensor(space, approx), sig)


def fd_grad_check(J, v, directions: int = 5, seed=0) -> float:
    """Max relative mismatch between central differences of ``J`` and ``grad_action``.

    ``h = eps^(1/3) * (1 + ||v||)``; directions are seeded unit vectors.
    """
    X = as_array(v, J.space)
    h = np.finfo(float).eps ** (1 / 3) * (1 + np.linalg.norm(X))
    rng = np.random.default_rng(seed)
    G = J._gradient(X)
    worst = 0.0
    for _ in range(directions):
        w = rng.standard_normal(X.shape)
        w /= np.linalg.norm(w)
        fd = (J._value(X + h * w) - J._value(X - h * w)) / (2 * h)
        ga = float(np.sum(G * w))
        worst = max(worst, abs(fd - ga) / (1 + abs(ga)))
    return worst


def scalar_ratio(s, t, p):
    """``(|s|^{p-2} s - |t|^{p-2} t)(s - t) / |s - t|^p``.

    Evaluated after dividing both arguments by ``|s - t|`` (the ratio is
    homogeneous of degree 0), which avoids cancellation in the quotient.
    """
    s = np.asarray(s, float)
    t = np.asarray(t, float)
    d = s - t
    a, b = s / np.abs(d), t / np.abs(d)
    e = a - b
    return (np.abs(a) ** (p - 2) * a - np.abs(b) ** (p - 2) * b) * e / np.abs(e) ** p


@lru_cache(maxsize=None)
def scalar_ellipticity_scan(p: float, grid_points: int = 200) -> float:
    """Smallest value of :func:`scalar_ratio` over a ``grid_points^2`` grid on ``[-1, 1]^2``.

    The ratio is homogeneous of degree 0, so the square covers all of R^2.
    Pairs with ``|s - t| < 1e-9`` are excluded.
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    if grid_points < 100:
        raise ValueError("use at least 100 grid points per axis")
    # integer numerators keep the grid exactly symmetric, so s = -t pairs are hit exactly
    x = (2.0 * np.arange(grid_points) - (grid_points - 1)) / (grid_points - 1)
    S, T = np.meshgrid(x, x, indexing="ij")
    mask = np.abs(S - T) >= 1e-9
    r = scalar_ratio(S[mask], T[mask], p)
    return float(r.min())
