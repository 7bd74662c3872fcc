"""Convex functionals on a discrete tensor-product space.

Each functional is strictly convex, differentiable and elliptic:

    <J'(v) - J'(w), v - w>  >=  alpha * ||v - w||^s

for a declared norm, exponent ``s > 1`` and constant ``alpha > 0``. Four
families are provided: ``L^p`` approximation of a target, a quadratic form
built from Kronecker-product terms, its penalised version for a one-sided
obstacle, and the finite-difference p-Laplacian energy.

Internally every functional works on dense ndarrays (``_value``,
``_gradient``, ``_hess_project``). The quadratic family additionally evaluates
directly on separated tensors, so it never needs a dense expansion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor_core import (
    DenseTensor,
    RankOneTensor,
    SeparatedTensor,
    TensorSpace,
    _gram_factors,
    as_array,
    mode_apply,
    outer,
    weighted_inner,
)

#: Largest ``prod(dims)`` for which the full operator matrix is assembled.
ASSEMBLY_CAP = 4096


class AsymmetricOperatorError(ValueError):
    pass


class Functional:
    """Base class: a convex functional ``J`` on ``space``.

    Subclasses implement the dense kernels ``_value(X)``, ``_gradient(X)``
    (the array ``G`` with ``<J'(X), W> = sum(G * W)``), ``_hess_project(X, B)``
    (the matrix ``B H B^T`` for a stack of directions ``B``) and ``_norm(X)``.
    """

    label = "functional"
    norm_name = ""
    is_quadratic = False
    s: float
    alpha: float

    def __init__(self, space: TensorSpace):
        self.space = space
        self._omega_cache = None

    @property
    def _omega(self):
        # product weights, built on first dense use only
        if self._omega_cache is None:
            self._omega_cache = self.space.weight_tensor()
        return self._omega_cache

    # dense kernels -------------------------------------------------------
    def _value(self, X):  # pragma: no cover - abstract
        raise NotImplementedError

    def _gradient(self, X):  # pragma: no cover - abstract
        raise NotImplementedError

    def _hess_project(self, X, B):  # pragma: no cover - abstract
        raise NotImplementedError

    def _norm(self, X):  # pragma: no cover - abstract
        raise NotImplementedError

    # public surface ------------------------------------------------------
    def value(self, v) -> float:
        return float(self._value(as_array(v, self.space)))

    __call__ = value

    def grad_action(self, v, w) -> float:
        """``<J'(v), w>``."""
        return float(np.sum(self._gradient(as_array(v, self.space)) * as_array(w, self.space)))

    def grad_dense(self, v) -> DenseTensor:
        return DenseTensor(self.space, self._gradient(as_array(v, self.space)))

    def norm(self, v) -> float:
        """The norm in which ellipticity is declared."""
        return float(self._norm(as_array(v, self.space)))

    def __repr__(self):
        return f"<{type(self).__name__} {self.label} dims={self.space.dims} s={self.s} alpha={self.alpha:.6g}>"


# ---------------------------------------------------------------------------
# L^p approximation


class LpApproximation(Functional):
    """``J(v) = (1/p) ||v - u||_p^p`` with weighted discrete norm."""

    norm_name = "Lp"

    def __init__(self, target, p: float, space: TensorSpace):
        if p < 2:
            raise ValueError(f"L^p approximation requires p >= 2, got {p}")
        super().__init__(space)
        from .oracles import scalar_ellipticity_scan

        self.p = float(p)
        self.target = as_array(target, space).copy()
        self.s = self.p
        self.alpha = scalar_ellipticity_scan(self.p)
        self.label = f"lp_approx(p={self.p:g})"

    def _value(self, X):
        r = X - self.target
        return np.sum(self._omega * np.abs(r) ** self.p) / self.p

    def _gradient(self, X):
        r = X - self.target
        return self._omega * r * np.abs(r) ** (self.p - 2)

    def _hess_project(self, X, B):
        h = self._omega * (self.p - 1) * np.abs(X - self.target) ** (self.p - 2)
        Bf = B.reshape(B.shape[0], -1)
        return (Bf * h.ravel()) @ Bf.T

    def _norm(self, X):
        return np.sum(self._omega * np.abs(X) ** self.p) ** (1 / self.p)


def make_lp_approx(target, p: float, space: TensorSpace) -> LpApproximation:
    return LpApproximation(target, p, space)


# ---------------------------------------------------------------------------
# Quadratic forms


@dataclass
class QuadraticOperatorSpec:
    """``a(v, w) = sum_r <(A_r^1 (x) ... (x) A_r^d) v, w>_mu`` and ``l(w) = <f, w>_mu``.

    ``kron_terms[r][j]`` is the ``n_j x n_j`` matrix ``A_r^j``.
    """

    kron_terms: list
    rhs: object = None


def stiffness_1d(n: int, h: float) -> np.ndarray:
    """Second-difference matrix ``tridiag(-1, 2, -1) / h^2`` (homogeneous Dirichlet)."""
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h**2


def identity_operator(space: TensorSpace, rhs=None) -> QuadraticOperatorSpec:
    return QuadraticOperatorSpec([[np.eye(n) for n in space.dims]], rhs)


def kronecker_sum_operator(space: TensorSpace, mats: Sequence[np.ndarray], rhs=None,
                           shift: float = 0.0) -> QuadraticOperatorSpec:
    """``sum_k I (x) .. (x) mats[k] (x) .. (x) I`` plus ``shift`` times the identity."""
    terms = []
    for k, mk in enumerate(mats):
        terms.append([np.asarray(mk, float) if j == k else np.eye(n)
                      for j, n in enumerate(space.dims)])
    if shift:
        terms.append([shift * np.eye(space.dims[0])] + [np.eye(n) for n in space.dims[1:]])
    return QuadraticOperatorSpec(terms, rhs)


def laplacian_operator(space: TensorSpace, rhs=None, lengths=1.0, shift=0.0):
    """Kronecker sum of 1-d Dirichlet stiffness matrices on uniform interior grids."""
    lengths = np.broadcast_to(np.asarray(lengths, float), (space.d,))
    mats = [stiffness_1d(n, L / (n + 1)) for n, L in zip(space.dims, lengths)]
    return kronecker_sum_operator(space, mats, rhs, shift)


class QuadraticFunctional(Functional):
    """``J(v) = a(v, v) / 2 - l(v)``, elliptic with ``s = 2``, ``alpha = 1`` in the a-norm."""

    norm_name = "a"
    is_quadratic = True

    def __init__(self, op: QuadraticOperatorSpec, space: TensorSpace, check_samples: int = 8,
                 seed: int = 0):
        super().__init__(space)
        self.s = 2.0
        self.alpha = 1.0
        self.label = "quadratic"
        self.op_mats = []
        for r, term in enumerate(op.kron_terms):
            if len(term) != space.d:
                raise ValueError(f"operator term {r} has {len(term)} factors, need {space.d}")
            mats = []
            for j, (A, n) in enumerate(zip(term, space.dims)):
                A = np.asarray(A, dtype=float)
                if A.shape != (n, n):
                    raise ValueError(f"operator term {r} factor {j} has shape {A.shape}")
                mats.append(A)
            self.op_mats.append(mats)
        # M = diag(mu) A, so that a(v, w) = sum_r prod_j w_j^T M_rj v_j on rank-one inputs
        self.form_mats = [[space.weights[j][:, None] * A for j, A in enumerate(t)]
                          for t in self.op_mats]
        rhs = op.rhs
        if rhs is None:
            rhs = SeparatedTensor.zeros(space)
        elif not isinstance(rhs, SeparatedTensor):
            rhs = SeparatedTensor.from_dense(as_array(rhs, space), space)
        self.rhs = rhs
        self._F = None
        self._check_symmetry(check_samples, seed)
        self.min_eigenvalue = None
        if space.size <= ASSEMBLY_CAP:
            ev = np.linalg.eigvalsh(self.assemble())
            self.min_eigenvalue = float(ev[0])
            if ev[0] <= 0:
                raise ValueError(f"operator is not positive definite (min eigenvalue {ev[0]:.3e})")

    @property
    def rhs_dense(self) -> np.ndarray:
        if self._F is None:
            self._F = as_array(self.rhs)
        return self._F

    def _check_symmetry(self, samples, seed):
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            v, w = (SeparatedTensor.from_rank_one(
                self.space, RankOneTensor([rng.uniform(-1, 1, n) for n in self.space.dims]))
                for _ in range(2))
            avw, awv = self.bilinear(v, w), self.bilinear(w, v)
            scale = np.sqrt(abs(self.bilinear(v, v) * self.bilinear(w, w)))
            if abs(avw - awv) > 1e-10 * max(scale, 1e-300):
                raise AsymmetricOperatorError(
                    f"a(v,w)={avw:.12g} but a(w,v)={awv:.12g}; operator must be symmetric")

    def assemble(self) -> np.ndarray:
        """Dense symmetric matrix ``K`` with ``a(v, w) = w^T K v`` in row-major order."""
        K = 0
        for mats in self.form_mats:
            term = mats[0]
            for M in mats[1:]:
                term = np.kron(term, M)
            K = K + term
        return K

    # separated kernels ---------------------------------------------------
    def bilinear(self, v: SeparatedTensor, w: SeparatedTensor) -> float:
        """``a(v, w)`` computed factorwise."""
        if v.rank == 0 or w.rank == 0:
            return 0.0
        return float(sum(w.coeffs @ _gram_factors(v, w, mats) @ v.coeffs
                         for mats in self.form_mats))

    def linear(self, w: SeparatedTensor) -> float:
        """``l(w) = <f, w>_mu``."""
        return weighted_inner(self.rhs, w)

    def value(self, v) -> float:
        if isinstance(v, SeparatedTensor):
            return 0.5 * self.bilinear(v, v) - self.linear(v)
        return super().value(v)

    __call__ = value

    def grad_action(self, v, w) -> float:
        if isinstance(v, SeparatedTensor) and isinstance(w, SeparatedTensor):
            return self.bilinear(v, w) - self.linear(w)
        return super().grad_action(v, w)

    def norm(self, v) -> float:
        if isinstance(v, SeparatedTensor):
            return float(np.sqrt(max(self.bilinear(v, v), 0.0)))
        return super().norm(v)

    # dense kernels -------------------------------------------------------
    def apply(self, X, batch=False):
        """``sum_r (A_r^1 (x) ... ) X`` (no weights)."""
        off = 1 if batch else 0
        out = 0
        for mats in self.op_mats:
            Y = X
            for j, A in enumerate(mats):
                Y = mode_apply(Y, A, j + off)
            out = out + Y
        return out

    def _value(self, X):
        return 0.5 * np.sum(self._omega * self.apply(X) * X) - np.sum(self._omega * self.rhs_dense * X)

    def _gradient(self, X):
        return self._omega * (self.apply(X) - self.rhs_dense)

    def _hess_project(self, X, B):
        AB = self._omega * self.apply(B, batch=True)
        k = B.shape[0]
        H = B.reshape(k, -1) @ AB.reshape(k, -1).T
        return 0.5 * (H + H.T)

    def _norm(self, X):
        return np.sqrt(max(np.sum(self._omega * self.apply(X) * X), 0.0))


def make_quadratic(op: QuadraticOperatorSpec, space: TensorSpace) -> QuadraticFunctional:
    return QuadraticFunctional(op, space)


# ---------------------------------------------------------------------------
# Penalised obstacle problem


@dataclass
class PenaltySpec:
    """One-sided obstacle ``v >= g`` enforced by ``(1/eps) * 1/2 ||max(0, g - v)||_mu^2``."""

    obstacle: object
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


class PenalizedFunctional(Functional):
    norm_name = "a"

    def __init__(self, base: QuadraticFunctional, pen: PenaltySpec):
        if not getattr(base, "is_quadratic", False):
            raise TypeError("the penalised functional needs a quadratic base")
        super().__init__(base.space)
        self.base = base
        self.epsilon = float(pen.epsilon)
        self.obstacle = as_array(pen.obstacle, base.space).copy()
        self.s = 2.0
        self.alpha = base.alpha
        self.label = f"penalized(eps={self.epsilon:g})"

    def _gap(self, X):
        return np.maximum(0.0, self.obstacle - X)

    def penalty(self, v) -> float:
        """``j(v) = 1/2 ||max(0, g - v)||_mu^2``."""
        gap = self._gap(as_array(v, self.space))
        return 0.5 * float(np.sum(self._omega * gap**2))

    def violation(self, v) -> float:
        """Weighted L^2 norm of the constraint violation ``max(0, g - v)``."""
        return float(np.sqrt(2 * self.penalty(v)))

    def _value(self, X):
        gap = self._gap(X)
        return self.base._value(X) + 0.5 * np.sum(self._omega * gap**2) / self.epsilon

    def _gradient(self, X):
        return self.base._gradient(X) - self._omega * self._gap(X) / self.epsilon

    def _hess_project(self, X, B):
        active = (self.obstacle - X > 0) * self._omega / self.epsilon
        Bf = B.reshape(B.shape[0], -1)
        return self.base._hess_project(X, B) + (Bf * active.ravel()) @ Bf.T

    def _norm(self, X):
        return self.base._norm(X)


def make_penalized(base: QuadraticFunctional, pen: PenaltySpec) -> PenalizedFunctional:
    return PenalizedFunctional(base, pen)


# ---------------------------------------------------------------------------
# p-Laplacian


def dirichlet_difference(n: int, h: float) -> np.ndarray:
    """Forward differences ``(n + 1) x n`` of a grid function vanishing at both ends."""
    D = np.zeros((n + 1, n))
    idx = np.arange(n)
    D[idx, idx] = 1.0
    D[idx + 1, idx] = -1.0
    return D / h


@dataclass
class PLaplacianSpec:
    """Finite-difference p-Laplacian energy.

    ``diff_mats[k]`` is the ``m_k x n_k`` difference matrix along dimension k
    and ``diff_weights[k]`` the quadrature weights on its ``m_k`` output
    points (defaults to the mean of the corresponding grid weights).
    """

    diff_mats: list
    p: float
    source: object = None
    diff_weights: list = None

    @classmethod
    def uniform_grid(cls, space: TensorSpace, p: float, source=None, lengths=1.0):
        lengths = np.broadcast_to(np.asarray(lengths, float), (space.d,))
        hs = [L / (n + 1) for n, L in zip(space.dims, lengths)]
        return cls([dirichlet_difference(n, h) for n, h in zip(space.dims, hs)], p, source,
                   [np.full(n + 1, h) for n, h in zip(space.dims, hs)])


def uniform_grid_space(dims, lengths=1.0, **kw) -> TensorSpace:
    """Interior nodes of a uniform grid with weights equal to the mesh size."""
    lengths = np.broadcast_to(np.asarray(lengths, float), (len(dims),))
    return TensorSpace(dims, [np.full(n, L / (n + 1)) for n, L in zip(dims, lengths)], **kw)


class PLaplacian(Functional):
    """``J(v) = (1/p) sum_k ||D_k v||_p^p - <f, v>_mu`` for ``p > 2``.

    The declared norm is ``(sum_k ||D_k v||_p^p)^(1/p)``. In that norm the
    scalar inequality ``(|a|^{p-2}a - |b|^{p-2}b)(a - b) >= alpha_p |a - b|^p``
    applies termwise, so ``alpha = alpha_p``.
    """

    norm_name = "W1p"

    def __init__(self, spec: PLaplacianSpec, space: TensorSpace):
        if not spec.p > 2:
            raise ValueError(f"p-Laplacian requires p > 2, got {spec.p}")
        super().__init__(space)
        from .oracles import scalar_ellipticity_scan

        self.p = float(spec.p)
        if len(spec.diff_mats) != space.d:
            raise ValueError("one difference matrix per dimension is required")
        self.D = []
        self.diff_omega = []
        self._diff_w = []
        for k, (Dk, n) in enumerate(zip(spec.diff_mats, space.dims)):
            Dk = np.asarray(Dk, float)
            if Dk.ndim != 2 or Dk.shape[1] != n:
                raise ValueError(f"difference matrix {k} has shape {Dk.shape}, need (m, {n})")
            if np.linalg.matrix_rank(Dk) < n:
                raise ValueError(f"difference matrix {k} has a nontrivial kernel")
            wk = (np.full(Dk.shape[0], space.weights[k].mean()) if spec.diff_weights is None
                  else np.asarray(spec.diff_weights[k], float))
            if wk.shape != (Dk.shape[0],) or not np.all(wk > 0):
                raise ValueError(f"diff_weights[{k}] must be {Dk.shape[0]} positive values")
            self.D.append(Dk)
            self._diff_w.append(wk)
            self.diff_omega.append(outer([wk if j == k else space.weights[j]
                                          for j in range(space.d)]))
        src = spec.source
        self.source = np.zeros(space.dims) if src is None else as_array(src, space).copy()
        self.s = self.p
        self.alpha = scalar_ellipticity_scan(self.p)
        self.label = f"p_laplacian(p={self.p:g})"

    def poincare_constant(self) -> float:
        """Smallest eigenvalue of ``sum_k D_k^T W_k D_k`` relative to the mass matrix (p = 2).

        Eigenvalues of a Kronecker sum add up, so this is the sum of the 1-d
        generalised eigenvalues.
        """
        from scipy.linalg import eigh

        lam = 0.0
        for k, Dk in enumerate(self.D):
            S = Dk.T @ (self._diff_w[k][:, None] * Dk)
            lam += eigh(S, np.diag(self.space.weights[k]), eigvals_only=True)[0]
        return float(lam)

    def _diffs(self, X, batch=False):
        off = 1 if batch else 0
        return [mode_apply(X, Dk, k + off) for k, Dk in enumerate(self.D)]

    def _energy(self, X):
        return sum(np.sum(w * np.abs(g) ** self.p) for w, g in zip(self.diff_omega, self._diffs(X)))

    def _value(self, X):
        return self._energy(X) / self.p - np.sum(self._omega * self.source * X)

    def _gradient(self, X):
        out = -self._omega * self.source
        for k, (w, g) in enumerate(zip(self.diff_omega, self._diffs(X))):
            out = out + mode_apply(w * g * np.abs(g) ** (self.p - 2), self.D[k].T, k)
        return out

    def _hess_project(self, X, B):
        n = B.shape[0]
        H = np.zeros((n, n))
        for w, g, dB in zip(self.diff_omega, self._diffs(X), self._diffs(B, batch=True)):
            h = (w * (self.p - 1) * np.abs(g) ** (self.p - 2)).ravel()
            dBf = dB.reshape(n, -1)
            H += (dBf * h) @ dBf.T
        return H

    def _norm(self, X):
        return self._energy(X) ** (1 / self.p)


def make_p_laplacian(spec: PLaplacianSpec, space: TensorSpace) -> PLaplacian:
    return PLaplacian(spec, space)


# ---------------------------------------------------------------------------


@dataclass
class EllipticityResult:
    min_ratio: float
    alpha: float
    ratios: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.min_ratio >= self.alpha * (1 - 1e-8)


def ellipticity_check(J: Functional, sample_count: int = 20, seed=0) -> EllipticityResult:
    """Observed ``<J'(v) - J'(w), v - w> / ||v - w||^s`` over seeded random pairs.

    Pairs are drawn on a spread of magnitudes so that the nonhomogeneous
    functionals are probed away from the unit ball too.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    dims = J.space.dims
    ratios = []
    for _ in range(sample_count):
        scale = 10.0 ** rng.uniform(-1, 1)
        v = scale * rng.uniform(-1, 1, dims)
        w = scale * rng.uniform(-1, 1, dims)
        d = v - w
        num = np.sum((J._gradient(v) - J._gradient(w)) * d)
        ratios.append(num / J._norm(d) ** J.s)
    ratios = np.array(ratios)
    return EllipticityResult(float(ratios.min()), float(J.alpha), ratios)
