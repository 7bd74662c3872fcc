"""Discrete tensor-product spaces and separated (CP-format) tensors.

A :class:`TensorSpace` is the product of ``d`` finite grids, each carrying
positive quadrature weights. Values live either in a :class:`DenseTensor`
(row-major flat array) or in a :class:`SeparatedTensor`, a coefficient
weighted sum of :class:`RankOneTensor` terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

DEFAULT_DENSE_CAP = 10**6


class DenseCapError(ValueError):
    """Raised when a dense expansion would exceed the configured entry cap."""


class SpaceMismatchError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TensorSpace:
    """Product of ``d`` weighted grids.

    Parameters
    ----------
    dims : sequence of int
        Grid sizes ``n_j``.
    weights : sequence of array_like, optional
        Per-dimension strictly positive quadrature weights. Uniform weight 1
        (counting measure) when omitted.
    dense_cap : int
        Largest number of entries allowed in a dense expansion.
    """

    dims: tuple
    weights: tuple = None
    dense_cap: int = DEFAULT_DENSE_CAP

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 2:
            raise ValueError(f"need at least 2 dimensions, got {len(dims)}")
        if any(n < 1 for n in dims):
            raise ValueError(f"grid sizes must be positive, got {dims}")
        if self.weights is None:
            weights = tuple(_frozen(np.ones(n)) for n in dims)
        else:
            if len(self.weights) != len(dims):
                raise ValueError("one weight vector per dimension is required")
            weights = tuple(_frozen(w) for w in self.weights)
            for j, (w, n) in enumerate(zip(weights, dims)):
                if w.shape != (n,):
                    raise ValueError(f"weights[{j}] has shape {w.shape}, expected ({n},)")
                if not np.all(w > 0):
                    raise ValueError(f"weights[{j}] must be strictly positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "weights", weights)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def weight_tensor(self) -> np.ndarray:
        """Dense product weight ``prod_j mu_j[i_j]`` (respects the cap)."""
        self.check_cap()
        return outer(self.weights)

    def check_cap(self):
        if self.size > self.dense_cap:
            raise DenseCapError(
                f"dense expansion of {self.dims} needs {self.size} entries, "
                f"cap is {self.dense_cap}"
            )

    def same_as(self, other: "TensorSpace") -> bool:
        return self is other or (
            self.dims == other.dims
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
        )

    def __eq__(self, other):
        return isinstance(other, TensorSpace) and self.same_as(other)

    def __hash__(self):
        return hash(self.dims)


def outer(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product of 1-d arrays, first vector varying slowest."""
    out = np.asarray(vectors[0], dtype=float)
    for v in vectors[1:]:
        out = np.multiply.outer(out, np.asarray(v, dtype=float))
    return out


def mode_apply(x: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    """Apply ``mat`` (m x n) along ``axis`` of ``x`` (whose length there is n)."""
    return np.moveaxis(np.tensordot(mat, x, axes=(1, axis)), 0, axis)


@dataclass(frozen=True, eq=False)
class RankOneTensor:
    """Elementary tensor ``w1 (x) w2 (x) ... (x) wd``."""

    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(_frozen(f) for f in self.factors))

    @property
    def d(self) -> int:
        return len(self.factors)

    def norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(f) for f in self.factors])

    def is_zero(self) -> bool:
        return any(not np.any(f) for f in self.factors)

    def balanced(self) -> "RankOneTensor":
        """Rescale so that every factor has the same Euclidean norm."""
        norms = self.norms()
        if np.any(norms == 0):
            return RankOneTensor([np.zeros_like(f) for f in self.factors])
        # geometric mean computed in log space; avoids overflow for large d
        target = np.exp(np.mean(np.log(norms)))
        return RankOneTensor([f * (target / n) for f, n in zip(self.factors, norms)])

    def scaled(self, c: float) -> "RankOneTensor":
        """Spread the scalar ``c`` evenly over the factors (sign on the first)."""
        if c == 0:
            return RankOneTensor([np.zeros_like(f) for f in self.factors])
        mag = abs(c) ** (1.0 / self.d)
        fs = [f * mag for f in self.factors]
        fs[0] = fs[0] * np.sign(c)
        return RankOneTensor(fs)

    def to_array(self) -> np.ndarray:
        return outer(self.factors)

    @classmethod
    def zeros(cls, space: TensorSpace) -> "RankOneTensor":
        return cls([np.zeros(n) for n in space.dims])


@dataclass(frozen=True, eq=False)
class SeparatedTensor:
    """``sum_i coeffs[i] * terms[i]`` on ``space``. Empty terms is the zero tensor."""

    space: TensorSpace
    terms: tuple = ()
    coeffs: tuple = None

    def __post_init__(self):
        terms = tuple(self.terms)
        coeffs = np.ones(len(terms)) if self.coeffs is None else self.coeffs
        coeffs = _frozen(coeffs)
        if coeffs.shape != (len(terms),):
            raise ValueError("coeffs and terms must have the same length")
        for i, t in enumerate(terms):
            if t.d != self.space.d or any(
                f.shape != (n,) for f, n in zip(t.factors, self.space.dims)
            ):
                raise SpaceMismatchError(f"term {i} does not match dims {self.space.dims}")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def rank(self) -> int:
        return len(self.terms)

    def factor_matrix(self, j: int) -> np.ndarray:
        """Mode-``j`` factors stacked as columns, shape ``(n_j, rank)``."""
        if not self.terms:
            return np.zeros((self.space.dims[j], 0))
        return np.column_stack([t.factors[j] for t in self.terms])

    def append(self, term: RankOneTensor, coeff: float = 1.0) -> "SeparatedTensor":
        return SeparatedTensor(self.space, self.terms + (term,), np.append(self.coeffs, coeff))

    def with_coeffs(self, coeffs) -> "SeparatedTensor":
        return SeparatedTensor(self.space, self.terms, coeffs)

    def __add__(self, other: "SeparatedTensor") -> "SeparatedTensor":
        _check_space(self.space, other.space)
        return SeparatedTensor(
            self.space, self.terms + other.terms, np.concatenate([self.coeffs, other.coeffs])
        )

    def __rmul__(self, a: float) -> "SeparatedTensor":
        return SeparatedTensor(self.space, self.terms, a * self.coeffs)

    def __neg__(self):
        return (-1.0) * self

    def __sub__(self, other):
        return self + (-other)

    @classmethod
    def zeros(cls, space: TensorSpace) -> "SeparatedTensor":
        return cls(space)

    @classmethod
    def from_rank_one(cls, space, term: RankOneTensor, coeff: float = 1.0):
        return cls(space, (term,), [coeff])

    @classmethod
    def from_dense(cls, x, space: TensorSpace | None = None) -> "SeparatedTensor":
        """Exact separated form of a dense array using unit vectors in modes ``1..d-1``.

        Zero fibres are skipped, so the number of terms is at most
        ``n_1 * ... * n_{d-1}``.
        """
        if isinstance(x, DenseTensor):
            space = space or x.space
            x = x.array
        x = np.asarray(x, dtype=float)
        if space is None:
            space = TensorSpace(x.shape)
        if x.shape != space.dims:
            raise SpaceMismatchError(f"array shape {x.shape} vs dims {space.dims}")
        terms = []
        lead = space.dims[:-1]
        for idx in np.ndindex(*lead):
            fibre = x[idx]
            if not np.any(fibre):
                continue
            fs = [np.eye(n)[i] for n, i in zip(lead, idx)] + [fibre]
            terms.append(RankOneTensor(fs))
        return cls(space, terms)


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Full tensor stored as a flat row-major array."""

    space: TensorSpace
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _frozen(np.ravel(self.values))
        if vals.size != self.space.size:
            raise ValueError(f"expected {self.space.size} values, got {vals.size}")
        object.__setattr__(self, "values", vals)

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.space.dims)


Tensor = Union[SeparatedTensor, DenseTensor, np.ndarray]


def _check_space(a: TensorSpace, b: TensorSpace):
    if not a.same_as(b):
        raise SpaceMismatchError(f"tensor spaces differ: {a.dims} vs {b.dims}")


def to_dense(v: SeparatedTensor) -> DenseTensor:
    """Expand ``v`` entrywise. Raises :class:`DenseCapError` above the cap."""
    space = v.space
    space.check_cap()
    out = np.zeros(space.dims)
    for c, t in zip(v.coeffs, v.terms):
        if c != 0:
            out += c * t.to_array()
    return DenseTensor(space, out)


def as_array(v: Tensor, space: TensorSpace | None = None) -> np.ndarray:
    """Dense ndarray view of any supported tensor representation."""
    if isinstance(v, SeparatedTensor):
        if space is not None:
            _check_space(space, v.space)
        return to_dense(v).array
    if isinstance(v, DenseTensor):
        if space is not None:
            _check_space(space, v.space)
        return v.array
    a = np.asarray(v, dtype=float)
    if space is not None and a.shape != space.dims:
        if a.size == space.size:
            return a.reshape(space.dims)
        raise SpaceMismatchError(f"array shape {a.shape} vs dims {space.dims}")
    return a


def _gram_factors(v: SeparatedTensor, w: SeparatedTensor, mats=None) -> np.ndarray:
    """``G[i', i] = prod_j <w_{i'}^j, M_j v_i^j>`` with ``M_j = diag(mu_j)`` by default."""
    g = np.ones((w.rank, v.rank))
    for j in range(v.space.d):
        Vj = v.factor_matrix(j)
        Wj = w.factor_matrix(j)
        mv = v.space.weights[j][:, None] * Vj if mats is None else mats[j] @ Vj
        g *= Wj.T @ mv
    return g


def weighted_inner(v: SeparatedTensor | DenseTensor, w: SeparatedTensor | DenseTensor) -> float:
    """Discrete ``L^2_mu`` inner product.

    Separated inputs are contracted factor by factor, never expanded.
    """
    _check_space(v.space, w.space)
    if isinstance(v, SeparatedTensor) and isinstance(w, SeparatedTensor):
        if v.rank == 0 or w.rank == 0:
            return 0.0
        return float(w.coeffs @ _gram_factors(v, w) @ v.coeffs)
    space = v.space
    return float(np.sum(as_array(v) * as_array(w) * space.weight_tensor()))


def discrete_lp_norm(v: Tensor, p: float, space: TensorSpace | None = None) -> float:
    """``(sum_idx prod_j mu_j * |v|^p)^(1/p)``; separated inputs are expanded."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if space is None:
        space = getattr(v, "space", None)
    x = as_array(v, space)
    if space is None:
        space = TensorSpace(x.shape)
    return float(np.sum(space.weight_tensor() * np.abs(x) ** p) ** (1.0 / p))


def unfold(x: np.ndarray, j: int) -> np.ndarray:
    """Mode-``j`` unfolding, shape ``(n_j, prod_{k != j} n_k)``."""
    return np.moveaxis(x, j, 0).reshape(x.shape[j], -1)


@dataclass(frozen=True)
class ModeSubspace:
    rank: int
    basis: np.ndarray
    superset: bool = False


def minimal_subspace_ranks(v: SeparatedTensor, tol: float = 1e-10, exact: bool | None = None):
    """Per-dimension minimal subspaces of ``v``.

    In exact mode the rank of each mode unfolding is counted as the number of
    singular values above ``tol * sigma_max`` and the basis spans the leading
    left singular vectors. When the dense expansion does not fit the cap (or
    ``exact=False``) the orthonormalised span of the mode factors is returned
    instead, flagged ``superset=True``.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    space = v.space
    fits = space.size <= space.dense_cap
    if exact is None:
        exact = fits
    elif exact and not fits:
        space.check_cap()
    out = []
    if exact:
        x = to_dense(v).array
        for j in range(space.d):
            u, s, _ = np.linalg.svd(unfold(x, j), full_matrices=False)
            r = 0 if s.size == 0 or s[0] == 0 else int(np.sum(s > tol * s[0]))
            out.append(ModeSubspace(r, u[:, :r]))
        return out
    for j in range(space.d):
        F = v.factor_matrix(j)[:, v.coeffs != 0]
        if F.shape[1] == 0:
            out.append(ModeSubspace(0, np.zeros((space.dims[j], 0)), True))
            continue
        u, s, _ = np.linalg.svd(F, full_matrices=False)
        r = 0 if s[0] == 0 else int(np.sum(s > tol * s[0]))
        out.append(ModeSubspace(r, u[:, :r], True))
    return out
