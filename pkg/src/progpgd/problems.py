"""Build functionals from JSON-style problem descriptions.

Used by the command line front-end; handy in scripts too::

    J, info = build_problem({"type": "quadratic", "dims": [20, 30],
                             "operator": "identity",
                             "rhs": {"kind": "random", "seed": 1}})
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .functionals import (
    PenaltySpec,
    PLaplacianSpec,
    QuadraticOperatorSpec,
    identity_operator,
    laplacian_operator,
    make_lp_approx,
    make_p_laplacian,
    make_penalized,
    make_quadratic,
)
from .io import load_dense, load_matrix_csv, load_separated
from .tensor_core import RankOneTensor, SeparatedTensor, TensorSpace, as_array

PROBLEM_TYPES = ("lp_approx", "quadratic", "penalized", "p_laplacian")

GENERATOR_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["random", "random_cp", "rank_one", "constant", "sine_bump", "file"]},
        "seed": {"type": "integer"},
        "scale": {"type": "number"},
        "rank": {"type": "integer", "minimum": 1},
        "value": {"type": "number"},
        "amplitude": {"type": "number"},
        "offset": {"type": "number"},
        "path": {"type": "string"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

PROBLEM_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"enum": list(PROBLEM_TYPES)},
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
        "weights": {
            "oneOf": [
                {"enum": ["uniform", "grid"]},
                {"type": "object", "properties": {"files": {"type": "array", "items": {"type": "string"}}},
                 "required": ["files"], "additionalProperties": False},
            ]
        },
        "lengths": {"type": "number", "exclusiveMinimum": 0},
        "p": {"type": "number"},
        "operator": {
            "oneOf": [
                {"enum": ["identity", "laplacian"]},
                {"type": "object",
                 "properties": {"files": {"type": "array",
                                          "items": {"type": "array", "items": {"type": "string"}}}},
                 "required": ["files"], "additionalProperties": False},
            ]
        },
        "shift": {"type": "number"},
        "target": GENERATOR_SCHEMA,
        "rhs": GENERATOR_SCHEMA,
        "obstacle": GENERATOR_SCHEMA,
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "epsilons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "dense_cap": {"type": "integer", "minimum": 1},
    },
    "required": ["type", "dims"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


@dataclass
class Problem:
    J: object
    kind: str
    space: TensorSpace
    params: dict
    target: np.ndarray | None = None  # exact minimiser when known in closed form
    extras: dict = field(default_factory=dict)

    @property
    def identity_quadratic(self) -> bool:
        return self.kind == "quadratic" and self.params.get("operator", "identity") == "identity"


def _resolve(base_dir, p):
    p = Path(p)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def generate(gen: dict, space: TensorSpace, base_dir=None):
    """Dense array or separated tensor described by a generator spec."""
    kind = gen["kind"]
    rng = np.random.default_rng(gen.get("seed", 0))
    scale = gen.get("scale", 1.0)
    dims = space.dims
    if kind == "random":
        return scale * rng.uniform(-1, 1, dims)
    if kind == "random_cp":
        r = gen.get("rank", 3)
        terms = [RankOneTensor([rng.uniform(-1, 1, n) for n in dims]) for _ in range(r)]
        return SeparatedTensor(space, terms, scale * np.ones(r))
    if kind == "rank_one":
        return SeparatedTensor.from_rank_one(
            space, RankOneTensor([rng.uniform(-1, 1, n) for n in dims]), scale)
    if kind == "constant":
        return SeparatedTensor.from_rank_one(
            space, RankOneTensor([np.ones(n) for n in dims]), gen.get("value", 1.0))
    if kind == "sine_bump":
        fs = [np.sin(np.pi * np.arange(1, n + 1) / (n + 1)) for n in dims]
        bump = gen.get("amplitude", 1.0) * SeparatedTensor.from_rank_one(space, RankOneTensor(fs))
        return as_array(bump) + gen.get("offset", 0.0)
    if kind == "file":
        path = _resolve(base_dir, gen["path"])
        if path.suffix == ".json":
            return load_separated(path, space)
        return load_dense(path, space).array
    raise ConfigError(f"unknown generator kind {kind!r}")


def build_space(params: dict, base_dir=None) -> TensorSpace:
    dims = tuple(params["dims"])
    weights = params.get("weights", "grid" if params["type"] == "p_laplacian" else "uniform")
    lengths = params.get("lengths", 1.0)
    kw = {"dense_cap": params["dense_cap"]} if "dense_cap" in params else {}
    if weights == "uniform":
        return TensorSpace(dims, **kw)
    if weights == "grid":
        return TensorSpace(dims, [np.full(n, lengths / (n + 1)) for n in dims], **kw)
    files = weights["files"]
    if len(files) != len(dims):
        raise ConfigError("one weight file per dimension is required")
    return TensorSpace(dims, [np.loadtxt(_resolve(base_dir, f), delimiter=",").ravel()
                              for f in files], **kw)


def _operator(params, space, rhs, base_dir):
    op = params.get("operator", "identity")
    if op == "identity":
        return identity_operator(space, rhs)
    if op == "laplacian":
        return laplacian_operator(space, rhs, params.get("lengths", 1.0), params.get("shift", 0.0))
    terms = [[load_matrix_csv(_resolve(base_dir, f)) for f in term] for term in op["files"]]
    return QuadraticOperatorSpec(terms, rhs)


def build_problem(params: dict, base_dir=None, epsilon: float | None = None) -> Problem:
    """Functional described by a ``problem`` config block."""
    kind = params["type"]
    space = build_space(params, base_dir)
    try:
        if kind == "lp_approx":
            if "target" not in params:
                raise ConfigError("lp_approx needs a 'target' generator")
            target = as_array(generate(params["target"], space, base_dir))
            J = make_lp_approx(target, params.get("p", 4.0), space)
            return Problem(J, kind, space, params, target)
        if kind in ("quadratic", "penalized"):
            rhs = generate(params["rhs"], space, base_dir) if "rhs" in params else None
            J = make_quadratic(_operator(params, space, rhs, base_dir), space)
            target = None
            if params.get("operator", "identity") == "identity" and rhs is not None:
                target = as_array(rhs, space)
            if kind == "quadratic":
                return Problem(J, kind, space, params, target)
            if "obstacle" not in params:
                raise ConfigError("penalized needs an 'obstacle' generator")
            eps = epsilon if epsilon is not None else params.get("epsilon", 1e-2)
            g = as_array(generate(params["obstacle"], space, base_dir), space)
            P = make_penalized(J, PenaltySpec(g, eps))
            return Problem(P, kind, space, params, None, {"base": J})
        if kind == "p_laplacian":
            src = generate(params["rhs"], space, base_dir) if "rhs" in params else None
            spec = PLaplacianSpec.uniform_grid(space, params.get("p", 3.0), src,
                                               params.get("lengths", 1.0))
            return Problem(make_p_laplacian(spec, space), kind, space, params)
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown problem type {kind!r}")
