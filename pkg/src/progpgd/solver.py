"""Progressive PGD: greedy rank-one corrections with optional updates.

Starting from ``u_0 = 0``, step ``m`` finds the best rank-one correction

    z_hat_m = argmin_{z rank one} J(u_{m-1} + z)

by alternating minimisation over the factors, then applies the strategy
symbol for that step:

``c``
    ``u_m = u_{m-1} + z_hat_m``.
``l``
    append ``z_hat_m`` and re-minimise over a subspace containing the new
    iterate: the span of all terms (coefficient update) or one sweep of
    mode-wise factor updates.
``r``
    re-minimise the correction itself over a subspace containing
    ``z_hat_m`` (its span, i.e. the optimal scaling, or its mode-``k``
    factor) before adding it.
"""
from __future__ import annotations

import re
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from ._newton import damped_newton
from .tensor_core import RankOneTensor, SeparatedTensor, as_array, outer

STOP_REASONS = ("max_rank", "stagnation", "z_norm_tol", "exact_solution", "schedule_exhausted")


class NumericalFailure(RuntimeError):
    """A subproblem produced non-finite values."""

    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"step {step}: {msg}")
        self.step = step


class DegenerateTermError(ValueError):
    def __init__(self, index, msg=""):
        super().__init__(msg or f"term {index} is linearly dependent on the others")
        self.index = index


# ---------------------------------------------------------------------------
# schedules and configuration

_SCHEDULE_RE = re.compile(r"^([clr]+)(\*?)$")


@dataclass(frozen=True)
class StrategySchedule:
    pattern: tuple
    cyclic: bool = True

    def __post_init__(self):
        if not self.pattern or any(s not in "clr" for s in self.pattern):
            raise ValueError(f"invalid strategy pattern {self.pattern!r}")

    def symbol(self, m: int) -> Optional[str]:
        """Symbol of step ``m`` (1-based); ``None`` once a finite schedule is used up."""
        if self.cyclic:
            return self.pattern[(m - 1) % len(self.pattern)]
        return self.pattern[m - 1] if m <= len(self.pattern) else None

    def __str__(self):
        return "".join(self.pattern) + ("*" if self.cyclic else "")


def parse_schedule(text: str) -> StrategySchedule:
    """Parse ``"c*"``, ``"ccl*"``, ``"cr"`` ... A trailing ``*`` repeats the pattern forever."""
    text = text.strip()
    match = _SCHEDULE_RE.match(text)
    if not match:
        bad = sorted({ch for ch in text if ch not in "clr*"}) or ["*"]
        if not text:
            raise ValueError("empty schedule")
        raise ValueError(f"invalid schedule {text!r}: illegal symbol {bad[0]!r} "
                         "(allowed: c, l, r and a trailing *)")
    return StrategySchedule(tuple(match.group(1)), cyclic=bool(match.group(2)))


@dataclass
class SolverConfig:
    max_rank: int = 10
    als_max_sweeps: int = 200
    als_rel_tol: float = 1e-10
    multistarts: int = 3
    seed: int = 0
    outer_stagnation_tol: float = 1e-12
    zm_norm_tol: float = 0.0
    r_subspace: str = "span_zhat"  # or "dim_k"
    r_dim: int = 1  # 1-based dimension for r_subspace="dim_k"
    l_subspace: str = "span_all_terms"  # or "dim_sweep"
    inner_solver: str = "auto"  # exact_linear | damped_newton | gradient_backtracking
    inner_max_iter: int = 50

    def validate(self, d: Optional[int] = None):
        if self.max_rank < 1 or self.als_max_sweeps < 1 or self.multistarts < 1:
            raise ValueError("max_rank, als_max_sweeps and multistarts must be >= 1")
        for name in ("als_rel_tol", "outer_stagnation_tol", "zm_norm_tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.r_subspace not in ("span_zhat", "dim_k"):
            raise ValueError(f"unknown r_subspace {self.r_subspace!r}")
        if self.l_subspace not in ("span_all_terms", "dim_sweep"):
            raise ValueError(f"unknown l_subspace {self.l_subspace!r}")
        if self.inner_solver not in ("auto", "exact_linear", "damped_newton", "gradient_backtracking"):
            raise ValueError(f"unknown inner_solver {self.inner_solver!r}")
        if d is not None and not 1 <= self.r_dim <= d:
            raise ValueError(f"r_dim must be in 1..{d}")
        return self


# ---------------------------------------------------------------------------
# reports


@dataclass
class IterationRecord:
    m: int
    symbol: str
    J_value: float
    J_decrease: float
    z_norm: float
    euler_residual: float
    sigma: Optional[float]
    sweeps_used: int
    wall_time: float
    J_hat: float = float("nan")  # J(u_{m-1} + z_hat_m), the value a c step would give
    als_converged: bool = True


@dataclass
class ConvergenceReport:
    records: list
    stop_reason: str
    final_J: float
    sum_zs: float
    J0: float
    s: float
    alpha: float
    terminal_z_norm: float = float("nan")  # norm of the correction computed at the stopping step

    @property
    def J_values(self) -> np.ndarray:
        return np.array([self.J0] + [r.J_value for r in self.records])

    @property
    def scale(self) -> float:
        J = self.J_values
        return float(max(np.max(np.abs(J)), J[0] - J[-1], np.finfo(float).tiny))

    def to_csv(self, timings: bool = False) -> str:
        from .io import report_to_csv

        return report_to_csv(self, timings=timings)

    def to_json(self) -> dict:
        """Plain-JSON summary; NaN fields become ``None``."""
        return _json_safe({
            "stop_reason": self.stop_reason,
            "final_J": self.final_J,
            "sum_zs": self.sum_zs,
            "J0": self.J0,
            "s": self.s,
            "alpha": self.alpha,
            "terminal_z_norm": self.terminal_z_norm,
            "records": [asdict(r) for r in self.records],
        })


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def a_posteriori_bound(J_gap: float, s: float, alpha: float) -> float:
    """Upper bound ``(s * gap / alpha)^(1/s)`` on ``||u - v||`` given ``J(v) - J(u) = gap``."""
    if J_gap < 0:
        raise ValueError(f"J gap must be nonnegative, got {J_gap}")
    if not s > 1 or not alpha > 0:
        raise ValueError("need s > 1 and alpha > 0")
    return (s * J_gap / alpha) ** (1.0 / s)


# ---------------------------------------------------------------------------
# subproblem engines


def _solve_spd(H, rhs):
    tr = np.trace(H)
    if not np.isfinite(tr) or not np.all(np.isfinite(rhs)):
        raise NumericalFailure("non-finite linear system")
    if tr <= 0:
        return np.zeros_like(rhs)
    for ridge in (0.0, 1e-12 * tr / len(H)):
        try:
            c = linalg.cho_factor(H + ridge * np.eye(len(H)), check_finite=False)
            return linalg.cho_solve(c, rhs, check_finite=False)
        except linalg.LinAlgError:
            continue
    return np.linalg.lstsq(H, rhs, rcond=None)[0]


class _Engine:
    """Minimisation of ``J`` over affine families ``base + sum_i x_i Phi_i``."""

    def __init__(self, J, cfg: SolverConfig):
        self.J = J
        self.cfg = cfg

    def _check(self, value):
        if not np.isfinite(value):
            raise NumericalFailure(f"non-finite J value {value}")
        return value


class _QuadraticEngine(_Engine):
    """Separated-format solves for ``J = a(v,v)/2 - l(v)``; nothing is expanded."""

    def handle(self, u: SeparatedTensor):
        return u

    def value(self, base, terms=(), coeffs=None):
        v = base
        for t, c in zip(terms, coeffs if coeffs is not None else np.ones(len(terms))):
            v = v.append(t, c)
        return self._check(self.J.value(v))

    def grad_action(self, base, z: RankOneTensor):
        zz = SeparatedTensor.from_rank_one(base.space, z)
        return self.J.grad_action(base + zz, zz)

    def slot_system(self, base: SeparatedTensor, cols, k):
        """Hessian and gradient at 0 for ``x -> J(base + sum_i Phi_i(x_i))``.

        ``Phi_i(x)`` is the rank-one tensor with factor ``k`` equal to ``x``
        and the other factors taken from column ``i`` of ``cols[l]``.
        Unknowns are ordered term-major.
        """
        J = self.J
        d = J.space.d
        m = cols[(k + 1) % d].shape[1]
        nk = J.space.dims[k]
        H = np.zeros((m * nk, m * nk))
        R = np.zeros((nk, m))
        others = [l for l in range(d) if l != k]
        for mats in J.form_mats:
            G = np.ones((m, m))
            for l in others:
                G *= cols[l].T @ mats[l] @ cols[l]
            H += np.kron(G, mats[k])
            if base.rank:
                P = np.ones((m, base.rank))
                for l in others:
                    P *= cols[l].T @ mats[l] @ base.factor_matrix(l)
                R += (mats[k] @ base.factor_matrix(k)) @ (base.coeffs[:, None] * P.T)
        f = J.rhs
        if f.rank:
            Q = np.ones((m, f.rank))
            for l in others:
                Q *= cols[l].T @ (J.space.weights[l][:, None] * f.factor_matrix(l))
            R -= (J.space.weights[k][:, None] * f.factor_matrix(k)) @ (f.coeffs[:, None] * Q.T)
        return 0.5 * (H + H.T), R.T.ravel()

    def slot_minimize(self, base, cols, k, X0, J_base=None):
        H, g0 = self.slot_system(base, cols, k)
        x = _solve_spd(H, -g0)
        if J_base is None:
            J_base = self.J.value(base)
        delta = 0.5 * x @ H @ x + g0 @ x
        return x.reshape(X0.shape[1], X0.shape[0]).T, self._check(J_base + delta)

    def span_system(self, base, terms):
        J = self.J
        v = SeparatedTensor(J.space, terms)
        H = sum(_gram(v, v, mats) for mats in J.form_mats)
        g0 = np.zeros(len(terms))
        if base.rank:
            g0 += sum(_gram(base, v, mats) for mats in J.form_mats) @ base.coeffs
        if J.rhs.rank:
            g0 -= _gram(J.rhs, v, None) @ J.rhs.coeffs
        return 0.5 * (H + H.T), g0

    def span_minimize(self, base, terms, c0):
        H, g0 = self.span_system(base, terms)
        c = _solve_spd(H, -g0)
        return c, self._check(self.J.value(base) + 0.5 * c @ H @ c + g0 @ c)

    def gram(self, terms):
        return self.span_system(SeparatedTensor.zeros(self.J.space), terms)[0]


def _gram(v, w, mats):
    from .tensor_core import _gram_factors

    return _gram_factors(v, w, mats)


class _DenseEngine(_Engine):
    """Damped Newton on dense arrays; used for every non-quadratic functional."""

    def __init__(self, J, cfg):
        super().__init__(J, cfg)
        J.space.check_cap()
        inner = cfg.inner_solver
        self.exact = inner == "exact_linear"
        self.use_hessian = inner != "gradient_backtracking"
        self.max_iter = cfg.inner_max_iter if self.use_hessian else 50 * cfg.inner_max_iter

    def handle(self, u: SeparatedTensor):
        return as_array(u)

    def value(self, base, terms=(), coeffs=None):
        X = base
        for t, c in zip(terms, coeffs if coeffs is not None else np.ones(len(terms))):
            X = X + c * t.to_array()
        return self._check(float(self.J._value(X)))

    def grad_action(self, base, z: RankOneTensor):
        Z = z.to_array()
        return float(np.sum(self.J._gradient(base + Z) * Z))

    def _minimize(self, base, B, x0):
        J = self.J
        k = B.shape[0]
        Bf = B.reshape(k, -1)

        def tensor(x):
            return base + (x @ Bf).reshape(base.shape)

        def phi(x):
            return J._value(tensor(x))

        def grad(x):
            return Bf @ J._gradient(tensor(x)).ravel()

        def hess(x):
            return J._hess_project(tensor(x), B)

        try:
            res = damped_newton(phi, grad, hess, x0, max_iter=self.max_iter, exact=self.exact,
                                use_hessian=self.use_hessian)
        except FloatingPointError as exc:
            raise NumericalFailure(str(exc)) from None
        return res.x, self._check(float(res.fun))

    def slot_basis(self, cols, k):
        dims = self.J.space.dims
        d = len(dims)
        m = cols[(k + 1) % d].shape[1]
        eye = np.eye(dims[k])
        blocks = []
        for i in range(m):
            T = outer([cols[l][:, i] for l in range(d) if l != k])
            blocks.append(np.moveaxis(np.multiply.outer(eye, T), 1, k + 1))
        return np.concatenate(blocks, axis=0)

    def slot_minimize(self, base, cols, k, X0, J_base=None):
        B = self.slot_basis(cols, k)
        x, val = self._minimize(base, B, X0.T.ravel())
        return x.reshape(X0.shape[1], X0.shape[0]).T, val

    def span_minimize(self, base, terms, c0):
        B = np.stack([t.to_array() for t in terms])
        return self._minimize(base, B, np.asarray(c0, float))

    def gram(self, terms):
        v = SeparatedTensor(self.J.space, terms)
        return _gram(v, v, None)


def _engine(J, cfg: SolverConfig) -> _Engine:
    if getattr(J, "is_quadratic", False) and hasattr(J, "form_mats"):
        if cfg.inner_solver in ("auto", "exact_linear"):
            return _QuadraticEngine(J, cfg)
    if cfg.inner_solver == "exact_linear":
        raise ValueError("inner_solver 'exact_linear' is only valid for quadratic functionals")
    return _DenseEngine(J, cfg)


# ---------------------------------------------------------------------------
# rank-one correction


@dataclass
class Correction:
    term: RankOneTensor
    J_value: float
    sweeps: int
    converged: bool
    zero: bool
    start: int = -1


def _als(engine, base, J_base, factors, cfg):
    """Alternating block minimisation of ``J(base + w1 (x) ... (x) wd)``."""
    d = len(factors)
    J_cur = engine.value(base, [RankOneTensor(factors)])
    for sweep in range(1, cfg.als_max_sweeps + 1):
        J_start = J_cur
        for j in range(d):
            cols = [f[:, None] for f in factors]
            X, J_cur = engine.slot_minimize(base, cols, j, cols[j], J_base)
            factors[j] = X[:, 0]
            if not np.any(factors[j]):
                return RankOneTensor.zeros(engine.J.space), J_base, sweep, True
        factors = list(RankOneTensor(factors).balanced().factors)
        scale = max(abs(J_base), abs(J_cur), abs(J_start), np.finfo(float).tiny)
        if abs(J_start - J_cur) <= cfg.als_rel_tol * scale:
            return RankOneTensor(factors), J_cur, sweep, True
    return RankOneTensor(factors), J_cur, cfg.als_max_sweeps, False


def _best_correction(engine, base, J_base, cfg, rng) -> Correction:
    space = engine.J.space
    best = None
    for start in range(cfg.multistarts):
        init = RankOneTensor([rng.uniform(-1, 1, n) for n in space.dims]).balanced()
        z, val, sweeps, conv = _als(engine, base, J_base, list(init.factors), cfg)
        # ties within 1e-14 keep the earlier start
        if best is None or val < best.J_value - 1e-14 * max(abs(val), 1.0):
            best = Correction(z, val, sweeps, conv, z.is_zero(), start)
    if best.J_value > J_base:
        best = Correction(RankOneTensor.zeros(space), J_base, best.sweeps, best.converged, True)
    return best


def rank_one_correction(J, u_prev: SeparatedTensor, cfg: SolverConfig | None = None,
                        step: int = 1) -> RankOneTensor:
    """Best rank-one ``z`` for ``J(u_prev + z)`` over ``cfg.multistarts`` seeded starts.

    Returns the zero tensor when no start improves on ``J(u_prev)``.
    """
    cfg = (cfg or SolverConfig()).validate(J.space.d)
    engine = _engine(J, cfg)
    base = engine.handle(u_prev)
    rng = np.random.default_rng([cfg.seed, step])
    return _best_correction(engine, base, engine.value(base), cfg, rng).term


# ---------------------------------------------------------------------------
# updates


def _check_gram(G):
    """Raise :class:`DegenerateTermError` when the terms are numerically dependent.

    The test runs on the unit-diagonal Gram matrix; a smallest eigenvalue
    below the ridge ``1e-12 * trace`` cannot be rescued by jitter.
    """
    diag = np.diag(G).copy()
    for i, g in enumerate(diag):
        if not g > 0:
            raise DegenerateTermError(i, f"term {i} has zero norm")
    Dm = 1 / np.sqrt(diag)
    C = Dm[:, None] * G * Dm[None, :]
    tol = 1e-12 * len(C)
    if np.linalg.eigvalsh(C)[0] > tol:
        return
    # first leading block that is singular names the culprit
    for i in range(2, len(C) + 1):
        if np.linalg.eigvalsh(C[:i, :i])[0] <= tol:
            raise DegenerateTermError(i - 1)
    raise DegenerateTermError(len(C) - 1)  # pragma: no cover


def _coeff_update(engine, terms, c0):
    _check_gram(engine.gram(list(terms)))
    zero = engine.handle(SeparatedTensor.zeros(engine.J.space))
    return engine.span_minimize(zero, list(terms), c0)


def coeff_update(J, terms, cfg: SolverConfig | None = None) -> np.ndarray:
    """Coefficients minimising ``J`` over ``span(terms)``."""
    terms = list(terms)
    if not terms:
        raise ValueError("coeff_update needs at least one term")
    cfg = (cfg or SolverConfig()).validate()
    engine = _engine(J, cfg)
    c, _ = _coeff_update(engine, terms, np.ones(len(terms)))
    return c


def _dim_update(engine, u: SeparatedTensor, k, base):
    space = u.space
    cols = [u.factor_matrix(l) for l in range(space.d)]
    X0 = cols[k] * u.coeffs[None, :]
    J_old = engine.value(base, u.terms, u.coeffs)
    X, J_new = engine.slot_minimize(base, cols, k, X0)
    if not J_new < J_old:
        return u, J_old
    terms = []
    for i in range(u.rank):
        fs = [cols[l][:, i] if l != k else X[:, i] for l in range(space.d)]
        terms.append(RankOneTensor(fs).balanced())
    return SeparatedTensor(space, terms), J_new


def dim_update(J, u: SeparatedTensor, k: int, cfg: SolverConfig | None = None,
               base: SeparatedTensor | None = None) -> SeparatedTensor:
    """Jointly re-optimise the mode-``k`` factors (``k`` is 1-based) of all terms of ``u``.

    The other factors stay fixed; coefficients are folded into the new
    factors. ``J(base + u)`` never increases. ``base`` defaults to zero.
    """
    if not 1 <= k <= u.space.d:
        raise ValueError(f"dimension index {k} out of range 1..{u.space.d}")
    if u.rank == 0:
        raise ValueError("dim_update needs at least one term")
    cfg = (cfg or SolverConfig()).validate()
    engine = _engine(J, cfg)
    b = engine.handle(base if base is not None else SeparatedTensor.zeros(u.space))
    return _dim_update(engine, u, k - 1, b)[0]


# ---------------------------------------------------------------------------
# main loop


def pgd_solve(J, schedule: StrategySchedule | str = "c*", cfg: SolverConfig | None = None,
              callback=None):
    """Run the progressive PGD.

    Returns ``(u_m, report)`` where ``u_m`` is a :class:`SeparatedTensor` and
    ``report`` a :class:`ConvergenceReport`. ``callback(m, u_m, record)`` is
    invoked after every step when given.

    Pure ``c`` or ``r`` schedules with ``s > 2`` (``L^p`` with ``p > 2``, the
    p-Laplacian) are run without any convergence guarantee; include ``l``
    steps for those.
    """
    if isinstance(schedule, str):
        schedule = parse_schedule(schedule)
    cfg = (cfg or SolverConfig()).validate(J.space.d)
    engine = _engine(J, cfg)
    space = J.space
    quadratic = getattr(J, "is_quadratic", False)

    u = SeparatedTensor.zeros(space)
    J0 = engine.value(engine.handle(u))
    J_prev = J0
    records = []
    sum_zs = 0.0
    stop = "max_rank"
    terminal = float("nan")
    for m in range(1, cfg.max_rank + 1):
        sym = schedule.symbol(m)
        if sym is None:
            stop = "schedule_exhausted"
            break
        t0 = time.perf_counter()
        base = engine.handle(u)
        rng = np.random.default_rng([cfg.seed, m])
        try:
            corr = _best_correction(engine, base, J_prev, cfg, rng)
        except NumericalFailure as exc:
            raise NumericalFailure(str(exc), step=m) from exc
        scale = max(abs(J0), abs(J_prev), J0 - corr.J_value, np.finfo(float).tiny)
        dec_hat = J_prev - corr.J_value
        if corr.zero or dec_hat <= cfg.outer_stagnation_tol * scale:
            exact = corr.zero or dec_hat <= 64 * np.finfo(float).eps * scale
            stop = "exact_solution" if exact else "stagnation"
            terminal = J.norm(SeparatedTensor.from_rank_one(space, corr.term))
            break

        z_hat = corr.term
        try:
            if sym == "c":
                z = z_hat
                u_new = u.append(z_hat)
                J_new = corr.J_value
            elif sym == "l":
                z = z_hat
                u_new, J_new = _l_update(engine, u.append(z_hat), corr.J_value, cfg)
            else:
                z, J_r = _r_update(engine, base, z_hat, corr.J_value, cfg)
                u_new = u.append(z)
                J_new = J_r
        except NumericalFailure as exc:
            raise NumericalFailure(str(exc), step=m) from exc

        z_norm = J.norm(SeparatedTensor.from_rank_one(space, z))
        euler = abs(engine.grad_action(base, z))
        sum_zs += z_norm**J.s
        rec = IterationRecord(
            m=m, symbol=sym, J_value=J_new, J_decrease=J_prev - J_new, z_norm=z_norm,
            euler_residual=euler, sigma=z_norm if quadratic else None,
            sweeps_used=corr.sweeps, wall_time=time.perf_counter() - t0,
            J_hat=corr.J_value, als_converged=corr.converged,
        )
        records.append(rec)
        terminal = z_norm
        u, J_prev = u_new, J_new
        if callback is not None:
            callback(m, u, rec)
        if z_norm <= cfg.zm_norm_tol:
            stop = "z_norm_tol"
            break
    report = ConvergenceReport(records, stop, J_prev, sum_zs, J0, J.s, J.alpha, terminal)
    return u, report


def _l_update(engine, v: SeparatedTensor, J_v, cfg):
    if cfg.l_subspace == "span_all_terms":
        try:
            c, J_new = _coeff_update(engine, v.terms, v.coeffs)
        except DegenerateTermError:
            return v, J_v
        if J_new < J_v:
            return v.with_coeffs(c), J_new
        return v, J_v
    J_cur = J_v
    zero = engine.handle(SeparatedTensor.zeros(v.space))
    for k in range(v.space.d):
        v, J_cur = _dim_update(engine, v, k, zero)
    return v, J_cur


def _r_update(engine, base, z_hat, J_hat, cfg):
    if cfg.r_subspace == "span_zhat":
        c, J_new = engine.span_minimize(base, [z_hat], np.ones(1))
        if J_new < J_hat:
            return z_hat.scaled(float(c[0])), J_new
        return z_hat, J_hat
    single = SeparatedTensor.from_rank_one(engine.J.space, z_hat)
    v, J_new = _dim_update(engine, single, cfg.r_dim - 1, base)
    if J_new < J_hat:
        return v.terms[0].scaled(float(v.coeffs[0])), J_new
    return z_hat, J_hat
