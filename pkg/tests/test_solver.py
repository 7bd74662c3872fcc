import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from progpgd import (
    DegenerateTermError,
    NumericalFailure,
    RankOneTensor,
    SeparatedTensor,
    SolverConfig,
    StrategySchedule,
    TensorSpace,
    a_posteriori_bound,
    coeff_update,
    dim_update,
    identity_operator,
    make_lp_approx,
    make_quadratic,
    parse_schedule,
    pgd_solve,
    rank_one_correction,
)
from progpgd.solver import STOP_REASONS
from progpgd.tensor_core import as_array

from conftest import e
from test_functionals import lp4, penalized, plap, quad_laplacian


def identity_quad(X, weights=None):
    space = TensorSpace(X.shape, weights)
    return make_quadratic(identity_operator(space, X), space)


def sep_of(space, *pairs):
    return SeparatedTensor(space, [RankOneTensor(fs) for _, fs in pairs], [c for c, _ in pairs])


# -- schedules --------------------------------------------------------------

def test_parse_cyclic():
    s = parse_schedule("c*")
    assert s.cyclic and [s.symbol(m) for m in range(1, 5)] == ["c"] * 4
    s = parse_schedule("ccl*")
    assert [s.symbol(m) for m in range(1, 8)] == list("cclccl" + "c")


def test_parse_finite():
    s = parse_schedule("cr")
    assert not s.cyclic
    assert [s.symbol(m) for m in (1, 2, 3)] == ["c", "r", None]
    assert str(s) == "cr" and str(parse_schedule("lr*")) == "lr*"


@pytest.mark.parametrize("text,bad", [("x*", "x"), ("ccx", "x"), ("c**", "*"), ("*", "*")])
def test_parse_rejects_illegal(text, bad):
    with pytest.raises(ValueError, match=repr(bad)):
        parse_schedule(text)


def test_parse_rejects_empty():
    with pytest.raises(ValueError):
        parse_schedule("")
    with pytest.raises(ValueError):
        StrategySchedule(())


@given(st.text(alphabet="clr", min_size=1, max_size=6), st.booleans())
def test_parse_roundtrip(pattern, cyclic):
    text = pattern + ("*" if cyclic else "")
    s = parse_schedule(text)
    assert str(s) == text
    n = len(pattern)
    for m in range(1, 3 * n + 1):
        expect = pattern[(m - 1) % n] if cyclic or m <= n else None
        assert s.symbol(m) == expect


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_rank=0).validate()
    with pytest.raises(ValueError):
        SolverConfig(als_rel_tol=-1).validate()
    with pytest.raises(ValueError):
        SolverConfig(r_subspace="tucker").validate()
    with pytest.raises(ValueError):
        SolverConfig(r_subspace="dim_k", r_dim=3).validate(d=2)


# -- rank-one correction ----------------------------------------------------

def test_correction_recovers_rank_one_target():
    rng = np.random.default_rng(0)
    target = np.outer(rng.standard_normal(4), rng.standard_normal(5))
    J = make_lp_approx(target, 2.0, TensorSpace((4, 5)))
    z = rank_one_correction(J, SeparatedTensor.zeros(J.space))
    np.testing.assert_allclose(z.to_array(), target, atol=1e-10)
    assert J(SeparatedTensor.from_rank_one(J.space, z)) < 1e-20


def test_correction_dominant_singular_pair():
    X = np.diag([3.0, 1.0])
    J = make_lp_approx(X, 2.0, TensorSpace((2, 2)))
    z = rank_one_correction(J, SeparatedTensor.zeros(J.space))
    # ALS converges linearly; J is accurate to the sweep tolerance, factors to its root
    np.testing.assert_allclose(z.to_array(), [[3, 0], [0, 0]], atol=1e-5)
    assert J(z.to_array()) == pytest.approx(0.5, rel=1e-10)
    z = rank_one_correction(J, SeparatedTensor.zeros(J.space), SolverConfig(als_rel_tol=0.0))
    np.testing.assert_allclose(z.to_array(), [[3, 0], [0, 0]], atol=1e-7)


def test_correction_at_minimizer_is_zero():
    X = np.random.default_rng(1).standard_normal((3, 4))
    J = identity_quad(X)
    u = SeparatedTensor.from_dense(X, J.space)
    z = rank_one_correction(J, u)
    assert z.is_zero()


@pytest.mark.parametrize("factory", [lp4, penalized, plap, quad_laplacian])
def test_correction_block_stationarity(factory):
    J = factory()
    cfg = SolverConfig(als_rel_tol=1e-13)
    z = rank_one_correction(J, SeparatedTensor.zeros(J.space), cfg)
    Z = z.to_array()
    G = J.grad_dense(Z).array
    scale = 1 + abs(J(Z))
    # derivative along each single-factor perturbation direction
    for j in range(J.space.d):
        others = [f for k, f in enumerate(z.factors) if k != j]
        Gj = np.moveaxis(G, j, 0).reshape(J.space.dims[j], -1)
        rest = others[0]
        for f in others[1:]:
            rest = np.multiply.outer(rest, f)
        gj = Gj @ rest.ravel()
        assert np.linalg.norm(gj) * np.linalg.norm(z.factors[j]) <= 1e-5 * scale


def test_correction_improves_or_zero():
    J = lp4(seed=5)
    z = rank_one_correction(J, SeparatedTensor.zeros(J.space))
    assert J(z.to_array()) <= J(np.zeros(J.space.dims))


def test_correction_is_balanced():
    J = plap()
    z = rank_one_correction(J, SeparatedTensor.zeros(J.space))
    n = z.norms()
    assert np.ptp(n) <= 1e-12 * n.max()


# -- coefficient update -----------------------------------------------------

def test_coeff_update_orthonormal_terms():
    J = identity_quad(np.diag([3.0, 1.0]))
    c = coeff_update(J, [RankOneTensor([e(0), e(0)]), RankOneTensor([e(1), e(1)])])
    np.testing.assert_allclose(c, [3, 1], atol=1e-12)


def test_coeff_update_single_term_projection():
    J = quad_laplacian(2, (4, 5))
    rng = np.random.default_rng(0)
    z = RankOneTensor([rng.standard_normal(4), rng.standard_normal(5)])
    zs = SeparatedTensor.from_rank_one(J.space, z)
    c = coeff_update(J, [z])
    assert c[0] == pytest.approx(J.linear(zs) / J.bilinear(zs, zs), rel=1e-12)


def test_coeff_update_lp4_against_2d_oracle():
    J = lp4(seed=6)
    rng = np.random.default_rng(3)
    terms = [RankOneTensor([rng.standard_normal(3), rng.standard_normal(3)]) for _ in range(2)]
    c = coeff_update(J, terms)
    A = [t.to_array() for t in terms]
    f = lambda x: J(x[0] * A[0] + x[1] * A[1])  # noqa: E731
    ref = minimize(f, np.zeros(2), method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 20000})
    np.testing.assert_allclose(c, ref.x, atol=1e-6)


def test_coeff_update_degenerate_term_named():
    J = identity_quad(np.diag([3.0, 1.0, 2.0]))
    t0 = RankOneTensor([e(0, 3), e(0, 3)])
    t1 = RankOneTensor([e(1, 3), e(1, 3)])
    with pytest.raises(DegenerateTermError) as info:
        coeff_update(J, [t0, t1, t0.scaled(2.0)])
    assert info.value.index == 2
    with pytest.raises(DegenerateTermError) as info:
        coeff_update(J, [t0, RankOneTensor.zeros(J.space)])
    assert info.value.index == 1


def test_coeff_update_needs_terms():
    with pytest.raises(ValueError):
        coeff_update(lp4(), [])


# -- dimension update -------------------------------------------------------

def test_dim_update_fixed_point():
    J = identity_quad(np.diag([3.0, 1.0]))
    u = sep_of(J.space, (3.0, [e(0), e(0)]), (1.0, [e(1), e(1)]))
    v = dim_update(J, u, 1)
    np.testing.assert_allclose(as_array(v), as_array(u), atol=1e-14)


def test_dim_update_separable_exact():
    J = identity_quad(np.diag([3.0, 1.0]))
    u = sep_of(J.space, (1.0, [e(0), e(0)]), (1.0, [e(1), e(1)]))
    v = dim_update(J, u, 1)
    np.testing.assert_allclose(as_array(v), np.diag([3.0, 1.0]), atol=1e-12)
    assert J(v) == pytest.approx(-5.0, rel=1e-12)


def test_dim_update_plap_against_restricted_oracle():
    J = plap(seed=3)
    rng = np.random.default_rng(4)
    u = SeparatedTensor(J.space, [RankOneTensor([rng.standard_normal(5) for _ in range(2)])
                                  for _ in range(2)], [1.0, 1.0])
    v = dim_update(J, u, 2)
    assert J(v) <= J(u)
    # restricted oracle: unknown mode-2 factors, mode-1 factors fixed
    F1 = u.factor_matrix(0)

    def f(x):
        return J(F1 @ x.reshape(2, 5))

    def g(x):
        G = J.grad_dense(F1 @ x.reshape(2, 5)).array
        return (F1.T @ G).ravel()

    x0 = (u.factor_matrix(1) * u.coeffs).T.ravel()
    ref = minimize(f, x0, jac=g, method="BFGS", options={"gtol": 1e-12, "maxiter": 10000})
    assert J(v) - ref.fun <= 1e-6 * max(1.0, abs(ref.fun))
    assert ref.fun - J(v) <= 1e-6 * max(1.0, abs(ref.fun))


def test_dim_update_index_checked():
    J = lp4()
    u = SeparatedTensor.from_rank_one(J.space, RankOneTensor([np.ones(3), np.ones(3)]))
    with pytest.raises(ValueError):
        dim_update(J, u, 0)
    with pytest.raises(ValueError):
        dim_update(J, u, 3)
    with pytest.raises(ValueError):
        dim_update(J, SeparatedTensor.zeros(J.space), 1)


# -- a-posteriori bound -----------------------------------------------------

def test_bound_examples():
    assert a_posteriori_bound(0.0, 2, 1) == 0.0
    assert a_posteriori_bound(0.5, 2, 1) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        a_posteriori_bound(-1e-3, 2, 1)
    with pytest.raises(ValueError):
        a_posteriori_bound(1.0, 1.0, 1)


# -- full loop --------------------------------------------------------------

def test_svd_sigma_sequence():
    X = np.random.default_rng(0).standard_normal((20, 30))
    J = identity_quad(X)
    _, rep = pgd_solve(J, "c*", SolverConfig(max_rank=10))
    sv = np.linalg.svd(X, compute_uv=False)
    sig = np.array([r.sigma for r in rep.records])
    assert len(sig) == 10
    np.testing.assert_allclose(sig, sv[:10], rtol=1e-6 * sv[0] / sv[9])
    assert np.max(np.abs(sig - sv[:10])) / sv[0] <= 1e-6


@pytest.mark.parametrize("sched", ["c*", "ccl*", "r*", "l*", "clr*"])
def test_rank_one_target_stops_after_one_step(sched):
    rng = np.random.default_rng(2)
    X = np.multiply.outer(np.multiply.outer(rng.standard_normal(3), rng.standard_normal(4)),
                          rng.standard_normal(2))
    _, rep = pgd_solve(identity_quad(X), sched, SolverConfig(max_rank=5))
    assert rep.stop_reason == "exact_solution"
    assert len(rep.records) == 1


def test_finite_schedule_exhausted():
    J = identity_quad(np.random.default_rng(0).standard_normal((5, 5)))
    _, rep = pgd_solve(J, "cr", SolverConfig(max_rank=10))
    assert rep.stop_reason == "schedule_exhausted" and len(rep.records) == 2


def test_z_norm_tol_stop():
    J = identity_quad(np.random.default_rng(0).standard_normal((6, 6)))
    sv = np.linalg.svd(J.rhs_dense, compute_uv=False)
    _, rep = pgd_solve(J, "c*", SolverConfig(max_rank=6, zm_norm_tol=0.5 * (sv[1] + sv[2])))
    assert rep.stop_reason == "z_norm_tol" and len(rep.records) == 3


def test_stop_reason_values():
    J = identity_quad(np.random.default_rng(0).standard_normal((4, 4)))
    _, rep = pgd_solve(J, "c*", SolverConfig(max_rank=2))
    assert rep.stop_reason == "max_rank"
    assert set(STOP_REASONS) == {"max_rank", "stagnation", "z_norm_tol", "exact_solution",
                                 "schedule_exhausted"}


def test_full_rank_reaches_exact_solution():
    X = np.random.default_rng(0).standard_normal((4, 5))
    _, rep = pgd_solve(identity_quad(X), "c*", SolverConfig(max_rank=10))
    assert rep.stop_reason == "exact_solution"
    assert len(rep.records) == 4
    assert np.isfinite(rep.terminal_z_norm) and rep.terminal_z_norm < 1e-6


def test_lp4_3d_reaches_oracle():
    from progpgd import dense_minimize

    rng = np.random.default_rng(1)
    J = make_lp_approx(rng.uniform(-1, 1, (4, 4, 4)), 4.0, TensorSpace((4, 4, 4)))
    _, rep = pgd_solve(J, "ccl*", SolverConfig(max_rank=30, l_subspace="dim_sweep"))
    assert np.all(np.diff(rep.J_values) <= 1e-12 * rep.scale)
    J_star = dense_minimize(J).J
    assert rep.final_J - J_star <= 1e-3 * (rep.J0 - J_star)


def test_callback_sees_every_step():
    J = identity_quad(np.random.default_rng(0).standard_normal((5, 6)))
    seen = []
    u, rep = pgd_solve(J, "ccl*", SolverConfig(max_rank=4),
                       callback=lambda m, u, rec: seen.append((m, u.rank, rec.J_value)))
    assert [s[0] for s in seen] == [1, 2, 3, 4]
    assert [s[1] for s in seen] == [1, 2, 3, 4]
    assert seen[-1][2] == rep.final_J == pytest.approx(J(u))


def test_final_value_matches_returned_tensor():
    J = plap(seed=1)
    u, rep = pgd_solve(J, "ccl*", SolverConfig(max_rank=5))
    assert J(u) == pytest.approx(rep.final_J, rel=1e-10, abs=1e-14)


def test_numerical_failure_reports_step():
    J = lp4()

    class Exploding(type(J)):
        calls = 0

        def _value(self, X):
            Exploding.calls += 1
            return np.nan if Exploding.calls > 40 else super()._value(X)

    Jx = Exploding(J.target, 4.0, J.space)
    with pytest.raises(NumericalFailure) as info:
        pgd_solve(Jx, "c*", SolverConfig(max_rank=5))
    assert info.value.step is not None


def test_deterministic():
    J = penalized()
    cfg = SolverConfig(max_rank=5, seed=7)
    _, a = pgd_solve(J, "ccl*", cfg)
    _, b = pgd_solve(J, "ccl*", cfg)
    assert a.to_csv() == b.to_csv()


# -- invariants across families and schedules -------------------------------

FAMILIES = {"lp4": lp4, "quadratic": quad_laplacian, "penalized": penalized, "p_laplacian": plap,
            "identity": lambda: identity_quad(np.random.default_rng(3).standard_normal((5, 6)))}


def check_invariants(J, rep, slack=1e-10):
    Js = rep.J_values
    scale = rep.scale
    assert [r.m for r in rep.records] == list(range(1, len(rep.records) + 1))
    assert np.all(np.diff(Js) <= 1e-12 * scale), "J increased"
    for r, dec in zip(rep.records, -np.diff(Js)):
        assert dec >= J.alpha / J.s * r.z_norm**J.s - slack * scale, f"step {r.m}"
        assert r.J_decrease == pytest.approx(dec, abs=1e-14 * scale)
        if r.als_converged:
            assert r.euler_residual <= 1e-6 * (1 + abs(r.J_value)), f"step {r.m}"
    assert rep.sum_zs <= J.s / J.alpha * (rep.J0 - rep.final_J) + 1e-8 * scale
    assert rep.stop_reason in STOP_REASONS


@pytest.mark.parametrize("name", list(FAMILIES))
@pytest.mark.parametrize("sched", ["c*", "ccl*", "r*", "l*", "clr*"])
def test_invariants(name, sched):
    J = FAMILIES[name]()
    _, rep = pgd_solve(J, sched, SolverConfig(max_rank=6))
    check_invariants(J, rep)


@pytest.mark.parametrize("name", ["lp4", "p_laplacian", "penalized"])
@pytest.mark.parametrize("l_sub,r_sub", [("dim_sweep", "dim_k"), ("span_all_terms", "dim_k")])
def test_invariants_other_subspaces(name, l_sub, r_sub):
    J = FAMILIES[name]()
    cfg = SolverConfig(max_rank=6, l_subspace=l_sub, r_subspace=r_sub, r_dim=2)
    for sched in ("ccl*", "r*"):
        _, rep = pgd_solve(J, sched, cfg)
        check_invariants(J, rep)


@settings(max_examples=15)
@given(seed=st.integers(0, 10_000), name=st.sampled_from(["lp4", "penalized", "p_laplacian"]),
       sched=st.sampled_from(["c*", "ccl*", "r*", "lr*"]))
def test_invariants_random_seeds(seed, name, sched):
    J = FAMILIES[name]()
    _, rep = pgd_solve(J, sched, SolverConfig(max_rank=4, seed=seed, multistarts=1))
    check_invariants(J, rep)


@pytest.mark.parametrize("name", list(FAMILIES))
def test_r_scaling_stationary(name):
    J = FAMILIES[name]()
    snaps = []
    pgd_solve(J, "r*", SolverConfig(max_rank=4),
              callback=lambda m, u, rec: snaps.append(as_array(u)))
    prev = np.zeros(J.space.dims)
    for U in snaps:
        Z = U - prev
        # d/dt J(prev + t Z) at t = 1, relative to the curvature scale
        slope = J.grad_action(U, Z)
        curv = J.grad_action(prev + 2 * Z, Z) - J.grad_action(prev, Z)
        assert abs(slope) <= 1e-8 * max(abs(curv), 1e-300) + 1e-12
        prev = U


@pytest.mark.parametrize("name", ["identity", "quadratic"])
def test_l_dominates_c_at_equal_rank(name):
    J = FAMILIES[name]()
    _, rep = pgd_solve(J, "ccl*", SolverConfig(max_rank=6, als_rel_tol=1e-14))
    for r in rep.records:
        assert r.J_value <= r.J_hat + 1e-12 * rep.scale
        if r.symbol == "l":
            assert r.J_value <= r.J_hat


@pytest.mark.parametrize("weights_seed", [None, 5])
def test_parseval_identity(weights_seed):
    rng = np.random.default_rng(11)
    X = rng.standard_normal((7, 9))
    w = None if weights_seed is None else [np.random.default_rng(weights_seed).uniform(0.5, 2, n)
                                           for n in (7, 9)]
    J = identity_quad(X, w)
    snaps = []
    _, rep = pgd_solve(J, "c*", SolverConfig(max_rank=7),
                       callback=lambda m, u, rec: snaps.append(as_array(u)))
    total = J.norm(X) ** 2
    cum = np.cumsum([r.sigma**2 for r in rep.records])
    for U, c in zip(snaps, cum):
        assert J.norm(X - U) ** 2 == pytest.approx(total - c, abs=1e-8 * total)


def test_bound_dominates_error_identity():
    X = np.random.default_rng(4).standard_normal((8, 10))
    J = identity_quad(X)
    J_star = J(X)
    snaps = []
    _, rep = pgd_solve(J, "c*", SolverConfig(max_rank=8),
                       callback=lambda m, u, rec: snaps.append(as_array(u)))
    for U, r in zip(snaps, rep.records):
        err = J.norm(X - U)
        bound = a_posteriori_bound(max(r.J_value - J_star, 0), 2, 1)
        assert bound >= err * (1 - 1e-8) - 1e-12 * J.norm(X)
