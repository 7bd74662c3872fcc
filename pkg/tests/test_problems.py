import numpy as np
import pytest

from progpgd import TensorSpace
from progpgd.functionals import LpApproximation, PenalizedFunctional, PLaplacian, QuadraticFunctional
from progpgd.io import save_dense, save_separated
from progpgd.problems import ConfigError, build_problem, build_space, generate
from progpgd.tensor_core import DenseTensor, RankOneTensor, SeparatedTensor, as_array


def test_build_each_type():
    base = {"dims": [4, 5]}
    J = build_problem({**base, "type": "lp_approx", "target": {"kind": "random"}}).J
    assert isinstance(J, LpApproximation) and J.p == 4.0
    J = build_problem({**base, "type": "quadratic", "rhs": {"kind": "random_cp", "rank": 2}}).J
    assert isinstance(J, QuadraticFunctional)
    P = build_problem({**base, "type": "penalized", "operator": "laplacian",
                       "rhs": {"kind": "constant"}, "obstacle": {"kind": "sine_bump"}}, epsilon=0.5)
    assert isinstance(P.J, PenalizedFunctional) and P.J.epsilon == 0.5
    J = build_problem({**base, "type": "p_laplacian", "rhs": {"kind": "random"}}).J
    assert isinstance(J, PLaplacian) and J.p == 3.0


def test_identity_quadratic_target():
    pr = build_problem({"type": "quadratic", "dims": [3, 3], "rhs": {"kind": "random", "seed": 4}})
    assert pr.identity_quadratic
    np.testing.assert_array_equal(pr.target, as_array(pr.J.rhs))


def test_generators_seeded():
    space = TensorSpace((3, 4))
    a = generate({"kind": "random", "seed": 1}, space)
    b = generate({"kind": "random", "seed": 1}, space)
    np.testing.assert_array_equal(a, b)
    cp = generate({"kind": "random_cp", "rank": 2, "seed": 3}, space)
    assert cp.rank == 2
    c = as_array(generate({"kind": "constant", "value": 2.5}, space))
    assert np.all(c == 2.5)


def test_file_generators(tmp_path):
    space = TensorSpace((2, 3))
    X = np.arange(6.0)
    save_dense(tmp_path / "x.txt", DenseTensor(space, X))
    np.testing.assert_array_equal(generate({"kind": "file", "path": "x.txt"}, space, tmp_path).ravel(), X)
    v = SeparatedTensor.from_rank_one(space, RankOneTensor([np.ones(2), np.arange(3.0)]))
    save_separated(tmp_path / "v.json", v)
    w = generate({"kind": "file", "path": "v.json"}, space, tmp_path)
    np.testing.assert_array_equal(as_array(w), as_array(v))


def test_weights_and_operator_files(tmp_path):
    # a(v, w) = <A v, w>_mu is symmetric when diag(mu) A is; A = diag(1/mu) S does it
    (tmp_path / "w1.csv").write_text("1,2,4\n")
    (tmp_path / "w2.csv").write_text("0.5,0.5\n")
    (tmp_path / "a1.csv").write_text("2,1,0\n0.5,1,0.5\n0,0.25,0.5\n")
    (tmp_path / "i2.csv").write_text("1,0\n0,1\n")
    params = {"type": "quadratic", "dims": [3, 2], "weights": {"files": ["w1.csv", "w2.csv"]},
              "operator": {"files": [["a1.csv", "i2.csv"]]}, "rhs": {"kind": "random"}}
    pr = build_problem(params, tmp_path)
    np.testing.assert_array_equal(pr.space.weights[0], [1, 2, 4])
    assert not pr.identity_quadratic
    assert pr.J.min_eigenvalue > 0


def test_symmetric_matrix_with_weights_is_not_self_adjoint(tmp_path):
    (tmp_path / "w1.csv").write_text("1,2,4\n")
    (tmp_path / "w2.csv").write_text("1,1\n")
    (tmp_path / "a1.csv").write_text("2,1,0\n1,2,1\n0,1,2\n")
    (tmp_path / "i2.csv").write_text("1,0\n0,1\n")
    params = {"type": "quadratic", "dims": [3, 2], "weights": {"files": ["w1.csv", "w2.csv"]},
              "operator": {"files": [["a1.csv", "i2.csv"]]}}
    with pytest.raises(ConfigError, match="symmetric"):
        build_problem(params, tmp_path)


def test_grid_weights_default_for_plap():
    s = build_space({"type": "p_laplacian", "dims": [4, 9]})
    np.testing.assert_allclose(s.weights[1], 0.1)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        build_problem({"type": "lp_approx", "dims": [2, 2]})
    with pytest.raises(ConfigError):
        build_problem({"type": "penalized", "dims": [2, 2]})
    with pytest.raises(ConfigError):
        build_problem({"type": "quadratic", "dims": [2, 2], "rhs": {"kind": "file", "path": "nope.txt"}},
                      tmp_path)
    with pytest.raises(ConfigError):
        build_problem({"type": "lp_approx", "dims": [2, 2], "p": 1.0, "target": {"kind": "random"}})
