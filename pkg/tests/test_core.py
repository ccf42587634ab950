import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracma.core import (AffineField, ConfigError, FarFieldModel, GridFunction, RightHandSide,
                         SolverConfig, evaluate, grid_nodes, second_increment)

coord = st.floats(-3, 3, allow_nan=False)
point = st.tuples(coord, coord).map(np.array)


def aniso_phi():
    return FarFieldModel(np.array([[2.0, 0.3], [0.3, 1.0]]), 0.5, 0.8)


def test_farfield_normalization():
    phi = aniso_phi()
    assert phi(np.zeros((1, 2)))[0] == pytest.approx(0, abs=1e-14)
    assert np.allclose(phi.grad(np.zeros((1, 2))), 0, atol=1e-14)


@pytest.mark.parametrize("kwargs, match", [
    ({"cone_matrix": [[1, 0], [0, -1]]}, "positive definite"),
    ({"cone_matrix": [[1, 1], [0, 1]]}, "symmetric"),
    ({"cone_matrix": np.eye(2), "pert_amplitude": -1}, "non-negative"),
    ({"cone_matrix": np.eye(2), "pert_decay": 2.0}, r"\(0, n\)"),
])
def test_farfield_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        FarFieldModel(**kwargs)


def test_gradient_and_hessian_match_differences():
    phi = aniso_phi()
    x = np.array([[0.7, -1.1]])
    h = 1e-5
    E = np.eye(2) * h
    fd = np.array([(phi(x + E[i]) - phi(x - E[i]))[0] / (2 * h) for i in range(2)])
    assert np.allclose(phi.grad(x)[0], fd, atol=1e-8)
    fdh = np.array([(phi.grad(x + E[i]) - phi.grad(x - E[i]))[0] / (2 * h) for i in range(2)])
    assert np.allclose(phi.hessian(x)[0], fdh, atol=1e-7)


def test_eta_decay_bound():
    # the smoothed vertex adds 1/(sqrt(1+q) + sqrt(q)) <= 1/(2 sqrt(lam_min) |x|) to eta
    phi = aniso_phi()
    lam = np.linalg.eigvalsh(phi.cone_matrix).min()
    r = np.geomspace(1, 1e4, 50)
    t = np.linspace(0, 2 * np.pi, 37)
    X = (r[:, None, None] * np.stack([np.cos(t), np.sin(t)], -1)[None]).reshape(-1, 2)
    rr = np.linalg.norm(X, axis=1)
    bound = phi.pert_amplitude * rr ** -phi.pert_decay + 0.5 / np.sqrt(lam) / rr
    assert np.all(np.abs(phi.eta(X)) <= bound * (1 + 1e-12))
    assert np.isfinite(phi.decay_constant())


def test_constants_of_isotropic_soliton():
    phi = FarFieldModel.isotropic(2)
    assert phi.lipschitz == pytest.approx(1.0, abs=1e-12)
    assert phi.semiconcavity == pytest.approx(1.0, abs=1e-12)


def test_zero_offset_evaluates_far_field():
    phi = aniso_phi()
    gf = GridFunction.from_offset(np.zeros((17, 17)), 4.0, phi)
    X = np.array([[0.3, -1.7], [3.9, 3.9]])
    assert np.allclose(gf(X), phi(X), rtol=0, atol=1e-14)
    assert evaluate(gf, X[0]) == pytest.approx(phi(X[:1])[0], abs=1e-14)


def test_interpolation_exact_on_nodes(rng):
    phi = aniso_phi()
    off = rng.standard_normal((9, 9))
    gf = GridFunction.from_offset(off, 2.0, phi, taper=0.0)
    X = gf.nodes()
    assert np.allclose(gf(X), gf.values.ravel(), atol=1e-13)


def test_outside_box_is_far_field(rng):
    phi = aniso_phi()
    gf = GridFunction.from_offset(rng.standard_normal((9, 9)), 2.0, phi)
    X = np.array([[4.0, 0.0], [-2.5, 3.0], [4.0, 4.0]])
    assert np.allclose(gf(X), phi(X), atol=1e-14)
    assert np.allclose(gf(X), phi.cone(X) + phi.eta(X) - phi.shift, atol=1e-12)


def test_taper_zeroes_boundary(rng):
    gf = GridFunction.from_offset(rng.standard_normal((21, 21)), 2.0, aniso_phi(), taper=0.1)
    assert np.all(gf.offset[0] == 0) and np.all(gf.offset[:, -1] == 0)


def test_csv_roundtrip(tmp_path, rng):
    gf = GridFunction.from_offset(rng.standard_normal((7, 7)), 3.0, aniso_phi(),
                                  interior_radius=2.0)
    path = tmp_path / "u.csv"
    gf.to_csv(path)
    back = GridFunction.from_csv(path)
    assert np.array_equal(back.offset, gf.offset)
    assert back.interior_radius == 2.0
    meta = json.loads((tmp_path / "u.json").read_text())
    assert meta["far_field"]["type"] == "farfield"
    header = path.read_text().splitlines()[0]
    assert header == "x0,x1,value,offset"


def test_second_increment_affine_is_zero():
    gf = GridFunction.analytic(AffineField([0.4, -1.3], 2.0), 4.0, 0.1)
    assert second_increment(gf, [0.5, 0.1], [1.3, -0.7]) == pytest.approx(0, abs=1e-13)


def test_second_increment_exact_for_quadratics():
    M = np.array([[1.5, 0.4], [0.4, 0.7]])
    gf0 = GridFunction.analytic(AffineField([0.0, 0.0]), 4.0, 0.5)
    X = grid_nodes(4.0, 17, 2)
    vals = np.einsum("mi,ij,mj->m", X, M, X).reshape(17, 17)
    gf = gf0.with_offset(vals)
    x, y = np.array([0.5, -1.0]), np.array([1.0, 1.5])
    assert second_increment(gf, x, y) == pytest.approx(2 * y @ M @ y, rel=1e-12)


def test_second_increment_at_vertex():
    phi = FarFieldModel.isotropic(2, 0.3, 1.0)
    gf = GridFunction.analytic(phi, 8.0, 0.1)
    y = np.array([1.2, -0.4])
    Y = np.stack([y, -y, np.zeros(2)])
    eta = phi.eta(Y)
    expect = 2 * np.linalg.norm(y) + eta[0] + eta[1] - 2 * eta[2]
    assert second_increment(gf, np.zeros(2), y) == pytest.approx(expect, rel=1e-12)


@given(point, point)
def test_second_increment_symmetric(x, y):
    gf = GridFunction.from_offset(np.sin(np.arange(81.0)).reshape(9, 9), 4.0, aniso_phi())
    assert second_increment(gf, x, y) == pytest.approx(second_increment(gf, x, -y), abs=1e-12)


@given(point, point)
def test_second_increment_convex_nonnegative(x, y):
    gf = GridFunction.analytic(FarFieldModel(np.array([[2.0, 0.3], [0.3, 1.0]])), 4.0, 0.1)
    assert second_increment(gf, x, y) >= -1e-12


def test_right_hand_side_monotone():
    phi = aniso_phi()
    rhs = RightHandSide.model(phi)
    X = np.random.default_rng(0).uniform(-3, 3, (50, 2))
    t = np.linspace(-2, 2, 50)
    assert rhs.check_monotone(X, t, t + 0.7)
    bad = RightHandSide("general", 2.0, 0.0, 0.0, lambda X, t: t)
    assert not bad.check_monotone(X, t, t + 0.7)
    with pytest.raises(ValueError):
        RightHandSide("model", 0.0, 1.0, 1.0, lambda X, t: t)


@pytest.mark.parametrize("kwargs, match", [
    ({"s": 0.4}, r"\(1/2, 1\)"),
    ({"s": 1.0}, r"\(1/2, 1\)"),
    ({"dim": 4}, "dimension"),
    ({"floors": (0.25, 0.5)}, "decreasing"),
    ({"tol_fp": 0.0}, "tol_fp"),
    ({"damping": 1.5}, "damping"),
    ({"radii": (7.9,)}, "untapered"),
    ({"coarse_factor": 3}, "coarse_factor"),
    ({"tau": 0.6}, "tau"),
])
def test_solver_config_validation(kwargs, match):
    with pytest.raises(ConfigError, match=match):
        SolverConfig(**kwargs)


def test_solver_config_defaults():
    c = SolverConfig()
    assert c.h == pytest.approx(16 / 63)
    assert c.truncation_radii == (pytest.approx(7.2),)
    assert c.barrier_tau == pytest.approx(0.25)
