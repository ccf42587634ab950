import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracma.core import AffineField, FarFieldModel, GridFunction
from fracma.ma_operator import family_values
from fracma.solver import sup_inf_convolution
from fracma.solver.truncated import stage_family
from fracma.core import SolverConfig

FLAT1 = AffineField(np.zeros(1))
FLAT2 = AffineField(np.zeros(2))


def test_constant_is_fixed():
    gf = GridFunction(4.0, 0.25, FLAT2, np.full((33, 33), 2.5))
    assert np.allclose(sup_inf_convolution(gf, 0.5).offset, 2.5)
    assert np.allclose(sup_inf_convolution(gf, 0.5, "inf").offset[8:-8, 8:-8], 2.5)


@pytest.mark.parametrize("eps", [0.5, 1.0])
def test_abs_oracle_first_order_in_h(eps):
    # sup_y { |y| - |x - y|^2 / eps } = |x| + eps / 4
    errs = []
    for N in (41, 81, 161):
        g = np.linspace(-4, 4, N)
        gf = GridFunction(4.0, 8 / (N - 1), FLAT1, np.abs(g))
        out = sup_inf_convolution(gf, eps).offset
        inner = np.abs(g) <= 2
        errs.append(np.abs(out - (np.abs(g) + eps / 4))[inner].max())
    h = 8 / 40
    assert errs[0] <= h and errs[1] <= h / 2 and errs[2] <= h / 4
    assert errs[0] > errs[2]


@given(st.integers(0, 10 ** 6), st.sampled_from([0.25, 0.5, 1.0]))
def test_sandwich(lipschitz_offset, seed, eps):
    gf = lipschitz_offset(seed)
    up = sup_inf_convolution(gf, eps).offset
    down = sup_inf_convolution(gf, eps, "inf").offset
    assert np.all(down <= gf.offset + 1e-12) and np.all(gf.offset <= up + 1e-12)


@given(st.integers(0, 10 ** 6))
def test_composition_dominates(lipschitz_offset, seed):
    gf = lipschitz_offset(seed)
    once = sup_inf_convolution(gf, 0.5)
    twice = sup_inf_convolution(once, 0.5)
    assert np.all(twice.offset >= once.offset - 1e-12)


@given(st.integers(0, 10 ** 6), st.sampled_from([0.25, 0.5, 1.0]))
def test_semiconvexity_constant(lipschitz_offset, seed, eps):
    gf = lipschitz_offset(seed)
    v = sup_inf_convolution(gf, eps).offset
    h = gf.h
    for di, dj in [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1)]:
        k = 2
        core = v[k:-k, k:-k]
        plus = v[k + di:v.shape[0] - k + di, k + dj:v.shape[1] - k + dj]
        minus = v[k - di:v.shape[0] - k - di, k - dj:v.shape[1] - k - dj]
        second = (plus + minus - 2 * core) / ((di * di + dj * dj) * h * h)
        assert second.min() >= -2 / eps - 1e-9


def test_validation():
    gf = GridFunction(4.0, 0.25, FLAT2, np.zeros((33, 33)))
    with pytest.raises(ValueError):
        sup_inf_convolution(gf, 0.0)
    with pytest.raises(ValueError):
        sup_inf_convolution(gf, 0.5, "max")
    analytic = GridFunction.analytic(FLAT2, 4.0, 0.25)
    assert sup_inf_convolution(analytic, 0.5) is analytic


def test_operator_change_shrinks_with_eps(lipschitz_offset):
    c = SolverConfig(n_nodes=49, rotations=16, eig_levels=4, coarse_factor=2)
    fam = stage_family(c, 0.25)
    phi = FarFieldModel.isotropic(2)
    base = lipschitz_offset(3, n_nodes=49, box=8.0)
    gf = GridFunction(8.0, base.h, phi, 0.3 * base.offset * (np.abs(base.nodes()).max(axis=1)
                                                           <= 6).reshape(49, 49))
    X = np.array([[0.0, 0.0], [1.0, 2.0], [-2.0, 1.0], [3.0, -1.0]])
    ref = family_values(gf, X, fam, c.quad, c.s).min(axis=0)
    diffs = []
    for eps in (1.0, 0.5, 0.25):
        reg = sup_inf_convolution(sup_inf_convolution(gf, eps), eps, "inf")
        diffs.append(np.abs(family_values(reg, X, fam, c.quad, c.s).min(axis=0) - ref).max())
    assert diffs[0] >= diffs[1] >= diffs[2]
