import math

import numpy as np
import pytest

from fracma.core import FarFieldModel
from fracma.quadrature import QuadratureScheme, frac_lap_constant, riesz_constant
from fracma.solver.barrier import (build_barrier, fit_decay_exponent, frac_lap_of, g1,
                                   sphere_mean_kernel, w0_coefficient, w1_profile,
                                   w1_tail_terms, w1_value)

QUAD = QuadratureScheme()
S, TAU = 0.75, 0.25
# C_F int_0^inf rho^(n-1-2s-tau) K(1, rho) d rho by mpmath quadrature with hyp2f1
W0_ORACLE = {(2, 0.75, 0.25): 16.9014349632587, (3, 0.75, 0.25): 3.94490015043075}


@pytest.fixture(scope="module")
def barrier():
    return build_barrier(FarFieldModel.isotropic(2), S, TAU, QUAD)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("r, rho", [(1.0, 2.0), (0.3, 0.31), (2.0, 0.5)])
def test_sphere_mean_kernel_vs_angular_sum(n, r, rho):
    if n == 2:
        t = np.linspace(0, 2 * np.pi, 200001)[:-1]
        d = np.hypot(r - rho * np.cos(t), rho * np.sin(t))
        direct = 2 * np.pi * np.mean(d ** (2 * S - n))
    else:
        # axial symmetry: 2 pi int_0^pi |r e - rho theta|^(2s-3) sin(t) dt
        t = np.linspace(0, np.pi, 200001)
        d = np.sqrt(r * r + rho * rho - 2 * r * rho * np.cos(t))
        f = d ** (2 * S - n) * np.sin(t)
        direct = 2 * np.pi * np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(t))
    assert sphere_mean_kernel(r, rho, n, S) == pytest.approx(direct, rel=1e-6)


@pytest.mark.parametrize("key", sorted(W0_ORACLE))
def test_w0_coefficient(key):
    assert w0_coefficient(*key) == pytest.approx(W0_ORACLE[key], rel=1e-7)


@pytest.mark.parametrize("n", [2, 3])
def test_w1_tail_expansion(n):
    tau = 0.25
    terms = w1_tail_terms(n, S, tau)
    assert terms[1][0] < 0
    r = 400.0
    approx = sum(c * r ** (-p) for c, p in terms)
    assert w1_value(r, n, S, tau) == pytest.approx(approx, rel=1e-6)


def test_w1_origin_value():
    # w1(0) = C_F omega_n (1/(2s) + 1/tau)
    expect = riesz_constant(2, S) * 2 * math.pi * (1 / (2 * S) + 1 / TAU)
    assert w1_value(0.0, 2, S, TAU) == pytest.approx(expect, rel=1e-9)


def test_g1():
    assert np.allclose(g1([0.0, 0.5, 1.0, 2.0], S, TAU), [1, 1, 1, 2 ** -1.75])


def test_profile_matches_pointwise():
    prof = w1_profile(2, S, TAU)
    r = np.array([0.05, 0.77, 1.0, 3.3, 41.0, 900.0, 5000.0])
    direct = np.array([w1_value(x, 2, S, TAU) for x in r])
    assert np.allclose(prof.profile(r), direct, rtol=1e-6)


def test_fractional_laplacian_of_w1(barrier):
    rng = np.random.default_rng(7)
    r = np.concatenate([rng.uniform(0.05, 0.9, 8), rng.uniform(1.1, 6.0, 12)])
    t = rng.uniform(0, 2 * np.pi, r.size)
    X = np.column_stack([r * np.cos(t), r * np.sin(t)])
    vals = frac_lap_of(barrier.profile, X, S, QUAD, box_radius=8.0)
    assert np.allclose(vals / g1(r, S, TAU), 1, atol=1e-3)


def test_envelope_and_decay(barrier):
    assert 0 < barrier.A0 <= barrier.A1
    r = np.linspace(2, 8, 200)
    w = barrier.profile.profile(r)
    assert np.all(np.diff(w) < 0)
    ratio = w * r ** TAU
    assert ratio.min() >= barrier.A0 * (1 - 1e-9) and ratio.max() <= barrier.A1 * (1 + 1e-9)
    t, a, b = fit_decay_exponent(barrier.profile, 2.0, 8.0, S, 2)
    assert t == pytest.approx(TAU, rel=0.1)


def test_barrier_multiple_and_supersolution_inequality(barrier):
    assert barrier.M == 2.0 ** round(math.log2(barrier.M))
    phi = FarFieldModel.isotropic(2)
    r = np.concatenate([[0.0], np.geomspace(0.05, 50, 40)])
    X = np.column_stack([r, np.zeros_like(r)])
    lphi = -frac_lap_of(phi, X, S, QUAD, box_radius=100.0) / frac_lap_constant(2, S)
    assert np.all(lphi <= barrier.M * barrier.profile(X))


def test_barrier_offset_decays(barrier):
    r = np.array([10.0, 100.0, 1e4, 1e6])
    X = np.column_stack([r, r]) / math.sqrt(2)
    phi = FarFieldModel.isotropic(2)
    gap = barrier.ubar(X) - phi(X)
    assert np.all(np.diff(gap) < 0)
    # offset ~ M w1 ~ r^-tau
    scaled = gap * r ** TAU
    assert scaled.max() < 2 * scaled.min()
    assert np.allclose(gap, barrier.offset_at(X), rtol=1e-12)


def test_barrier_validation():
    phi = FarFieldModel.isotropic(2)
    with pytest.raises(ValueError, match="tau"):
        build_barrier(phi, S, 0.6, QUAD)
    with pytest.raises(ValueError, match="cap"):
        build_barrier(phi, S, TAU, QUAD, cap=1.0)
