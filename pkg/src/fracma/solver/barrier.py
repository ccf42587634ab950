"""Radial barrier ``ubar = phi + M (u_F * g1)``.

``u_F = C_F |x|^{2s-n}`` is the Riesz fundamental solution and
``g1 = min(1, |x|^{-(2s+tau)})``, so ``w1 = u_F * g1`` solves
``(-Delta)^s w1 = g1`` and decays like ``|x|^{-tau}``. Both factors are
radial, hence ``w1(r) = C_F int_0^inf g1(rho) rho^{n-1} K(r, rho) d rho``
with the spherical mean

    K(r, rho) = int_{|theta|=1} |r e - rho theta|^{2s-n} d theta
              = omega_n M^{2s-n} 2F1(nu, nu - n/2 + 1; n/2; (m/M)^2),

``nu = (n - 2s)/2``, ``M = max(r, rho)``, ``m = min(r, rho)``.
"""
from dataclasses import dataclass
import math

import numpy as np
import scipy.integrate
import scipy.optimize
import scipy.special

from ..core import GridFunction, RadialProfile, SumField
from ..quadrature import (apply_plan, build_plan, frac_lap_constant, gamma_fn,
                          riesz_constant, sphere_area)


def sphere_mean_kernel(r, rho, n, s):
    """``int_{S^{n-1}} |r e - rho theta|^{2s-n} d theta``."""
    nu = (n - 2 * s) / 2
    big = np.maximum(r, rho)
    small = np.minimum(r, rho)
    t = (small / big) ** 2
    return sphere_area(n) * big ** (-2 * nu) * scipy.special.hyp2f1(nu, nu - n / 2 + 1, n / 2, t)


def _kernel_series(n, s, terms=10):
    nu = (n - 2 * s) / 2
    a, b, c = nu, nu - n / 2 + 1, n / 2
    coefs = [1.0]
    for j in range(terms - 1):
        coefs.append(coefs[-1] * (a + j) * (b + j) / ((c + j) * (j + 1)))
    return coefs


def g1(r, s, tau):
    r = np.asarray(r, dtype=float)
    return np.minimum(1.0, np.where(r > 0, r, 1.0) ** (-(2 * s + tau)))


def w1_value(r, n, s, tau):
    """``(u_F * g1)(r)`` by radial quadrature plus an analytic tail."""
    cf = riesz_constant(n, s)
    top = 20.0 * max(r, 1.0)
    pts = sorted({0.0, min(r, 1.0), max(r, 1.0), top})

    def integrand(rho):
        if rho == 0:
            return 0.0
        k = sphere_mean_kernel(r, rho, n, s) if r > 0 else sphere_area(n) * rho ** (2 * s - n)
        return (1.0 if rho <= 1 else rho ** (-(2 * s + tau))) * rho ** (n - 1) * k

    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            val, _ = scipy.integrate.quad(integrand, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)
            total += val
    # rho > top: expand K in (r/rho)^2 and integrate term by term
    tail = sum(c * r ** (2 * j) * top ** (-tau - 2 * j) / (tau + 2 * j)
               for j, c in enumerate(_kernel_series(n, s)))
    return cf * (total + sphere_area(n) * tail)


def w0_coefficient(n, s, tau):
    """``u_F * |x|^{-(2s+tau)} = c |x|^{-tau}``; returns ``c``."""
    return (gamma_fn((n - 2 * s - tau) / 2) * gamma_fn(tau / 2)
            / (4 ** s * gamma_fn((2 * s + tau) / 2) * gamma_fn((n - tau) / 2)))


def w1_tail_terms(n, s, tau):
    """Two-term expansion ``c0 r^{-tau} - C_F m r^{2s-n}`` of ``w1`` at infinity."""
    mass = sphere_area(n) * (1 / (n - 2 * s - tau) - 1 / n)
    return ((w0_coefficient(n, s, tau), tau), (-riesz_constant(n, s) * mass, n - 2 * s))


def w1_profile(n, s, tau, r_max=1000.0, per_unit=40):
    """Tabulated ``w1`` as a :class:`RadialProfile`.

    Knots are uniform in ``asinh(r)`` with one knot at ``r = 1``, where
    ``g1`` has its kink.
    """
    du = math.asinh(1.0) / per_unit
    u = du * np.arange(int(math.asinh(r_max) / du) + 1)
    r = np.sinh(u)
    vals = np.array([w1_value(ri, n, s, tau) for ri in r])
    return RadialProfile(n, r, vals, w1_tail_terms(n, s, tau))


def fit_decay_exponent(profile, r_lo, r_hi, s, n, samples=64):
    """Fit ``a r^{-t} - b r^{2s-n}`` on ``[r_lo, r_hi]``; returns ``(t, a, b)``.

    A single power law is biased on moderate ranges because the
    ``r^{2s-n}`` correction is of comparable size there.
    """
    r = np.geomspace(r_lo, r_hi, samples)
    w = profile.profile(r)

    def model(r, t, a, b):
        return a * r ** (-t) - b * r ** (2 * s - n)

    slope = -np.polyfit(np.log(r), np.log(w), 1)[0]
    popt, _ = scipy.optimize.curve_fit(model, r, w, p0=(slope, w[0] * r_lo ** slope, 0.0),
                                       maxfev=20000)
    return tuple(float(p) for p in popt)


def frac_lap_of(field, X, s, quad, h=0.01, box_radius=None):
    """``(-Delta)^s f = -c_{n,s} L_I f`` at the points ``X`` by quadrature."""
    X = np.atleast_2d(X)
    n = X.shape[1]
    if box_radius is None:
        box_radius = max(1.0, float(np.abs(X).max()))
    plan = build_plan(np.eye(n), s, h, box_radius, quad)
    return -frac_lap_constant(n, s) * apply_plan(plan, field, X)


@dataclass(frozen=True, eq=False)
class Barrier:
    """Supersolution ``ubar = phi + M w1`` of the model problem.

    Attributes
    ----------
    w : GridFunction
        ``M w1`` (analytic, no offset).
    ubar : GridFunction
        ``phi + M w1`` (analytic, no offset).
    profile : RadialProfile
        ``w1`` itself.
    A0, A1 : float
        Measured envelope ``A0 min(1, r^-tau) <= w1 <= A1 min(1, r^-tau)``.
    C_phi : float
        Measured ``sup c_{n,s} L_I phi / min(1, r^{1-2s})``.
    """

    w: GridFunction
    tau: float
    M: float
    ubar: GridFunction
    profile: RadialProfile
    A0: float
    A1: float
    C_phi: float
    s: float

    def offset_at(self, X):
        return self.M * self.profile(X)


def _envelope(profile, tau):
    r = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 400)])
    ratio = profile.profile(r) / np.minimum(1.0, np.where(r > 0, r, 1.0) ** (-tau))
    return float(ratio.min()), float(ratio.max())


def _sample_rays(n, count):
    if n == 2:
        t = np.pi * np.arange(count) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    dirs = np.vstack([np.eye(n), np.ones((1, n)) / math.sqrt(n)])
    return dirs


def build_barrier(phi, s, tau, quad, box_radius=8.0, spacing=None, cap=1e12):
    """Barrier for the model problem with far field ``phi``.

    ``M`` is the smallest power of two with
    ``c_{n,s} M A0 min(1, r^-tau) >= C min(1, r^{1-2s})``, where ``C`` is
    measured from ``c_{n,s} L_I phi`` on sample rays. Since
    ``tau < 2s - 1`` this makes ``L_I phi <= M w1`` everywhere.
    """
    n = phi.dim
    if not 0 < tau < min(2 * s - 1, n - 2 * s):
        raise ValueError(f"tau must lie in (0, {min(2 * s - 1, n - 2 * s):g})")
    spacing = spacing if spacing is not None else 2 * box_radius / 63
    profile = w1_profile(n, s, tau)
    A0, A1 = _envelope(profile, tau)
    radii = np.concatenate([[0.0], np.geomspace(1e-2, 1e2, 25)])
    X = (radii[:, None, None] * _sample_rays(n, 8)[None]).reshape(-1, n)
    lphi = -frac_lap_of(phi, X, s, quad, box_radius=100.0)
    r = np.linalg.norm(X, axis=1)
    envelope = np.minimum(1.0, np.where(r > 0, r, 1.0) ** (1 - 2 * s))
    C = float(np.max(lphi / envelope))
    need = C / (frac_lap_constant(n, s) * A0)
    M = 2.0 ** math.ceil(math.log2(need)) if need > 0 else 1.0
    if M > cap:
        raise ValueError(f"barrier multiple {M:g} exceeds the cap {cap:g}")
    scaled = profile.scaled(M)
    w = GridFunction.analytic(scaled, box_radius, spacing)
    ubar = GridFunction.analytic(SumField((phi, scaled)), box_radius, spacing)
    return Barrier(w, tau, M, ubar, profile, A0, A1, C, s)
