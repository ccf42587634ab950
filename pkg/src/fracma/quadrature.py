"""Quadrature for the anisotropic operators ``L_A`` and related constants.

``L_A u(x) = 1/2 * int delta(u, x, y) |A^{-1} y|^{-(n+2s)} dy`` is computed
after the substitution ``y = A z`` (Jacobian ``det A``), so only the
isotropic kernel ``|z|^{-(n+2s)}`` is ever integrated. Using the symmetry
of ``delta`` in ``z`` the angular integral runs over a half sphere, and the
integral splits into three zones:

inner
    ``|z| < rho / lambda_max(A)``. The increment is replaced by its Taylor
    term ``<H A z, A z>``; the resulting ``trace(A A^T H)`` is computed as a
    positive combination of lattice second differences through Selling's
    decomposition of ``A A^T``, which keeps the scheme monotone.
middle
    Gauss-Legendre panels in ``log |z|`` up to ``R_quad / lambda_min(A)``.
tail
    Log-spaced nodes for a further ``tail_decades`` decades, then the
    asymptote ``f(x + r v) + f(x - r v) ~ r alpha + beta`` of the field is
    integrated in closed form.

All three zones combine into a single weighted sum of second increments
plus a closure term, represented by :class:`QuadPlan`.
"""
from dataclasses import dataclass, replace
from functools import lru_cache
import logging
import math

import numpy as np
import scipy.integrate

from . import kernels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureScheme:
    """Node counts and zone radii of the singular quadrature.

    Parameters
    ----------
    inner_radius : float, optional
        Taylor-zone radius in ``y`` space; defaults to ``2 h``.
    outer_radius : float, optional
        Radius ``R_quad`` in ``y`` space beyond which only the far field is
        sampled; defaults to ``2 sqrt(n) R_box`` so that grid offsets never
        reach the tail.
    radial_per_decade : int
        Radial nodes per decade in the middle zone.
    angular_nodes : int
        Directions on the half circle (n = 2) or polar nodes on the half
        sphere (n = 3, with twice as many azimuths).
    tail_decades : float
        Decades of sampled far field before the analytic closure.
    order : int
        Gauss-Legendre order of one radial panel.
    """

    inner_radius: float = None
    outer_radius: float = None
    radial_per_decade: int = 12
    angular_nodes: int = 24
    tail_decades: float = 6.0
    order: int = 6

    def __post_init__(self):
        if self.radial_per_decade < 4 or self.angular_nodes < 4 or self.order < 1:
            raise ValueError("node counts must be at least 4")
        if self.tail_decades <= 0:
            raise ValueError("tail_decades must be positive")
        if self.inner_radius is not None and self.inner_radius <= 0:
            raise ValueError("inner_radius must be positive")
        if (self.inner_radius is not None and self.outer_radius is not None
                and not self.inner_radius < self.outer_radius):
            raise ValueError("need inner_radius < outer_radius")

    def refined(self, factor=2):
        return replace(self, radial_per_decade=self.radial_per_decade * factor,
                       angular_nodes=self.angular_nodes * factor)

    def radii(self, h, box_radius, n):
        rho = self.inner_radius if self.inner_radius is not None else 2 * h
        rq = self.outer_radius if self.outer_radius is not None else 2 * math.sqrt(n) * box_radius
        if not 0 < rho < rq:
            raise ValueError("need 0 < inner radius < outer radius")
        return rho, rq


# --------------------------------------------------------------------------
# special functions and normalizations


def gamma_fn(x):
    """Gamma function for ``x > 0``."""
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise ValueError("gamma_fn needs a finite x > 0")
    if x > 171:
        return math.exp(math.lgamma(x))
    return math.gamma(x)


def sphere_area(k):
    """Surface measure of the unit sphere in ``R^k`` (``2 pi^(k/2) / Gamma(k/2)``)."""
    return 2 * math.pi ** (k / 2) / gamma_fn(k / 2)


def frac_lap_constant(n, s):
    """``c_{n,s}`` with ``(-Delta)^s u = c_{n,s} PV int (u(x)-u(y)) |x-y|^{-n-2s} dy``."""
    return 4 ** s * gamma_fn(n / 2 + s) / (math.pi ** (n / 2) * abs(math.gamma(-s)))


def riesz_constant(n, s):
    """``C_F`` with ``(-Delta)^s (C_F |x|^{2s-n}) = delta_0``."""
    return gamma_fn(n / 2 - s) / (4 ** s * math.pi ** (n / 2) * gamma_fn(s))


# --------------------------------------------------------------------------
# Selling decomposition


def selling_decomposition(M, max_steps=10_000):
    """Write SPD ``M`` as ``sum_i c_i v_i v_i^T`` with ``c_i >= 0``, integer ``v_i``.

    Returns
    -------
    coefs : ndarray
    vectors : ndarray of int, shape (k, n)
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    tol = 1e-14 * np.trace(M)
    if n == 1:
        return np.array([M[0, 0]]), np.array([[1]])
    if n == 2:
        b = [np.array([1, 0]), np.array([0, 1]), np.array([-1, -1])]
        for _ in range(max_steps):
            for i, j in ((0, 1), (0, 2), (1, 2)):
                if b[i] @ M @ b[j] > tol:
                    k = 3 - i - j
                    b[i], b[k] = -b[i], b[i] - b[j]
                    break
            else:
                break
        coefs, vecs = [], []
        for i, j in ((0, 1), (0, 2), (1, 2)):
            k = 3 - i - j
            coefs.append(-(b[i] @ M @ b[j]))
            vecs.append(np.array([-b[k][1], b[k][0]]))
        return np.array(coefs), np.array(vecs)
    if n == 3:
        b = [np.array(v) for v in ([1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, -1, -1])]
        pairs = list(zip(*np.triu_indices(4, 1)))
        for _ in range(max_steps):
            for i, j in pairs:
                if b[i] @ M @ b[j] > tol:
                    old = b[i]
                    b = [(-old if m == i else b[m] if m == j else b[m] + old)
                         for m in range(4)]
                    break
            else:
                break
        coefs, vecs = [], []
        for i, j in pairs:
            k, l = [m for m in range(4) if m not in (i, j)]
            coefs.append(-(b[i] @ M @ b[j]))
            vecs.append(np.cross(b[k], b[l]))
        return np.array(coefs), np.array(vecs)
    raise ValueError("Selling decomposition is provided for n <= 3")


# --------------------------------------------------------------------------
# node sets


def half_sphere(n, count):
    """Directions and weights covering half of the unit sphere.

    The weights integrate over the half sphere, which equals the full
    sphere integral of an even integrand halved.
    """
    if n == 1:
        return np.array([[1.0]]), np.array([1.0])
    if n == 2:
        t = np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(t), np.sin(t)]), np.full(count, np.pi / count)
    if n == 3:
        x, w = np.polynomial.legendre.leggauss(count)
        ct, wt = 0.5 * (x + 1), 0.5 * w
        naz = 2 * count
        az = 2 * np.pi * (np.arange(naz) + 0.5) / naz
        st = np.sqrt(1 - ct ** 2)
        dirs = np.stack([np.outer(st, np.cos(az)), np.outer(st, np.sin(az)),
                         np.outer(ct, np.ones(naz))], axis=-1).reshape(-1, 3)
        weights = np.outer(wt, np.full(naz, 2 * np.pi / naz)).ravel()
        return dirs, weights
    raise ValueError("angular rules are provided for n <= 3")


def radial_rule(r0, r1, per_decade, order, s):
    """Nodes and weights for ``int_{r0}^{r1} f(r) r^{-1-2s} dr``.

    Gauss-Legendre panels in ``log r``; the returned weights already carry
    the kernel, so the integral is ``sum w_i f(r_i)``.
    """
    decades = math.log10(r1 / r0)
    panels = max(1, math.ceil(decades * per_decade / order))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(math.log(r0), math.log(r1), panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    t = (mid[:, None] + half[:, None] * x[None]).ravel()
    wt = (half[:, None] * w[None]).ravel()
    r = np.exp(t)
    return r, wt * r ** (-2 * s)


# --------------------------------------------------------------------------
# quadrature plans


@dataclass(frozen=True, eq=False)
class QuadPlan:
    """``L u(x) = sum_q W_q delta(u, x, y_q) + closure``.

    The closure is ``sum_j aw_j alpha_j + cw_j (beta_j - 2 u(x))`` with
    ``(alpha_j, beta_j)`` the field's tail pair along ``dirs_j``.
    ``zone`` labels each node (0 inner, 1 middle, 2 tail).
    """

    ys: np.ndarray
    ws: np.ndarray
    zone: np.ndarray
    dirs: np.ndarray
    aw: np.ndarray
    cw: np.ndarray
    s: float
    h: float


def _plan_from_rays(dirs, dir_w, r_inner, r_mid, s, quad, jac):
    """Middle and tail nodes along ``dirs`` (``z``-space radii given)."""
    rm, wm = radial_rule(r_inner, r_mid, quad.radial_per_decade, quad.order, s)
    r_far = r_mid * 10 ** quad.tail_decades
    rt, wt = radial_rule(r_mid, r_far, quad.order, quad.order, s)
    rad = np.concatenate([rm, rt])
    rw = np.concatenate([wm, wt])
    zone = np.concatenate([np.ones(rm.size, int), np.full(rt.size, 2)])
    ys = (rad[None, :, None] * dirs[:, None, :]).reshape(-1, dirs.shape[1])
    ws = (jac * dir_w[:, None] * rw[None, :]).ravel()
    zones = np.broadcast_to(zone, (len(dirs), rad.size)).ravel()
    aw = jac * dir_w * r_far ** (1 - 2 * s) / (2 * s - 1)
    cw = jac * dir_w * r_far ** (-2 * s) / (2 * s)
    return ys, ws, zones, aw, cw


@lru_cache(maxsize=4096)
def _cached_plan(key, n, s, h, box_radius, quad):
    A = np.frombuffer(key, dtype=float).reshape(n, n)
    return _build_plan(A, s, h, box_radius, quad)


def _build_plan(A, s, h, box_radius, quad):
    n = A.shape[0]
    lam = np.linalg.eigvalsh(A)
    if lam.min() <= 0:
        raise ValueError("A must be positive definite")
    jac = float(np.prod(lam))
    rho, rq = quad.radii(h, box_radius, n)
    rho_z = rho / lam.max()
    r_mid = rq / lam.min()
    # inner zone: 1/2 * rho_z^(2-2s)/(2-2s) * |B_1| * trace(A A^T H)
    inner = jac * 0.5 * rho_z ** (2 - 2 * s) / (2 - 2 * s) * sphere_area(n) / n
    coefs, vecs = selling_decomposition(A @ A.T)
    keep = coefs > 0
    y_in = h * vecs[keep].astype(float)
    w_in = inner * coefs[keep] / h ** 2
    dirs, dw = half_sphere(n, quad.angular_nodes)
    ys, ws, zones, aw, cw = _plan_from_rays(dirs, dw, rho_z, r_mid, s, quad, jac)
    return QuadPlan(np.vstack([y_in, ys @ A.T]), np.concatenate([w_in, ws]),
                    np.concatenate([np.zeros(len(w_in), int), zones]),
                    dirs @ A.T, aw, cw, s, h)


def build_plan(A, s, h, box_radius, quad):
    """Quadrature plan for ``L_A`` on a grid of spacing ``h`` (cached)."""
    A = getattr(A, "matrix", A)
    A = np.ascontiguousarray(np.round(np.asarray(A, dtype=float), 12))
    return _cached_plan(A.tobytes(), A.shape[0], float(s), float(h), float(box_radius), quad)


def line_plan(e, s, h, box_radius, quad):
    """Plan for ``int_0^inf delta(u, x, t e) t^{-1-2s} dt``."""
    e = np.asarray(e, dtype=float)
    rho, rq = quad.radii(h, box_radius, e.size)
    ys, ws, zones, aw, cw = _plan_from_rays(e[None], np.ones(1), rho, rq, s, quad, 1.0)
    w_in = rho ** (2 - 2 * s) / (2 - 2 * s) / h ** 2
    return QuadPlan(np.vstack([h * e[None], ys]), np.concatenate([[w_in], ws]),
                    np.concatenate([[0], zones]), e[None], aw, cw, s, h)


def apply_plan(plan, f, X, chunk=64):
    """Evaluate a plan for field ``f`` at the points ``X`` (shape ``(m, n)``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if hasattr(f, "far_field") and getattr(f, "offset", None) is None:
        f = f.far_field
    phi_params = _farfield_params(f)
    if phi_params is not None:
        alpha, beta = f.tail_pair(X[:1], plan.dirs)
        alpha_sum = float(plan.aw @ alpha[0])
        return kernels.lphi(X, plan.ys, plan.ws, float(plan.cw.sum()), alpha_sum, *phi_params)
    out = np.empty(len(X))
    n = X.shape[1]
    for start in range(0, len(X), chunk):
        x = X[start:start + chunk]
        fx = f(x)
        fp = f((x[:, None, :] + plan.ys[None]).reshape(-1, n)).reshape(len(x), -1)
        fm = f((x[:, None, :] - plan.ys[None]).reshape(-1, n)).reshape(len(x), -1)
        delta = fp + fm - 2 * fx[:, None]
        if not np.all(np.isfinite(delta)):
            raise FloatingPointError("non-finite second increment in quadrature")
        alpha, beta = f.tail_pair(x, plan.dirs)
        out[start:start + chunk] = (delta @ plan.ws + alpha @ plan.aw
                                    + (beta - 2 * fx[:, None]) @ plan.cw)
    return out


def _farfield_params(f):
    from .core import FarFieldModel
    if isinstance(f, FarFieldModel):
        return (f.cone_matrix, float(f.pert_amplitude), float(f.pert_decay), f.shift)
    return None


def _check_inside(gf, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation point must be finite")
    if np.abs(x).max() > gf.box_radius * (1 + 1e-12):
        raise ValueError("evaluation point lies outside the grid box")
    return x


def eval_LA(gf, x, A, quad, s, verbose=False):
    """``L_A u(x)`` for a grid function.

    Parameters
    ----------
    gf : GridFunction
    x : array_like
        Point inside the grid box.
    A : DetOneMatrix or ndarray
        SPD matrix (any determinant; the Jacobian is included).
    quad : QuadratureScheme
    s : float
        Order in ``(1/2, 1)``.
    verbose : bool
        Log an error report (see :func:`quadrature_report`).
    """
    x = _check_inside(gf, x)
    plan = build_plan(A, s, gf.h, gf.box_radius, quad)
    value = float(apply_plan(plan, gf, x[None])[0])
    if not math.isfinite(value):
        raise FloatingPointError("non-finite operator value")
    if verbose:
        log.info("eval_LA report: %s", quadrature_report(gf, x, A, quad, s, value))
    return value


def quadrature_report(gf, x, A, quad, s, value=None):
    """Estimated truncation error (refinement difference) and tail share."""
    x = np.asarray(x, dtype=float)
    plan = build_plan(A, s, gf.h, gf.box_radius, quad)
    if value is None:
        value = float(apply_plan(plan, gf, x[None])[0])
    fine = float(apply_plan(build_plan(A, s, gf.h, gf.box_radius, quad.refined(2)),
                            gf, x[None])[0])
    alpha, beta = gf.tail_pair(x[None], plan.dirs)
    closure = float(alpha[0] @ plan.aw + (beta[0] - 2 * gf(x[None])[0]) @ plan.cw)
    return {"value": value, "refined": fine, "truncation_estimate": abs(fine - value),
            "closure_term": closure}


def eval_frac_lap_1d(gf, x, e, s, quad):
    """``int_0^inf delta(u, x, t e) t^{-1-2s} dt`` (half the symmetric form)."""
    e = np.asarray(e, dtype=float)
    if abs(np.linalg.norm(e) - 1) > 1e-12:
        raise ValueError("direction must be a unit vector")
    x = _check_inside(gf, x)
    plan = line_plan(e, s, gf.h, gf.box_radius, quad)
    return float(apply_plan(plan, gf, x[None])[0])


# --------------------------------------------------------------------------
# sphere kernel integral


def _sphere_direct(eps, s, rtol=1e-12):
    # the integrand is even in every coordinate: integrate one orthant
    k = eps.size
    p = -(k + 2 * s) / 2
    e2 = eps ** 2
    opts = {"epsabs": 0, "epsrel": rtol, "limit": 400}

    def ring(t, z2=0.0):
        return ((1 - z2) * (e2[0] * math.cos(t) ** 2 + e2[1] * math.sin(t) ** 2)
                + e2[-1] * z2) ** p

    if k == 2:
        val, _ = scipy.integrate.quad(ring, 0, math.pi / 2, **opts)
        return 4 * val

    def inner(z):
        val, _ = scipy.integrate.quad(ring, 0, math.pi / 2, args=(z * z,), **opts)
        return val

    val, _ = scipy.integrate.quad(inner, 0, 1, **opts)
    return 8 * val


def _sphere_identity(eps, s):
    k = eps.size
    hexp = (k + 2 * s) / 2
    e2 = eps ** 2
    total = 0.0
    for i in range(k):
        # t in [0, 1]: t^(h-1) * g0(t); t = 1/u on [1, inf): u^(-s) * g1(u)
        def g0(t, i=i):
            return 1.0 / ((1 + t) * np.prod(np.sqrt(e2[i] + e2 * t)))

        def g1(u, i=i):
            return 1.0 / ((1 + u) * np.prod(np.sqrt(e2[i] * u + e2)))

        a, _ = scipy.integrate.quad(g0, 0, 1, weight="alg", wvar=(hexp - 1, 0),
                                    epsabs=0, epsrel=1e-13, limit=200)
        b, _ = scipy.integrate.quad(g1, 0, 1, weight="alg", wvar=(-s, 0),
                                    epsabs=0, epsrel=1e-13, limit=200)
        total += eps[i] ** (-2 * s) * (a + b)
    return math.pi ** (k / 2) / (gamma_fn(1 - s) * gamma_fn(hexp)) * total


def sphere_kernel_integral(eps, s, method="identity"):
    """``int_{|x|=1} (sum eps_j^2 x_j^2)^{-(k+2s)/2} dH^{k-1}`` for k = 2, 3."""
    eps = np.asarray(eps, dtype=float).ravel()
    if eps.size not in (2, 3):
        raise ValueError("k must be 2 or 3")
    if np.any(eps <= 0):
        raise ValueError("all eps_j must be positive")
    if not 0.5 < s < 1:
        raise ValueError("s must lie in (1/2, 1)")
    if method == "direct":
        return _sphere_direct(eps, s)
    if method == "identity":
        return _sphere_identity(eps, s)
    raise ValueError(f"unknown method {method!r}")


def sphere_kernel_bounds(k, s):
    """Lower and upper bound of the normalized sphere-kernel integral."""
    lower = sphere_area(k) / k
    upper = math.pi ** (k / 2) / (s * gamma_fn(2 - s) * gamma_fn(k / 2 + s))
    return lower, upper


# --------------------------------------------------------------------------
# structural constants


@dataclass(frozen=True)
class StructuralConstants:
    mu0: float
    mu1: float
    C1: float
    C2: float
    mu0_bar: float
    L: float
    C: float
    s: float
    n: int
    eta0: float


def structural_constants(L, C, s, n, eta0):
    """Ellipticity constants from Lipschitz, semiconcavity and ``eta0`` bounds."""
    if not 0.5 < s < 1:
        raise ValueError("s must lie in (1/2, 1)")
    if min(L, C, eta0) <= 0 or n < 2:
        raise ValueError("need L, C, eta0 > 0 and n >= 2")
    mu1 = L ** (2 - 2 * s) * (C / 2) ** (2 * s - 1) / (2 * s - 1)
    w1 = sphere_area(n - 1)
    C1 = math.sqrt(math.pi) * gamma_fn((n - 1) / 2 + s) / gamma_fn(n / 2 + s) * mu1 * w1 / 2
    C2 = w1 * gamma_fn((n - 1) / 2) * gamma_fn(s + 0.5) / (2 * gamma_fn(n / 2 + s))
    mu0 = C1 ** (1 - n) / C2 * (eta0 / 2) ** n
    mu0_bar = (2 * n * eta0 / sphere_area(n)) ** n * (C * (n - 1)) ** (1 - n)
    return StructuralConstants(mu0, mu1, C1, C2, mu0_bar, L, C, s, n, eta0)
