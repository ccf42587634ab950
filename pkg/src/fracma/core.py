"""Grid functions with an analytic far field, right-hand sides and config.

Every field used by the library is a callable on point arrays of shape
``(m, n)`` that also exposes ``tail_pair(X, V)``. The tail pair
``(alpha, beta)`` describes the asymptote of the symmetric sum

    f(x + r v) + f(x - r v) ~ r * alpha + beta      (r -> infinity),

which the quadrature uses to close singular integrals analytically.
"""
from dataclasses import dataclass, field
from functools import cached_property
import json

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .quadrature import QuadratureScheme


def _points(X, dim=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X


def _sphere_samples(n, count=720):
    """Deterministic near-uniform unit vectors (full sphere)."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    phi = np.pi * (1 + 5 ** 0.5) * k
    r = np.sqrt(1 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


# --------------------------------------------------------------------------
# analytic fields


@dataclass(frozen=True, eq=False)
class FarFieldModel:
    """Smoothed cone plus a decaying bump.

    ``phi(x) = sqrt(1 + <Qx, x>) + a (1 + |x|^2)^(-eps/2) - (1 + a)``

    The shift makes ``phi(0) = 0`` and ``grad phi(0) = 0``. Far away
    ``phi = Gamma + eta`` with the cone ``Gamma(x) = <Qx, x>^(1/2)``.

    Parameters
    ----------
    cone_matrix : array_like
        Symmetric positive definite matrix ``Q``.
    pert_amplitude : float
        Bump amplitude ``a >= 0``.
    pert_decay : float
        Decay exponent of the bump, in ``(0, n)``.
    pert_profile : str
        Only ``"bump"`` is provided.
    """

    cone_matrix: np.ndarray
    pert_amplitude: float = 0.0
    pert_decay: float = 1.0
    pert_profile: str = "bump"

    def __post_init__(self):
        Q = np.array(self.cone_matrix, dtype=float, ndmin=2)
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("cone_matrix must be square and symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("cone_matrix must be positive definite")
        if self.pert_amplitude < 0:
            raise ValueError("pert_amplitude must be non-negative")
        if not 0 < self.pert_decay < Q.shape[0]:
            raise ValueError("pert_decay must lie in (0, n)")
        if self.pert_profile != "bump":
            raise ValueError(f"unknown pert_profile {self.pert_profile!r}")
        object.__setattr__(self, "cone_matrix", Q)

    @classmethod
    def isotropic(cls, n, amplitude=0.0, decay=1.0):
        return cls(np.eye(n), amplitude, decay)

    @property
    def dim(self):
        return self.cone_matrix.shape[0]

    @property
    def shift(self):
        return 1.0 + self.pert_amplitude

    def __call__(self, X):
        X = _points(X, self.dim)
        return kernels.phi_values(X, self.cone_matrix, float(self.pert_amplitude),
                                  float(self.pert_decay), self.shift)

    def cone(self, X):
        X = _points(X, self.dim)
        return np.sqrt(np.einsum("mi,ij,mj->m", X, self.cone_matrix, X))

    def eta(self, X):
        """Deviation from the cone, ``phi - Gamma``, shift removed."""
        return self(X) - self.cone(X) + self.shift

    def grad(self, X):
        X = _points(X, self.dim)
        a, e = self.pert_amplitude, self.pert_decay
        QX = X @ self.cone_matrix
        q = np.einsum("mi,mi->m", QX, X)
        r2 = np.einsum("mi,mi->m", X, X)
        g = QX / np.sqrt(1 + q)[:, None]
        return g - (a * e * (1 + r2) ** (-e / 2 - 1))[:, None] * X

    def hessian(self, X):
        X = _points(X, self.dim)
        a, e = self.pert_amplitude, self.pert_decay
        n = self.dim
        QX = X @ self.cone_matrix
        q = np.einsum("mi,mi->m", QX, X)
        r2 = np.einsum("mi,mi->m", X, X)
        H = (self.cone_matrix[None] / np.sqrt(1 + q)[:, None, None]
             - np.einsum("mi,mj->mij", QX, QX) / ((1 + q) ** 1.5)[:, None, None])
        d1 = -0.5 * a * e * (1 + r2) ** (-e / 2 - 1)
        d2 = 0.5 * a * e * (e / 2 + 1) * (1 + r2) ** (-e / 2 - 2)
        H += 2 * d1[:, None, None] * np.eye(n)[None]
        H += 4 * d2[:, None, None] * np.einsum("mi,mj->mij", X, X)
        return H

    def tail_pair(self, X, V):
        X = _points(X, self.dim)
        V = _points(V, self.dim)
        gam = np.sqrt(np.einsum("ki,ij,kj->k", V, self.cone_matrix, V))
        alpha = np.broadcast_to(2 * gam[None, :], (len(X), len(V)))
        beta = np.full((len(X), len(V)), -2 * self.shift)
        return alpha, beta

    def _radial_samples(self):
        radii = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 600)])
        dirs = _sphere_samples(self.dim, 720 if self.dim == 2 else 400)
        return (radii[:, None, None] * dirs[None]).reshape(-1, self.dim)

    @cached_property
    def lipschitz(self):
        """Sampled ``sup |grad phi|`` (the cone slope bounds it asymptotically)."""
        g = np.linalg.norm(self.grad(self._radial_samples()), axis=1).max()
        lam = np.linalg.eigvalsh(self.cone_matrix)
        return float(max(g, np.sqrt(lam.max())))

    @cached_property
    def semiconcavity(self):
        """Sampled ``sup lambda_max(D^2 phi)``."""
        H = self.hessian(self._radial_samples())
        return float(np.linalg.eigvalsh(H)[:, -1].max())

    def decay_constant(self, radii=None):
        """Smallest ``a`` with the three decay bounds of ``eta`` on samples.

        Returns the maximum over ``|x| >= 1`` of ``|eta| |x|^e``,
        ``|grad eta| |x|^(1+e)`` and ``|D^2 eta| |x|^(2+e)``.
        """
        if radii is None:
            radii = np.geomspace(1.0, 1e4, 200)
        dirs = _sphere_samples(self.dim, 180 if self.dim == 2 else 200)
        X = (np.asarray(radii)[:, None, None] * dirs[None]).reshape(-1, self.dim)
        r = np.linalg.norm(X, axis=1)
        e = self.pert_decay
        QX = X @ self.cone_matrix
        gam = np.sqrt(np.einsum("mi,mi->m", QX, X))
        g_cone = QX / gam[:, None]
        H_cone = (self.cone_matrix[None] / gam[:, None, None]
                  - np.einsum("mi,mj->mij", QX, QX) / (gam ** 3)[:, None, None])
        eta = np.abs(self.eta(X)) * r ** e
        geta = np.linalg.norm(self.grad(X) - g_cone, axis=1) * r ** (1 + e)
        heta = np.abs(np.linalg.eigvalsh(self.hessian(X) - H_cone)).max(axis=1) * r ** (2 + e)
        return float(max(eta.max(), geta.max(), heta.max()))

    def to_dict(self):
        return {"type": "farfield", "cone_matrix": self.cone_matrix.tolist(),
                "pert_amplitude": float(self.pert_amplitude),
                "pert_decay": float(self.pert_decay), "pert_profile": self.pert_profile}


@dataclass(frozen=True, eq=False)
class AffineField:
    """``f(x) = <slope, x> + const``."""

    slope: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "slope", np.asarray(self.slope, dtype=float).ravel())

    @property
    def dim(self):
        return self.slope.size

    def __call__(self, X):
        return _points(X, self.dim) @ self.slope + self.const

    def tail_pair(self, X, V):
        X = _points(X, self.dim)
        V = _points(V, self.dim)
        beta = np.repeat(2 * self(X)[:, None], len(V), axis=1)
        return np.zeros_like(beta), beta

    def to_dict(self):
        return {"type": "affine", "slope": self.slope.tolist(), "const": float(self.const)}


@dataclass(frozen=True, eq=False)
class ConeField:
    """The bare cone ``<Qx, x>^(1/2)``, singular at the vertex."""

    cone_matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cone_matrix", np.array(self.cone_matrix, dtype=float, ndmin=2))

    @property
    def dim(self):
        return self.cone_matrix.shape[0]

    def __call__(self, X):
        X = _points(X, self.dim)
        return np.sqrt(np.einsum("mi,ij,mj->m", X, self.cone_matrix, X))

    def tail_pair(self, X, V):
        X = _points(X, self.dim)
        alpha = np.broadcast_to(2 * self(V)[None, :], (len(X), len(_points(V))))
        return alpha, np.zeros_like(alpha)

    def to_dict(self):
        return {"type": "cone", "cone_matrix": self.cone_matrix.tolist()}


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Radial function given by a clamped cubic spline plus a power tail.

    The spline lives in the coordinate ``u = asinh(r)`` so that a uniform
    table resolves both the core and a long geometric tail. Beyond the last
    knot the value is ``sum_j c_j r^(-p_j)`` from ``tail_terms``. The
    function must decay, so its tail pair is zero.
    """

    dim: int
    radii: np.ndarray
    values: np.ndarray
    tail_terms: tuple = ()
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "values", v)
        spline = CubicSpline(np.arcsinh(r), v, bc_type=((1, 0.0), "not-a-knot"))
        object.__setattr__(self, "_spline", spline)

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inside = r <= self.radii[-1]
        out[inside] = self._spline(np.arcsinh(r[inside]))
        ro = r[~inside]
        out[~inside] = sum(c * ro ** (-p) for c, p in self.tail_terms) if self.tail_terms else 0.0
        return self.scale * out

    def scaled(self, factor):
        return RadialProfile(self.dim, self.radii, self.values, self.tail_terms,
                             self.scale * factor)

    def __call__(self, X):
        return self.profile(np.linalg.norm(_points(X, self.dim), axis=1))

    def tail_pair(self, X, V):
        z = np.zeros((len(_points(X)), len(_points(V))))
        return z, z

    def to_dict(self):
        return {"type": "radial", "dim": self.dim, "radii": self.radii.tolist(),
                "values": self.values.tolist(),
                "tail_terms": [list(t) for t in self.tail_terms], "scale": self.scale}


@dataclass(frozen=True, eq=False)
class SumField:
    """Sum of analytic fields."""

    parts: tuple

    @property
    def dim(self):
        return self.parts[0].dim

    def __call__(self, X):
        return sum(p(X) for p in self.parts)

    def tail_pair(self, X, V):
        pairs = [p.tail_pair(X, V) for p in self.parts]
        return sum(a for a, _ in pairs), sum(b for _, b in pairs)

    def to_dict(self):
        return {"type": "sum", "parts": [p.to_dict() for p in self.parts]}


def field_from_dict(d):
    kind = d["type"]
    if kind == "farfield":
        return FarFieldModel(np.array(d["cone_matrix"]), d["pert_amplitude"],
                             d["pert_decay"], d["pert_profile"])
    if kind == "affine":
        return AffineField(np.array(d["slope"]), d["const"])
    if kind == "cone":
        return ConeField(np.array(d["cone_matrix"]))
    if kind == "radial":
        return RadialProfile(d["dim"], np.array(d["radii"]), np.array(d["values"]),
                             tuple(tuple(t) for t in d["tail_terms"]), d["scale"])
    if kind == "sum":
        return SumField(tuple(field_from_dict(p) for p in d["parts"]))
    raise ValueError(f"unknown field type {kind!r}")


# --------------------------------------------------------------------------
# grid functions


def taper_factor(X, box_radius, width):
    """Linear ramp from 1 to 0 across the outer ``width`` fraction of the box."""
    if width <= 0:
        return np.ones(len(X))
    dist = box_radius - np.abs(X).max(axis=1)
    return np.clip(dist / (width * box_radius), 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Node offset on ``[-R, R]^n`` on top of an analytic far field.

    The function is ``far_field(x) + I[offset](x)`` where ``I`` is the
    multilinear interpolant of the offset extended by zero to the nodes
    beyond the box (so it vanishes one cell outside the box). With
    ``offset=None`` the function is purely analytic and ``spacing`` only
    fixes the finite-difference scale used by the quadrature.
    """

    box_radius: float
    spacing: float
    far_field: object
    offset: np.ndarray = None
    interior_radius: float = None

    def __post_init__(self):
        if self.box_radius <= 0 or self.spacing <= 0:
            raise ValueError("box_radius and spacing must be positive")
        if self.offset is not None:
            off = np.asarray(self.offset, dtype=float)
            N = self.n_nodes
            if abs((N - 1) * self.spacing - 2 * self.box_radius) > 1e-9 * self.box_radius:
                raise ValueError("spacing must divide the box width")
            if off.shape != (N,) * self.dim:
                raise ValueError(f"offset shape {off.shape} does not match grid {(N,) * self.dim}")
            object.__setattr__(self, "offset", off)

    @classmethod
    def from_offset(cls, offset, box_radius, far_field, taper=0.1, interior_radius=None):
        offset = np.asarray(offset, dtype=float)
        N = offset.shape[0]
        h = 2 * box_radius / (N - 1)
        if taper > 0:
            X = grid_nodes(box_radius, N, far_field.dim)
            offset = offset * taper_factor(X, box_radius, taper).reshape(offset.shape)
        return cls(box_radius, h, far_field, offset, interior_radius)

    @classmethod
    def from_values(cls, values, box_radius, far_field, taper=0.1, interior_radius=None):
        values = np.asarray(values, dtype=float)
        N = values.shape[0]
        X = grid_nodes(box_radius, N, far_field.dim)
        offset = values - far_field(X).reshape(values.shape)
        return cls.from_offset(offset, box_radius, far_field, taper, interior_radius)

    @classmethod
    def analytic(cls, far_field, box_radius, spacing):
        return cls(box_radius, spacing, far_field)

    @property
    def dim(self):
        return self.far_field.dim

    @property
    def h(self):
        return self.spacing

    @property
    def n_nodes(self):
        return int(round(2 * self.box_radius / self.spacing)) + 1

    def nodes(self):
        return grid_nodes(self.box_radius, self.n_nodes, self.dim)

    @property
    def values(self):
        vals = self.far_field(self.nodes()).reshape((self.n_nodes,) * self.dim)
        return vals if self.offset is None else vals + self.offset

    def offset_at(self, X):
        X = _points(X, self.dim)
        if self.offset is None:
            return np.zeros(len(X))
        return kernels.interp(self.offset.ravel(), self.n_nodes, -float(self.box_radius),
                              float(self.spacing), X)

    def __call__(self, X):
        X = _points(X, self.dim)
        return self.far_field(X) + self.offset_at(X)

    def tail_pair(self, X, V):
        return self.far_field.tail_pair(X, V)

    def with_offset(self, offset, interior_radius=None):
        return GridFunction(self.box_radius, self.spacing, self.far_field, offset,
                            self.interior_radius if interior_radius is None else interior_radius)

    # ---- serialization
    def to_csv(self, path):
        """Write one row per node plus a JSON sidecar ``<path>.json``."""
        X = self.nodes()
        vals = self.values.ravel()
        off = np.zeros(len(X)) if self.offset is None else self.offset.ravel()
        header = ",".join([f"x{i}" for i in range(self.dim)] + ["value", "offset"])
        np.savetxt(path, np.column_stack([X, vals, off]), delimiter=",", header=header,
                   comments="", fmt="%.17g")
        meta = {"box_radius": self.box_radius, "spacing": self.spacing, "dim": self.dim,
                "n_nodes": self.n_nodes, "interior_radius": self.interior_radius,
                "far_field": self.far_field.to_dict()}
        with open(sidecar_path(path), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path):
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n, N = meta["dim"], meta["n_nodes"]
        offset = data[:, n + 1].reshape((N,) * n)
        return cls(meta["box_radius"], meta["spacing"], field_from_dict(meta["far_field"]),
                   offset, meta["interior_radius"])


def sidecar_path(path):
    path = str(path)
    return (path[:-4] if path.endswith(".csv") else path) + ".json"


def grid_nodes(box_radius, n_nodes, dim):
    axis = np.linspace(-box_radius, box_radius, n_nodes)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def evaluate(gf, x):
    """Value of a grid function (or any field) at one point."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation point must be finite")
    return float(gf(x[None, :])[0])


def second_increment(gf, x, y):
    """``u(x + y) + u(x - y) - 2 u(x)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    v = gf(np.stack([x + y, x - y, x]))
    return float(v[0] + v[1] - 2 * v[2])


# --------------------------------------------------------------------------
# right-hand side


@dataclass(frozen=True)
class RightHandSide:
    """``g(x, t)`` with its structural constants.

    Parameters
    ----------
    kind : {"model", "general"}
    mu : float
        Monotonicity modulus in ``t``.
    lipschitz : float
        Lipschitz constant in ``x``.
    semiconvexity : float
        Semiconvexity constant of ``g``.
    evaluator : callable
        ``evaluator(X, t)`` returning an array.
    """

    kind: str
    mu: float
    lipschitz: float
    semiconvexity: float
    evaluator: object = field(repr=False)

    def __post_init__(self):
        if self.kind not in ("model", "general"):
            raise ValueError("kind must be 'model' or 'general'")
        if self.mu <= 0 or self.lipschitz < 0 or self.semiconvexity < 0:
            raise ValueError("need mu > 0 and non-negative constants")

    @classmethod
    def model(cls, phi):
        """``g(x, t) = t - phi(x)``."""
        return cls("model", 1.0, phi.lipschitz, phi.semiconcavity,
                   lambda X, t: np.asarray(t, dtype=float) - phi(X))

    def __call__(self, X, t):
        return self.evaluator(X, t)

    def check_monotone(self, X, t_lo, t_hi):
        """Sampled check of ``g(x, t1) - g(x, t2) >= mu (t1 - t2)``."""
        t_lo, t_hi = np.minimum(t_lo, t_hi), np.maximum(t_lo, t_hi)
        gap = self(X, t_hi) - self(X, t_lo) - self.mu * (t_hi - t_lo)
        return bool(np.all(gap >= -1e-12 * (1 + np.abs(t_hi))))


# --------------------------------------------------------------------------
# configuration


class ConfigError(ValueError):
    """Invalid solver configuration."""


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the truncated-ball continuation solver.

    ``floors`` is the ellipticity floor schedule. Policies live on a lattice
    with log-eigenvalue step ``ln 2 / eig_levels`` and ``rotations`` angles
    per half turn, so lattices of successive floors are nested when the
    floors are powers of one half. With ``argmin="exact"`` every policy
    improvement is a brute-force argmin over the whole stage lattice; with
    ``"pattern"`` it is a local search started from the brute-force argmin
    over the sub-lattice coarser by ``coarse_factor`` (cheaper, but it can
    stop in a non-global minimum). With ``stall_stop`` the continuation
    ends once two floors agree to ``tol_fp``.
    """

    dim: int = 2
    s: float = 0.75
    box_radius: float = 8.0
    n_nodes: int = 64
    quad: QuadratureScheme = QuadratureScheme()
    rotations: int = 64
    eig_levels: int = 8
    coarse_factor: int = 4
    floors: tuple = tuple(2.0 ** -k for k in range(1, 7))
    radii: tuple = ()
    tol_fp: float = 1e-3
    max_iter: int = 30
    damping: float = 1.0
    taper: float = 0.1
    tau: float = None
    stall_stop: bool = True
    argmin: str = "exact"
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError("dimension n must be 2 or 3")
        if not 0.5 < self.s < 1:
            raise ConfigError(f"order s = {self.s} must lie in the open interval (1/2, 1)")
        if self.box_radius <= 0 or self.n_nodes < 3:
            raise ConfigError("need box_radius > 0 and n_nodes >= 3")
        if self.rotations < 1 or self.eig_levels < 1:
            raise ConfigError("family resolution must be positive")
        if (self.coarse_factor < 1 or self.rotations % self.coarse_factor
                or self.eig_levels % self.coarse_factor):
            raise ConfigError("coarse_factor must divide rotations and eig_levels")
        fl = np.asarray(self.floors, dtype=float)
        if fl.size == 0 or np.any(fl <= 0) or np.any(fl > 1) or np.any(np.diff(fl) >= 0):
            raise ConfigError("floors must be strictly decreasing values in (0, 1]")
        if self.tol_fp <= 0 or self.max_iter < 1:
            raise ConfigError("tol_fp must be positive and max_iter at least 1")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")
        if self.argmin not in ("exact", "pattern"):
            raise ConfigError("argmin must be 'exact' or 'pattern'")
        if not 0 <= self.taper < 0.5:
            raise ConfigError("taper must lie in [0, 0.5)")
        r = np.asarray(self.truncation_radii)
        if np.any(r <= 0) or np.any(np.diff(r) <= 0):
            raise ConfigError("truncation radii must be positive and increasing")
        if r[-1] > (1 - self.taper) * self.box_radius + 1e-12:
            raise ConfigError("largest truncation radius must stay inside the untapered box")
        bound = min(2 * self.s - 1, self.dim - 2 * self.s)
        if self.tau is not None and not 0 < self.tau < bound:
            raise ConfigError(f"tau must lie in (0, {bound:g})")

    @property
    def h(self):
        return 2 * self.box_radius / (self.n_nodes - 1)

    @property
    def truncation_radii(self):
        if self.radii:
            return tuple(float(r) for r in self.radii)
        return ((1 - self.taper) * self.box_radius,)

    @property
    def barrier_tau(self):
        if self.tau is not None:
            return self.tau
        return 0.5 * min(2 * self.s - 1, self.dim - 2 * self.s)
