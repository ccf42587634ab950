"""Symmetric positive definite matrices of determinant one.

Includes the closed-form minimizer of ``trace(A A^T B)`` over such
matrices and finite families sampled on a log-spectral lattice crossed
with a rotation net.
"""
from dataclasses import dataclass
from functools import cached_property
import itertools
import json
import math

import numpy as np
import scipy.linalg

EIG_CLAMP = 1e-10


@dataclass(frozen=True, eq=False)
class DetOneMatrix:
    """SPD matrix ``P diag(eigvals) P^T`` with product of eigenvalues one.

    Parameters
    ----------
    eigvecs : ndarray
        Orthogonal matrix whose columns are eigenvectors.
    eigvals : ndarray
        Positive eigenvalues. A product within 1e-8 of one is renormalized
        exactly; anything further away is rejected.
    """

    eigvecs: np.ndarray
    eigvals: np.ndarray

    def __post_init__(self):
        P = np.array(self.eigvecs, dtype=float, ndmin=2)
        lam = np.array(self.eigvals, dtype=float).ravel()
        n = lam.size
        if P.shape != (n, n):
            raise ValueError("eigvecs and eigvals have inconsistent sizes")
        if not np.allclose(P @ P.T, np.eye(n), atol=1e-10):
            raise ValueError("eigvecs must be orthogonal")
        if lam.min() <= 0:
            raise ValueError("eigenvalues must be positive")
        logdet = np.log(lam).sum()
        if abs(logdet) > 1e-8:
            raise ValueError(f"determinant {math.exp(logdet)} is not one")
        lam = lam * math.exp(-logdet / n)
        object.__setattr__(self, "eigvecs", P)
        object.__setattr__(self, "eigvals", lam)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), np.ones(n))

    @classmethod
    def from_matrix(cls, A):
        A = np.asarray(A, dtype=float)
        if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("matrix must be symmetric")
        lam, P = np.linalg.eigh(0.5 * (A + A.T))
        return cls(P, lam)

    @property
    def dim(self):
        return self.eigvals.size

    @cached_property
    def matrix(self):
        P = self.eigvecs
        return (P * self.eigvals) @ P.T

    @cached_property
    def inverse(self):
        P = self.eigvecs
        return (P / self.eigvals) @ P.T

    @property
    def lambda_min(self):
        return float(self.eigvals.min())

    @property
    def lambda_max(self):
        return float(self.eigvals.max())

    @cached_property
    def key(self):
        """Hashable fingerprint used for caching quadrature plans."""
        return np.round(self.matrix, 12).tobytes()

    def to_dict(self):
        return {"eigvecs": self.eigvecs.tolist(), "eigvals": self.eigvals.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["eigvecs"]), np.array(d["eigvals"]))


@dataclass(frozen=True, eq=False)
class MatrixFamily:
    """Finite set of determinant-one matrices with ``lambda_min >= floor``."""

    members: tuple
    floor: float

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("family must not be empty")
        if not 0 < self.floor <= 1:
            raise ValueError("floor must lie in (0, 1]")
        for m in members:
            if m.lambda_min < self.floor * (1 - 1e-12):
                raise ValueError("member violates the eigenvalue floor")
        n = members[0].dim
        if not any(np.allclose(m.matrix, np.eye(n), atol=1e-12) for m in members):
            raise ValueError("the identity must be a member")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def dim(self):
        return self.members[0].dim

    @cached_property
    def stack(self):
        return np.stack([m.matrix for m in self.members])

    @cached_property
    def lambda_mins(self):
        return np.array([m.lambda_min for m in self.members])

    def subset(self, floor):
        """Members with ``lambda_min >= floor``."""
        keep = tuple(m for m in self.members if m.lambda_min >= floor * (1 - 1e-12))
        return MatrixFamily(keep, max(floor, self.floor))

    def to_json(self):
        return json.dumps({"floor": self.floor,
                           "members": [m.to_dict() for m in self.members]}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple(DetOneMatrix.from_dict(m) for m in d["members"]), d["floor"])


def polar_decompose(M):
    """Factor an invertible ``M`` as ``O S`` with ``O`` orthogonal, ``S`` SPD."""
    M = np.asarray(M, dtype=float)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.min() <= 1e-14 * sv.max():
        raise ValueError("matrix is singular")
    O, S = scipy.linalg.polar(M, side="right")
    return O, 0.5 * (S + S.T)


def minimizing_matrix(B):
    """Closed-form minimizer of ``trace(A A^T B)`` over ``det A = 1``.

    Parameters
    ----------
    B : array_like
        Symmetric positive semidefinite matrix. Eigenvalues down to
        ``-1e-10`` are clamped to zero.

    Returns
    -------
    A : DetOneMatrix or None
        The minimizer, or ``None`` when ``B`` is singular (the infimum is
        then zero and not attained).
    value : float
        ``n det(B)^(1/n)``.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("B must be square")
    if not np.allclose(B, B.T, rtol=0, atol=1e-12 * max(1.0, np.abs(B).max())):
        raise ValueError("B must be symmetric")
    lam, P = np.linalg.eigh(0.5 * (B + B.T))
    if lam.min() < -EIG_CLAMP:
        raise ValueError("B has a negative eigenvalue")
    lam = np.clip(lam, 0.0, None)
    n = lam.size
    if lam.min() <= EIG_CLAMP:
        return None, 0.0
    logdet = np.log(lam).sum()
    eig_a = np.exp(logdet / (2 * n)) / np.sqrt(lam)
    return DetOneMatrix(P, eig_a), float(n * math.exp(logdet / n))


def inf_trace_sampled(B, fam):
    """``min`` over the family of ``trace(A A^T B)``."""
    B = np.asarray(B, dtype=float)
    if not np.allclose(B, B.T, atol=1e-12 * max(1.0, np.abs(B).max())):
        raise ValueError("B must be symmetric")
    if len(fam) == 0:
        raise ValueError("empty family")
    S = fam.stack
    return float(np.einsum("mij,mjk,ki->m", S, S, B).min())


# --------------------------------------------------------------------------
# sampling


def _rotation_2d(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def _axis_rotation(axis, t):
    R = np.eye(3)
    i, j = [k for k in range(3) if k != axis]
    c, s = math.cos(t), math.sin(t)
    R[i, i], R[i, j], R[j, i], R[j, j] = c, -s, s, c
    return R


def rotation_net(n, res):
    """Uniform angle grid (n = 2) or products of three axis grids (n = 3)."""
    angles = np.pi * np.arange(res) / res
    if n == 1:
        return [np.eye(1)]
    if n == 2:
        return [_rotation_2d(t) for t in angles]
    if n == 3:
        return [_axis_rotation(0, a) @ _axis_rotation(1, b) @ _axis_rotation(2, c)
                for a, b, c in itertools.product(angles, repeat=3)]
    raise ValueError("rotation nets are provided for n <= 3")


def spectral_lattice(n, floor, step):
    """Log-eigenvalue tuples ``step * k`` with ``sum k = 0`` above the floor.

    Tuples are sorted ascending; the rotation net supplies orderings.
    """
    kmax = int(math.floor(math.log(1 / floor) / step + 1e-9))
    out = []
    if n == 1:
        return [np.zeros(1)]
    for head in itertools.product(range(-kmax, kmax * (n - 1) + 1), repeat=n - 1):
        last = -sum(head)
        k = sorted(list(head) + [last])
        if k[0] >= -kmax and list(head) + [last] == k:
            out.append(step * np.array(k, dtype=float))
    return out


def extremal_spectra(n, floor):
    """The two spectra with ``lambda_min = floor`` at the extremes of the set.

    ``{floor (n-1 times), floor^(1-n)}`` attains the largest possible
    ``lambda_max``; ``{floor, floor^(-1/(n-1)) (n-1 times)}`` is the most
    balanced one with the floor attained.
    """
    lf = math.log(floor)
    a = np.array([lf] * (n - 1) + [-(n - 1) * lf])
    b = np.array([lf] + [-lf / (n - 1)] * (n - 1))
    return [a, b]


def sample_detone_family(n, floor, res, eig_step=None, rotations=None):
    """Sampled family over ``{det A = 1, lambda_min(A) >= floor}``.

    Parameters
    ----------
    n : int
        Dimension.
    floor : float
        Eigenvalue floor in ``(0, 1]``.
    res : int
        Default resolution: number of log-eigenvalue levels between the
        floor and one, and number of angles per rotation axis.
    eig_step : float, optional
        Log-eigenvalue step. A floor-independent step makes families for
        successive floors nested.
    rotations : int, optional
        Angles per axis of the rotation net (defaults to ``res``).
    """
    if not 0 < floor <= 1:
        raise ValueError("floor must lie in (0, 1]")
    eye = DetOneMatrix.identity(n)
    if floor == 1:
        return MatrixFamily((eye,), 1.0)
    if eig_step is None:
        eig_step = math.log(1 / floor) / max(res, 1)
    rots = rotation_net(n, rotations or res)
    spectra = spectral_lattice(n, floor, eig_step) + extremal_spectra(n, floor)
    members = [eye]
    seen = {eye.key}
    for logs in spectra:
        lam = np.exp(logs - logs.mean())
        if np.allclose(lam, 1.0):
            continue
        for R in rots:
            m = DetOneMatrix(R, lam)
            if m.lambda_min < floor * (1 - 1e-12) or m.key in seen:
                continue
            seen.add(m.key)
            members.append(m)
    return MatrixFamily(tuple(members), floor)


class DetOneLattice:
    """Determinant-one matrices ``R diag(exp(step k)) R^T`` on an integer lattice.

    A lattice point is an integer vector ``(k_1..k_n, j_1..j_a)``: ``k`` has
    zero sum and ``min k >= -kmax`` (the eigenvalue floor), and ``j`` indexes
    rotation angles ``pi j / rotations`` (one angle for n = 2, three axis
    angles for n = 3). The lattice is never enumerated by the solver; it is
    searched locally from a coarse sub-lattice.

    Parameters
    ----------
    n : int
    floor : float
        Eigenvalue floor in ``(0, 1]``.
    eig_step : float
        Log-eigenvalue spacing.
    rotations : int
        Angles per half turn.
    """

    def __init__(self, n, floor, eig_step, rotations):
        if n not in (2, 3):
            raise ValueError("lattices are provided for n = 2, 3")
        if not 0 < floor <= 1 or eig_step <= 0 or rotations < 1:
            raise ValueError("need floor in (0, 1], eig_step > 0 and rotations >= 1")
        self.n = n
        self.floor = float(floor)
        self.eig_step = float(eig_step)
        self.rotations = int(rotations)
        self.kmax = int(math.floor(math.log(1 / floor) / eig_step + 1e-9))
        self.n_angles = 1 if n == 2 else 3
        # R(theta) D R(theta)^T has period pi in 2-d; use full turns in 3-d
        self.period = self.rotations if n == 2 else 2 * self.rotations
        self._cache = {}

    @property
    def width(self):
        return self.n + self.n_angles

    def with_floor(self, floor):
        return DetOneLattice(self.n, floor, self.eig_step, self.rotations)

    def refined(self, factor=2):
        """Lattice ``factor`` times finer; coordinates scale by ``factor``."""
        return DetOneLattice(self.n, self.floor, self.eig_step / factor, self.rotations * factor)

    @cached_property
    def moves(self):
        """Unit moves: one eigenvalue pair exchange or one angle step."""
        out = []
        for i, j in itertools.permutations(range(self.n), 2):
            v = np.zeros(self.width, dtype=np.int64)
            v[i], v[j] = 1, -1
            out.append(v)
        for a in range(self.n_angles):
            for sgn in (1, -1):
                v = np.zeros(self.width, dtype=np.int64)
                v[self.n + a] = sgn
                out.append(v)
        return np.array(out)

    def shift(self, coords, move):
        out = np.asarray(coords, dtype=np.int64) + move
        out[:, self.n:] %= self.period
        return out

    def valid(self, coords):
        return np.asarray(coords)[:, :self.n].min(axis=1) >= -self.kmax

    def _rotation(self, j):
        t = [math.pi * x / self.rotations for x in j]
        if self.n == 2:
            return _rotation_2d(t[0])
        return _axis_rotation(0, t[0]) @ _axis_rotation(1, t[1]) @ _axis_rotation(2, t[2])

    def matrix(self, coord):
        key = tuple(int(c) for c in coord)
        hit = self._cache.get(key)
        if hit is None:
            k = np.array(key[:self.n], dtype=float)
            if k.sum() != 0 or k.min() < -self.kmax:
                raise ValueError(f"{key} is not a lattice point")
            hit = DetOneMatrix(self._rotation(key[self.n:]), np.exp(self.eig_step * k))
            self._cache[key] = hit
        return hit

    def coarse_coords(self, factor=1):
        """Points with every coordinate a multiple of ``factor``.

        Eigenvalue tuples are ascending and angles cover one half turn per
        axis, which reaches every matrix of the coarse lattice.
        """
        top = self.kmax // factor
        eig = []
        for head in itertools.product(range(-top, top * (self.n - 1) + 1), repeat=self.n - 1):
            k = list(head) + [-sum(head)]
            if k == sorted(k) and k[0] >= -top:
                eig.append([factor * x for x in k])
        steps = range(0, self.rotations, factor)
        out = []
        for k in eig:
            if not any(k):
                out.append(k + [0] * self.n_angles)
                continue
            for j in itertools.product(steps, repeat=self.n_angles):
                out.append(k + list(j))
        return np.array(out, dtype=np.int64)

    def family(self, factor=1):
        """The coarse sub-lattice as a :class:`MatrixFamily`."""
        seen, members = set(), []
        for c in self.coarse_coords(factor):
            m = self.matrix(c)
            if m.key not in seen:
                seen.add(m.key)
                members.append(m)
        return MatrixFamily(tuple(members), self.floor)
