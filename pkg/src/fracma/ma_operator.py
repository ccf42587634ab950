"""The fractional Monge-Ampere operator as a minimum over matrix families.

``D_s u(x) = inf { L_A u(x) : A SPD, det A = 1 }`` is approximated by the
minimum over a finite :class:`~fracma.detone.MatrixFamily`. Restricting the
family to ``lambda_min(A) >= theta`` gives the uniformly elliptic
approximation; the ellipticity certificate checks a posteriori that this
restriction is inert on a region.
"""
from dataclasses import dataclass, field
import itertools
import math

import numpy as np

from .detone import DetOneMatrix, minimizing_matrix, rotation_net, sample_detone_family
from .quadrature import apply_plan, build_plan, sphere_area, structural_constants
from .stencil import NodeOperator, node_indices_of


@dataclass(frozen=True)
class OperatorResult:
    value: float
    argmin: DetOneMatrix
    argmin_lambda_min: float
    floor: float


def family_values(gf, X, fam, quad, s):
    """``L_A u`` for every member at every point; shape ``(len(fam), m)``.

    Grid nodes of a grid function with an offset go through the stencil
    form, other points through the pointwise quadrature; both give the
    same numbers up to roundoff.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ValueError("evaluation points must be finite")
    if np.abs(X).max() > gf.box_radius * (1 + 1e-12):
        raise ValueError("evaluation point lies outside the grid box")
    idx = node_indices_of(gf, X) if getattr(gf, "offset", None) is not None else None
    if idx is not None:
        op = NodeOperator.for_grid_function(gf, s, quad, idx)
        return op.family_values(fam, gf.offset)
    return np.stack([apply_plan(build_plan(A, s, gf.h, gf.box_radius, quad), gf, X)
                     for A in fam])


def eval_Ds(gf, x, fam, quad, s):
    """Minimum of ``L_A u(x)`` over the family, with the minimizing member."""
    vals = family_values(gf, np.asarray(x, dtype=float)[None], fam, quad, s)[:, 0]
    k = int(np.argmin(vals))
    A = fam.members[k]
    return OperatorResult(float(vals[k]), A, A.lambda_min, fam.floor)


def pucci_family(n, theta, res=6, rotations=8):
    """SPD matrices with ``theta I <= A <= theta^(1-n) I`` (no determinant constraint).

    A geometric eigenvalue grid crossed with a rotation net, together with
    the determinant-one members of the same floor, so that the Pucci pair
    always brackets the constrained minimum.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if theta == 1:
        return [np.eye(n)]
    levels = np.geomspace(theta, theta ** (1 - n), res)
    mats = {}
    for lam in itertools.combinations_with_replacement(levels, n):
        for R in rotation_net(n, rotations):
            A = (R * np.array(lam)) @ R.T
            mats[np.round(A, 12).tobytes()] = A
    for m in sample_detone_family(n, theta, res, rotations=rotations):
        mats[m.key] = m.matrix
    return list(mats.values())


def pucci_extremal(gf, x, theta, sign, quad, s, res=6, rotations=8):
    """Maximum (``"plus"``) or minimum (``"minus"``) of ``L_A u(x)`` over the Pucci class."""
    if sign not in ("plus", "minus"):
        raise ValueError("sign must be 'plus' or 'minus'")
    mats = pucci_family(gf.dim, theta, res, rotations)
    vals = family_values(gf, np.asarray(x, dtype=float)[None], mats, quad, s)[:, 0]
    return float(vals.max() if sign == "plus" else vals.min())


def degeneracy_threshold(L, C, s, n, eta0):
    """``(mu0 / (n mu1))^((n-1)/(2s))``: floors below it leave ``D_s`` unchanged."""
    k = structural_constants(L, C, s, n, eta0)
    return (k.mu0 / (n * k.mu1)) ** ((n - 1) / (2 * s))


@dataclass
class CertificateReport:
    theta: float
    threshold: float
    eta0: float
    lipschitz: float
    semiconcavity: float
    precondition: str
    n_points: int
    max_gap: float
    min_argmin_lambda: float
    tolerance: float
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return self.precondition == "met" and not self.violations

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def ellipticity_certificate(gf, region, fam_dense, theta=None, *, quad, s,
                            lipschitz, semiconcavity, tol=1e-6):
    """Check that the floor-``theta`` family reproduces the dense minimum.

    ``eta0`` is measured as the regional minimum of ``(1 - s) D_s u`` with
    the dense family. With ``theta=None`` the floor is half the degeneracy
    threshold of the measured constants.
    """
    region = np.atleast_2d(np.asarray(region, dtype=float))
    vals = family_values(gf, region, fam_dense, quad, s)
    k = np.argmin(vals, axis=0)
    dense = vals[k, np.arange(vals.shape[1])]
    eta0 = float((1 - s) * dense.min())
    n = gf.dim
    if eta0 > 0 and lipschitz > 0 and semiconcavity > 0:
        threshold = degeneracy_threshold(lipschitz, semiconcavity, s, n, eta0)
    else:
        threshold = 0.0
    if theta is None:
        theta = 0.5 * threshold
    met = eta0 > 0 and 0 < theta < threshold
    lam = fam_dense.lambda_mins
    floor_mask = lam >= theta * (1 - 1e-12)
    report = CertificateReport(float(theta), float(threshold), eta0, float(lipschitz),
                               float(semiconcavity), "met" if met else "precondition unmet",
                               len(region), 0.0, float(lam[k].min()), tol)
    if not met or not floor_mask.any():
        return report
    floor_vals = vals[floor_mask].min(axis=0)
    gap = floor_vals - dense
    report.max_gap = float(gap.max())
    for i in range(len(region)):
        if gap[i] > tol * max(1.0, abs(dense[i])) or lam[k[i]] < theta:
            report.violations.append({"point": region[i].tolist(), "gap": float(gap[i]),
                                      "argmin_lambda_min": float(lam[k[i]])})
    return report


def fd_hessian(gf, x, h=None):
    """Centered second differences at spacing ``h`` (default grid spacing)."""
    x = np.asarray(x, dtype=float)
    h = gf.h if h is None else h
    n = x.size
    E = np.eye(n) * h
    H = np.empty((n, n))
    f0 = gf(x[None])[0]
    for i in range(n):
        H[i, i] = (gf((x + E[i])[None])[0] + gf((x - E[i])[None])[0] - 2 * f0) / h ** 2
        for j in range(i):
            pts = np.stack([x + E[i] + E[j], x + E[i] - E[j], x - E[i] + E[j], x - E[i] - E[j]])
            v = gf(pts)
            H[i, j] = H[j, i] = (v[0] - v[1] - v[2] + v[3]) / (4 * h ** 2)
    return H


@dataclass(frozen=True)
class LocalLimitSweep:
    s_list: tuple
    values: tuple
    extrapolated: float
    reference: float
    reference_trace: float


def local_limit_sweep(gf, x, s_list, fam_dense, quad):
    """``(1 - s) D_s u(x)`` along ``s_list`` and its linear fit at ``s = 1``.

    The reference is ``(omega_n / 4) det(H)^(1/n)`` from the finite-difference
    Hessian, cross-checked through the trace minimum
    ``(omega_n / (4 n)) inf trace(A A^T H)``.
    """
    s_arr = np.asarray(s_list, dtype=float)
    if s_arr.size < 2 or np.any(np.diff(s_arr) <= 0):
        raise ValueError("s_list must be strictly increasing with at least two entries")
    if s_arr[0] <= 0.5 or s_arr[-1] >= 1:
        raise ValueError("s values must lie in (1/2, 1)")
    x = np.asarray(x, dtype=float)
    vals = [(1 - s) * eval_Ds(gf, x, fam_dense, quad, s).value for s in s_arr]
    slope, intercept = np.polyfit(1 - s_arr, vals, 1)
    H = fd_hessian(gf, x)
    H = 0.5 * (H + H.T)
    n = x.size
    w = sphere_area(n)
    lam = np.linalg.eigvalsh(H)
    det_term = float(np.prod(np.clip(lam, 0, None)) ** (1 / n))
    trace_min = minimizing_matrix(H)[1] if lam.min() >= -1e-10 else 0.0
    return LocalLimitSweep(tuple(s_arr.tolist()), tuple(float(v) for v in vals),
                           float(intercept), w / 4 * det_term, w / (4 * n) * trace_min)


def local_limit(gf, x, s_list, fam_dense, quad):
    """Extrapolated ``lim_{s->1} (1 - s) D_s u(x)`` and its local reference."""
    sweep = local_limit_sweep(gf, x, s_list, fam_dense, quad)
    return sweep.extrapolated, sweep.reference
