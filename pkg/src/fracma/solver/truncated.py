"""Truncated-ball solves of ``D_s u = u - phi`` and the stage continuation.

Unknowns are the offsets ``w = u - phi`` at grid nodes inside ``B_k``;
outside the ball ``u = phi``. With a frozen policy (one matrix per node)
the discrete equation is linear,

    w_i = L_{A_i} phi(x_i) + (S_{A_i} w)_i,

where ``S_A`` is the translation-invariant stencil of the quadrature. The
matrix ``I - S`` is a strictly diagonally dominant M-matrix (positive
weights, ``1 +`` the center coefficient on the diagonal), so policy
iteration (Howard's algorithm) converges and the scheme is monotone.

Policies live on a :class:`~fracma.detone.DetOneLattice`. By default each
policy improvement is the exact argmin over the whole stage lattice. The
expensive part, ``L_A phi`` at every node, is computed once per member and
shared across the symmetries of ``phi``: if ``phi(Sx) = phi(x)`` for a
signed permutation ``S`` then ``L_A phi(Sx) = L_{S^T A S} phi(x)``, and the
grid and the ball are invariant under ``S``. The alternative
``argmin="pattern"`` starts from the brute-force argmin over a coarse
sub-lattice (merged with the warm start of the previous stage) and
improves by a multi-scale pattern search.
"""
import dataclasses
from dataclasses import dataclass
from functools import cached_property
import itertools
import logging
import math
import time

import numpy as np
import scipy.linalg

from .. import kernels
from ..core import GridFunction, RightHandSide, grid_nodes
from ..detone import DetOneLattice, DetOneMatrix, MatrixFamily
from ..quadrature import apply_plan, build_plan
from ..stencil import NodeOperator, plan_stencil
from .barrier import build_barrier

log = logging.getLogger(__name__)

#: Fraction of the truncation radius on which regularity is measured. The
#: truncated solution has a boundary layer at the sphere where ``u = phi``
#: is imposed, so the interior constants are read away from it.
MEASURE_FRACTION = 0.6


class ConvergenceError(RuntimeError):
    """Policy iteration did not reach the residual tolerance."""

    def __init__(self, residual, iterations, stage=None):
        self.residual = float(residual)
        self.iterations = int(iterations)
        self.stage = stage
        super().__init__(f"no convergence after {iterations} iterations "
                         f"(last residual {self.residual:.3e})")


def stage_lattice(config, floor, refine=1):
    """Fine lattice of one stage; lattices of successive floors are nested."""
    return DetOneLattice(config.dim, floor, math.log(2.0) / (config.eig_levels * refine),
                         config.rotations * refine)


def stage_family(config, floor, refine=1):
    """Coarse sub-lattice of :func:`stage_lattice` as a finite family."""
    return stage_lattice(config, floor, refine).family(config.coarse_factor)


class _Member:
    __slots__ = ("matrix", "plan", "offflat", "wts", "center", "far")

    def __init__(self, matrix, plan, offflat, wts, center, size):
        self.matrix = matrix
        self.plan = plan
        self.offflat = offflat
        self.wts = wts
        self.center = center
        self.far = np.full(size, np.nan)


def field_symmetries(phi, n, samples=64, rtol=1e-13):
    """Signed permutation matrices ``S`` with ``phi(Sx) = phi(x)`` on random samples."""
    rng = np.random.default_rng(12345)
    X = rng.standard_normal((samples, n)) * np.geomspace(0.05, 500.0, samples)[:, None]
    ref = phi(X)
    out = []
    for perm in itertools.permutations(range(n)):
        for signs in itertools.product((1.0, -1.0), repeat=n):
            S = np.zeros((n, n))
            S[np.arange(n), perm] = signs
            if np.allclose(phi(X @ S.T), ref, rtol=rtol, atol=0.0):
                out.append(S)
    return out


class TruncatedProblem:
    """Discrete Dirichlet problem on ``B_radius`` with exterior data ``phi``."""

    def __init__(self, phi, config, radius, upper=None):
        self.phi = phi
        self.config = config
        self.radius = float(radius)
        n, N = config.dim, config.n_nodes
        X = grid_nodes(config.box_radius, N, n)
        inside = np.linalg.norm(X, axis=1) < self.radius * (1 - 1e-12)
        self.flat = np.flatnonzero(inside)
        idx = np.column_stack(np.unravel_index(self.flat, (N,) * n))
        self.op = NodeOperator(config.box_radius, N, n, phi, config.s, config.quad, idx)
        self.points = self.op.points
        self.base = self.op.base
        self.unknown_of = np.full(self.op.padded_n ** n, -1, dtype=np.int64)
        self.unknown_of[self.base] = np.arange(len(self.flat))
        self.upper = upper
        self.members = []
        self._ids = {}

    @property
    def size(self):
        return len(self.flat)

    # ---- member table
    def member_id(self, A):
        key = A.key
        mid = self._ids.get(key)
        if mid is None:
            plan = build_plan(A, self.config.s, self.op.h, self.config.box_radius,
                              self.config.quad)
            offs, wts, center = plan_stencil(plan, self.config.n_nodes, self.config.dim)
            mid = len(self.members)
            self.members.append(_Member(A, plan, offs @ self.op._strides, wts, center,
                                        self.size))
            self._ids[key] = mid
        return mid

    def ids_of(self, lattice, coords):
        uniq, inv = np.unique(coords, axis=0, return_inverse=True)
        table = np.array([self.member_id(lattice.matrix(c)) for c in uniq], dtype=np.int64)
        return table[inv.ravel()]

    @cached_property
    def node_symmetries(self):
        """``[(S, perm)]`` with ``points[perm[r]] = S points[r]``."""
        N, n = self.config.n_nodes, self.config.dim
        idx = np.column_stack(np.unravel_index(self.flat, (N,) * n))
        centred = 2 * idx - (N - 1)
        out = []
        for S in field_symmetries(self.phi, n):
            img = (np.rint(centred @ S.T).astype(np.int64) + (N - 1)) // 2
            flat = np.ravel_multi_index(tuple(img.T), (N,) * n)
            perm = np.searchsorted(self.flat, flat)
            out.append((S, perm))
        return out

    @cached_property
    def orbit_rows(self):
        """One node per orbit of the symmetry group."""
        perms = np.stack([p for _, p in self.node_symmetries]) if self.node_symmetries \
            else np.arange(self.size)[None]
        return np.flatnonzero(perms.min(axis=0) == np.arange(self.size))

    def fill_far(self, ids):
        """Compute ``L_A phi`` at every node for the members ``ids``.

        Only orbit representatives are evaluated by quadrature; other nodes
        are copied from the conjugate member when it is among ``ids``.
        """
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        todo = [i for i in ids if np.isnan(self.members[i].far).any()]
        if not todo:
            return
        reps = self.orbit_rows
        for i in todo:
            self.far(i, reps)
        by_key = {self.members[i].matrix.key: i for i in ids}
        for i in todo:
            m = self.members[i]
            for S, perm in self.node_symmetries:
                conj = _conjugate(m.matrix, S)
                j = by_key.get(conj.key)
                if j is not None and not np.isnan(self.members[j].far[reps]).any():
                    m.far[perm[reps]] = self.members[j].far[reps]
        for i in todo:
            self.far(i, np.arange(self.size))

    def far(self, mid, rows):
        m = self.members[mid]
        missing = rows[np.isnan(m.far[rows])]
        if missing.size:
            m.far[missing] = apply_plan(m.plan, self.phi, self.points[missing])
        return m.far[rows]

    # ---- evaluation
    def padded(self, w):
        wpad = np.zeros(self.op.padded_n ** self.config.dim)
        wpad[self.base] = w
        return wpad

    def values_for(self, ids, rows, wpad):
        """``L_A u`` at ``rows`` with member ``ids[i]`` at row ``rows[i]``."""
        out = np.empty(len(rows))
        order = np.argsort(ids, kind="stable")
        sids = ids[order]
        cuts = np.flatnonzero(np.diff(sids)) + 1
        for grp in np.split(order, cuts):
            if grp.size == 0:
                continue
            m = self.members[ids[grp[0]]]
            r = rows[grp]
            out[grp] = self.far(ids[grp[0]], r) + kernels.stencil_apply(
                wpad, self.base[r], m.offflat, m.wts, m.center)
        return out

    def family_values(self, fam, w):
        """Brute force over a :class:`MatrixFamily`; shape ``(len(fam), m)``."""
        wpad = self.padded(w)
        rows = np.arange(self.size)
        ids = [self.member_id(A) for A in fam]
        self.fill_far(ids)
        return np.stack([self.values_for(np.full(self.size, i), rows, wpad) for i in ids])

    def argmin_over(self, ids, w):
        """Node-wise minimum over the members ``ids``: ``(index into ids, value)``."""
        self.fill_far(ids)
        wpad = self.padded(w)
        rows = np.arange(self.size)
        best = np.full(self.size, np.inf)
        arg = np.zeros(self.size, dtype=np.int64)
        for k, mid in enumerate(ids):
            v = self.values_for(np.full(self.size, mid), rows, wpad)
            better = v < best
            best[better] = v[better]
            arg[better] = k
        return arg, best

    def search(self, lattice, coords, w, scales=(1,), active=None):
        """Pattern search for the node-wise minimizing lattice point.

        Returns the improved coordinates and their values. Only nodes whose
        point moved in the previous sweep are re-examined.
        """
        wpad = self.padded(w)
        rows = np.arange(self.size)
        coords = np.array(coords, dtype=np.int64)
        vals = self.values_for(self.ids_of(lattice, coords), rows, wpad)
        active = np.ones(self.size, bool) if active is None else active.copy()
        for scale in scales:
            act = active.copy()
            while act.any():
                sel = np.flatnonzero(act)
                best = vals[sel].copy()
                best_c = coords[sel].copy()
                for mv in lattice.moves:
                    cand = lattice.shift(coords[sel], scale * mv)
                    ok = np.flatnonzero(lattice.valid(cand))
                    if ok.size == 0:
                        continue
                    v = self.values_for(self.ids_of(lattice, cand[ok]), sel[ok], wpad)
                    better = v < best[ok] - 1e-13 * (1 + np.abs(best[ok]))
                    best[ok[better]] = v[better]
                    best_c[ok[better]] = cand[ok[better]]
                moved = np.any(best_c != coords[sel], axis=1)
                coords[sel] = best_c
                vals[sel] = best
                act[:] = False
                act[sel[moved]] = True
        return coords, vals

    def coarse_start(self, lattice, w, factor, seed=None):
        """Brute-force argmin over the coarse sub-lattice.

        With ``seed`` coordinates the seed is kept wherever no coarse point
        does better, so a warm start is never made worse.
        """
        cc = lattice.coarse_coords(factor)
        wpad = self.padded(w)
        rows = np.arange(self.size)
        out = np.repeat(cc[:1], self.size, axis=0) if seed is None else np.array(seed, np.int64)
        best = self.values_for(self.ids_of(lattice, out), rows, wpad)
        for c in cc:
            v = self.values_for(np.full(self.size, self.member_id(lattice.matrix(c))), rows, wpad)
            better = v < best - 1e-13 * (1 + np.abs(best))
            best[better] = v[better]
            out[better] = c
        return out

    # ---- linear solve under a frozen policy
    def policy_solve(self, ids):
        used, policy = np.unique(ids, return_inverse=True)
        mem = [self.members[i] for i in used]
        ptr = np.zeros(len(mem) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(m.offflat) for m in mem])
        offflat = np.concatenate([m.offflat for m in mem])
        wts = np.concatenate([m.wts for m in mem])
        centers = np.array([m.center for m in mem])
        mat = kernels.assemble(self.base, self.unknown_of, policy.ravel().astype(np.int64),
                               offflat, wts, ptr, centers)
        rows = np.arange(self.size)
        rhs = np.empty(self.size)
        for k, mid in enumerate(used):
            sel = rows[policy.ravel() == k]
            rhs[sel] = self.far(mid, sel)
        return scipy.linalg.solve(mat, rhs, overwrite_a=True, check_finite=False)

    def clip(self, w):
        w = np.maximum(w, 0.0)
        return w if self.upper is None else np.minimum(w, self.upper)

    def offset_grid(self, w):
        out = np.zeros(self.config.n_nodes ** self.config.dim)
        out[self.flat] = w
        return out.reshape((self.config.n_nodes,) * self.config.dim)

    def restrict(self, offset):
        return np.asarray(offset).ravel()[self.flat].copy()

    def lambda_mins(self, ids):
        return np.array([self.members[i].matrix.lambda_min for i in ids])


def _conjugate(A, S):
    return DetOneMatrix(S.T @ A.eigvecs, A.eigvals)


@dataclass
class StageResult:
    radius: float
    floor: float
    iterations: int
    residual: float
    seconds: float
    clipped_upper: int
    members_visited: int
    w: np.ndarray = dataclasses.field(repr=False)
    ids: np.ndarray = dataclasses.field(repr=False)
    coords: np.ndarray = dataclasses.field(repr=False)
    pointwise_residual: np.ndarray = dataclasses.field(repr=False)


def _howard(problem, improve, w, config, stage):
    """Policy iteration; ``improve(w, first)`` returns ``(ids, values, state)``."""
    t0 = time.perf_counter()
    upper_hits = 0
    state = None
    for it in range(config.max_iter + 1):
        ids, vals, state = improve(w, it == 0, state)
        res = vals - w
        r = float(np.abs(res).max()) if res.size else 0.0
        log.debug("stage %s iteration %d residual %.3e", stage, it, r)
        if r <= config.tol_fp:
            break
        if it == config.max_iter:
            raise ConvergenceError(r, it, stage)
        target = problem.policy_solve(ids)
        if problem.upper is not None:
            upper_hits = int(np.sum(target > problem.upper))
        w = problem.clip((1 - config.damping) * w + config.damping * target)
    return it, r, res, ids, state, w, upper_hits, time.perf_counter() - t0


def _family_improver(problem, fam):
    def improve(w, first, state):
        V = problem.family_values(fam, w)
        k = np.argmin(V, axis=0)
        ids = np.array([problem.member_id(fam.members[j]) for j in k])
        return ids, V[k, np.arange(problem.size)], None
    return improve


def _exact_improver(problem, lattice):
    coords = lattice.coarse_coords(1)
    ids = problem.ids_of(lattice, coords)

    def improve(w, first, state):
        k, vals = problem.argmin_over(ids, w)
        return ids[k], vals, coords[k]
    return improve


def _lattice_improver(problem, lattice, config, start=None):
    def improve(w, first, coords):
        if coords is None:
            # a warm start alone would only ever explore its neighborhood
            coords = problem.coarse_start(lattice, w, config.coarse_factor, seed=start)
        scales = _scales(config.coarse_factor) if first else (1,)
        coords, vals = problem.search(lattice, coords, w, scales)
        return problem.ids_of(lattice, coords), vals, coords
    return improve


def _scales(factor):
    out, s = [], max(1, factor // 2)
    while s >= 1:
        out.append(s)
        s //= 2
    return tuple(out)


def _check_model(rhs):
    if rhs is not None and rhs.kind != "model":
        raise ValueError("the solver supports the model right-hand side g = t - phi only")


def run_stage(problem, fam, w, config, start=None):
    """One Dirichlet solve with a :class:`MatrixFamily` or a :class:`DetOneLattice`."""
    stage = (problem.radius, fam.floor)
    if isinstance(fam, MatrixFamily):
        improve = _family_improver(problem, fam)
    elif isinstance(fam, DetOneLattice) and config.argmin == "exact":
        improve = _exact_improver(problem, fam)
    elif isinstance(fam, DetOneLattice):
        improve = _lattice_improver(problem, fam, config, start)
    else:
        raise TypeError("fam must be a MatrixFamily or a DetOneLattice")
    it, r, res, ids, coords, w, hits, secs = _howard(problem, improve, problem.clip(w),
                                                     config, stage)
    return StageResult(problem.radius, fam.floor, it, r, secs, hits, len(problem.members),
                       w, ids, coords, res)


def solve_truncated(phi, rhs, fam, radius, config, barrier=None, initial=None):
    """Solve on ``B_radius`` with the family ``fam``.

    Parameters
    ----------
    phi : FarFieldModel
    rhs : RightHandSide or None
        Must be the model right-hand side.
    fam : MatrixFamily or DetOneLattice
        Brute-force argmin over a family, or pattern search on a lattice.
    radius : float
        Truncation radius ``k``.
    config : SolverConfig
    barrier : Barrier, optional
        Upper clip ``ubar``; built from ``phi`` when omitted.
    initial : ndarray, optional
        Node offset to warm-start from.

    Returns
    -------
    GridFunction
        ``phi`` plus the offset, which vanishes outside the ball.

    Raises
    ------
    ConvergenceError
        If the residual stays above ``config.tol_fp``.
    """
    _check_model(rhs)
    if barrier is None:
        barrier = build_barrier(phi, config.s, config.barrier_tau, config.quad,
                                config.box_radius, config.h)
    problem = TruncatedProblem(phi, config, radius)
    problem.upper = barrier.offset_at(problem.points)
    w0 = problem.restrict(initial) if initial is not None else np.zeros(problem.size)
    result = run_stage(problem, fam, w0, config)
    return GridFunction(config.box_radius, config.h, phi, problem.offset_grid(result.w), radius)


@dataclass
class SolveReport:
    """Iteration counts and a-posteriori measurements of one solve.

    ``residual`` is measured with the solve lattice, ``residual_dense``
    after re-searching the minimizer on a lattice twice as fine.
    """

    stages: list
    residual: float
    residual_dense: float
    lipschitz: float
    semiconcavity: float
    lipschitz_bound: float
    semiconcavity_bound: float
    min_offset: float
    eta0: float
    measure_radius: float
    monotonicity_violations: int
    sandwich_violations: int
    barrier_multiple: float
    barrier_tau: float
    h: float
    seconds: float
    backend: str = kernels.BACKEND

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["stages"] = [dict(x) for x in self.stages]
        return d


@dataclass
class SolveOutput:
    """Node-wise data of the final stage, for the solution CSV."""

    flat: np.ndarray
    offset: np.ndarray
    residual: np.ndarray
    residual_dense: np.ndarray
    argmin_lambda_min: np.ndarray
    stage_offsets: list


def solve(phi, config, barrier=None, rhs=None, with_output=False):
    """Continuation over truncation radii and then over ellipticity floors.

    The first floor is used for every radius in ``config.truncation_radii``
    (solutions increase with the radius); the remaining floors run on the
    largest radius, each warm-started from the previous stage (solutions
    decrease as the family grows). With ``config.stall_stop`` the loop
    stops once two successive floors differ by at most ``tol_fp``.

    Returns
    -------
    (GridFunction, SolveReport) or (GridFunction, SolveReport, SolveOutput)
    """
    from .checks import check_regularity

    _check_model(rhs)
    t0 = time.perf_counter()
    if barrier is None:
        barrier = build_barrier(phi, config.s, config.barrier_tau, config.quad,
                                config.box_radius, config.h)
    radii = config.truncation_radii
    schedule = [(r, config.floors[0]) for r in radii]
    schedule += [(radii[-1], f) for f in config.floors[1:]]
    stages, offsets = [], []
    problem, w, prev_offset, coords = None, None, None, None
    mono = 0
    for radius, floor in schedule:
        if problem is None or problem.radius != radius:
            problem = TruncatedProblem(phi, config, radius)
            problem.upper = barrier.offset_at(problem.points)
            w = problem.restrict(prev_offset) if prev_offset is not None else np.zeros(problem.size)
            coords = None
        lattice = stage_lattice(config, floor)
        result = run_stage(problem, lattice, w, config, start=coords)
        w, coords = result.w, result.coords
        offset = problem.offset_grid(w)
        if prev_offset is not None:
            diff = offset - prev_offset
            # radii: non-decreasing; floors: non-increasing
            bad = -diff if stages[-1]["radius"] < radius else diff
            mono += int(np.sum(bad > config.tol_fp))
            change = float(np.abs(diff).max())
        else:
            change = math.inf
        stages.append({"radius": radius, "floor": floor, "iterations": result.iterations,
                       "residual": result.residual, "seconds": result.seconds,
                       "clipped_upper": result.clipped_upper,
                       "members_visited": result.members_visited, "change": change})
        log.info("stage radius=%g floor=%g iterations=%d residual=%.2e change=%.2e (%.1fs)",
                 radius, floor, result.iterations, result.residual, change, result.seconds)
        offsets.append(offset)
        prev_offset = offset
        last = result
        if config.stall_stop and floor != config.floors[0] and change <= config.tol_fp:
            break

    u = GridFunction(config.box_radius, config.h, phi, offsets[-1], radii[-1])
    dense = stage_lattice(config, stages[-1]["floor"], refine=2)
    _, dense_vals = problem.search(dense, 2 * last.coords, w, _scales(2))
    residual_dense = float(np.abs(dense_vals - w).max())
    r_meas = MEASURE_FRACTION * radii[-1]
    inner = np.linalg.norm(problem.points, axis=1) <= r_meas
    eta0 = float((1 - config.s) * dense_vals[inner].min())
    reg = check_regularity(u, rhs or RightHandSide.model(phi), phi, region_radius=r_meas)
    sandwich = int(np.sum(w < 0) + np.sum(w > problem.upper))
    report = SolveReport(stages, last.residual, residual_dense, reg["lipschitz"],
                         reg["semiconcavity"], reg["lipschitz_bound"],
                         reg["semiconcavity_bound"], float(w.min()), eta0, r_meas, mono,
                         sandwich, barrier.M, barrier.tau, config.h,
                         time.perf_counter() - t0)
    if not with_output:
        return u, report
    out = SolveOutput(problem.flat, w, last.pointwise_residual, dense_vals - w,
                      problem.lambda_mins(last.ids), offsets)
    return u, report, out
