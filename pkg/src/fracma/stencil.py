"""Grid-node form of the quadrature.

For ``u = far_field + I[offset]`` evaluated at grid nodes, every quadrature
point ``x +- y_q`` interpolates the offset with weights that do not depend
on ``x``. ``L_A u`` at the nodes is therefore the far-field part (analytic)
plus a translation-invariant stencil applied to the offset:

    L_A u(x_i) = L_A far(x_i) + sum_k c_k offset(x_i + h o_k) - c_0 offset(x_i)

This is exactly the pointwise quadrature of :mod:`fracma.quadrature` with
the offset extended by zero beyond the box.
"""
from functools import lru_cache

import numpy as np

from . import kernels
from .quadrature import apply_plan, build_plan


def plan_stencil(plan, n_nodes, dim):
    """Integer offsets, weights and center coefficient of a plan on a grid."""
    return _stencil(id(plan), plan, n_nodes, dim)


@lru_cache(maxsize=4096)
def _stencil(_plan_id, plan, n_nodes, dim):
    top = n_nodes - 1
    Y = np.vstack([plan.ys, -plan.ys]) / plan.h
    W = np.concatenate([plan.ws, plan.ws])
    near = np.round(Y)
    Y = np.where(np.abs(Y - near) < 1e-9, near, Y)
    base = np.floor(Y).astype(np.int64)
    frac = Y - base
    offs, wts = [], []
    for c in range(1 << dim):
        bits = np.array([(c >> d) & 1 for d in range(dim)])
        w = W * np.prod(np.where(bits, frac, 1 - frac), axis=1)
        o = base + bits
        keep = (w != 0) & (np.abs(o).max(axis=1) <= top)
        offs.append(o[keep])
        wts.append(w[keep])
    offs = np.vstack(offs)
    wts = np.concatenate(wts)
    width = 2 * top + 1
    key = np.zeros(len(offs), dtype=np.int64)
    for d in range(dim):
        key = key * width + offs[:, d] + top
    uniq, inv = np.unique(key, return_inverse=True)
    merged = np.bincount(inv, weights=wts)
    out = np.empty((len(uniq), dim), dtype=np.int64)
    rem = uniq.copy()
    for d in range(dim - 1, -1, -1):
        out[:, d] = rem % width - top
        rem //= width
    center = 2 * (plan.ws.sum() + plan.cw.sum())
    return out, merged, float(center)


class NodeOperator:
    """``L_A`` at selected nodes of one grid, for any offset on that grid.

    Parameters
    ----------
    box_radius, n_nodes, dim
        Grid geometry.
    far_field
        Analytic part shared by all grid functions evaluated.
    s : float
    quad : QuadratureScheme
    node_index : ndarray of int, shape (m, dim)
        Multi-indices of the evaluation nodes.
    """

    def __init__(self, box_radius, n_nodes, dim, far_field, s, quad, node_index):
        self.box_radius = float(box_radius)
        self.n_nodes = int(n_nodes)
        self.dim = dim
        self.h = 2 * self.box_radius / (self.n_nodes - 1)
        self.far_field = far_field
        self.s = s
        self.quad = quad
        self.node_index = np.asarray(node_index, dtype=np.int64).reshape(-1, dim)
        self.pad = self.n_nodes - 1
        self.padded_n = self.n_nodes + 2 * self.pad
        strides = self.padded_n ** np.arange(dim - 1, -1, -1)
        self._strides = strides
        self.base = (self.node_index + self.pad) @ strides
        self.points = -self.box_radius + self.h * self.node_index
        self._cache = {}

    @classmethod
    def for_grid_function(cls, gf, s, quad, node_index):
        return cls(gf.box_radius, gf.n_nodes, gf.dim, gf.far_field, s, quad, node_index)

    def padded(self, offset):
        """Zero-padded flat copy of a node offset array."""
        out = np.zeros((self.padded_n,) * self.dim)
        if offset is not None:
            sl = tuple(slice(self.pad, self.pad + self.n_nodes) for _ in range(self.dim))
            out[sl] = np.asarray(offset).reshape((self.n_nodes,) * self.dim)
        return out.ravel()

    def member(self, A):
        """``(offflat, weights, center, far-field values)`` for matrix ``A``."""
        key = getattr(A, "key", None)
        if key is None:
            key = np.round(np.asarray(A, dtype=float), 12).tobytes()
        hit = self._cache.get(key)
        if hit is None:
            plan = build_plan(A, self.s, self.h, self.box_radius, self.quad)
            offs, wts, center = plan_stencil(plan, self.n_nodes, self.dim)
            far = apply_plan(plan, self.far_field, self.points)
            hit = (offs @ self._strides, wts, center, far)
            self._cache[key] = hit
        return hit

    def apply(self, A, wpad):
        offflat, wts, center, far = self.member(A)
        return far + kernels.stencil_apply(wpad, self.base, offflat, wts, center)

    def family_values(self, fam, offset):
        """Array of shape ``(len(fam), m)`` with ``L_A u`` at the nodes."""
        wpad = self.padded(offset)
        return np.stack([self.apply(A, wpad) for A in fam])


def node_indices_of(gf, X, tol=1e-9):
    """Multi-indices of points that are grid nodes, or ``None``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    f = (X + gf.box_radius) / gf.h
    idx = np.round(f)
    if np.any(np.abs(f - idx) > tol) or np.any(idx < 0) or np.any(idx > gf.n_nodes - 1):
        return None
    return idx.astype(np.int64)
