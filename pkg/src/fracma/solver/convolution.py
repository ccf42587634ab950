"""Discrete sup- and inf-convolutions of the node offset."""
import itertools
import math

import numpy as np

from .. import kernels


def _lattice_offsets(dim, reach):
    rng = range(-reach, reach + 1)
    return np.array(list(itertools.product(rng, repeat=dim)), dtype=np.int64).reshape(-1, dim)


def sup_inf_convolution(gf, eps, sign="sup"):
    """``sup_y {o(y) - |x - y|^2 / eps}`` (or the inf version) of the offset ``o``.

    The search is over lattice nodes within ``sqrt((2 |o|_inf + 1) eps)``;
    nodes beyond the box carry offset zero. The far field is untouched.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if sign not in ("sup", "inf"):
        raise ValueError("sign must be 'sup' or 'inf'")
    if gf.offset is None:
        return gf
    off = gf.offset.ravel()
    vals = off if sign == "sup" else -off
    radius = math.sqrt((2 * np.abs(off).max() + 1) * eps)
    reach = int(math.floor(radius / gf.h + 1e-9))
    offs = _lattice_offsets(gf.dim, reach)
    dist2 = (offs * gf.h) ** 2
    dist2 = dist2.sum(axis=1)
    keep = dist2 <= radius ** 2 * (1 + 1e-12)
    offs, pen = offs[keep], dist2[keep] / eps
    out = kernels.supconv(np.ascontiguousarray(vals), gf.n_nodes, gf.dim, offs, pen)
    if sign == "inf":
        out = -out
    return gf.with_offset(out.reshape(gf.offset.shape))
