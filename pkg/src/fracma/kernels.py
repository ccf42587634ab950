"""Hot loops of the library, each in a numba and a pure-numpy flavour.

The public functions dispatch on :data:`fracma._backend.USE_NUMBA`. Both
flavours are importable as ``<name>_numba`` and ``<name>_numpy`` so the
test suite and the benchmark can compare them directly.

Grids are stored flat in C order with ``n_nodes`` points per axis. The
stencil kernels work on a zero-padded copy of the grid so that every
stencil offset lands inside the array without bounds checks.
"""
import numpy as np

from ._backend import USE_NUMBA, njit, prange

_CHUNK = 256


# --------------------------------------------------------------------------
# multilinear interpolation of a node field extended by zero beyond the box


@njit
def interp_numba(field, n_nodes, lo, h, pts):
    m, n = pts.shape
    out = np.zeros(m)
    base = np.empty(n, np.int64)
    frac = np.empty(n)
    for p in range(m):
        inside = True
        for d in range(n):
            f = (pts[p, d] - lo) / h
            k = int(np.floor(f))
            r = f - k
            if r > 1.0 - 1e-12:
                k += 1
                r = 0.0
            elif r < 1e-12:
                r = 0.0
            if k < -1 or k > n_nodes - 1:
                inside = False
                break
            base[d] = k
            frac[d] = r
        if not inside:
            continue
        acc = 0.0
        for c in range(1 << n):
            w = 1.0
            flat = 0
            for d in range(n):
                bit = (c >> d) & 1
                j = base[d] + bit
                if j < 0 or j >= n_nodes:
                    w = 0.0
                    break
                w *= frac[d] if bit else 1.0 - frac[d]
                flat = flat * n_nodes + j
            if w != 0.0:
                acc += w * field[flat]
        out[p] = acc
    return out


def interp_numpy(field, n_nodes, lo, h, pts):
    pts = np.asarray(pts, dtype=float)
    m, n = pts.shape
    f = (pts - lo) / h
    base = np.floor(f).astype(np.int64)
    frac = f - base
    up = frac > 1.0 - 1e-12
    base[up] += 1
    frac[up] = 0.0
    frac[frac < 1e-12] = 0.0
    out = np.zeros(m)
    for c in range(1 << n):
        w = np.ones(m)
        flat = np.zeros(m, dtype=np.int64)
        for d in range(n):
            bit = (c >> d) & 1
            j = base[:, d] + bit
            w *= np.where((j >= 0) & (j < n_nodes), frac[:, d] if bit else 1.0 - frac[:, d], 0.0)
            flat = flat * n_nodes + np.clip(j, 0, n_nodes - 1)
        out += w * field[flat]
    return out


# --------------------------------------------------------------------------
# far-field model: sqrt(1 + <Qx,x>) + a (1 + |x|^2)^(-eps/2) - shift


@njit
def _phi_at(x, Q, a, eps, shift):
    n = x.shape[0]
    q = 0.0
    r2 = 0.0
    for i in range(n):
        r2 += x[i] * x[i]
        for j in range(n):
            q += Q[i, j] * x[i] * x[j]
    val = np.sqrt(1.0 + q) - shift
    if a != 0.0:
        val += a * (1.0 + r2) ** (-0.5 * eps)
    return val


@njit
def phi_numba(pts, Q, a, eps, shift):
    m = pts.shape[0]
    out = np.empty(m)
    for p in range(m):
        out[p] = _phi_at(pts[p], Q, a, eps, shift)
    return out


def phi_numpy(pts, Q, a, eps, shift):
    pts = np.asarray(pts, dtype=float)
    q = np.einsum("mi,ij,mj->m", pts, Q, pts)
    val = np.sqrt(1.0 + q) - shift
    if a != 0.0:
        val = val + a * (1.0 + np.einsum("mi,mi->m", pts, pts)) ** (-0.5 * eps)
    return val


# --------------------------------------------------------------------------
# L_A applied to the far-field model at many points
#
#   sum_q W_q delta(phi, x, y_q) + sum_cw (beta - 2 phi(x)) + alpha_sum
#
# where beta = -2 shift is the constant of the far-field asymptote.


@njit(parallel=True)
def lphi_numba(X, ys, ws, sum_cw, alpha_sum, Q, a, eps, shift):
    m, n = X.shape
    nq = ys.shape[0]
    out = np.empty(m)
    for p in prange(m):
        xp = np.empty(n)
        xm = np.empty(n)
        x = X[p]
        fx = _phi_at(x, Q, a, eps, shift)
        acc = 0.0
        for q in range(nq):
            for d in range(n):
                xp[d] = x[d] + ys[q, d]
                xm[d] = x[d] - ys[q, d]
            acc += ws[q] * (_phi_at(xp, Q, a, eps, shift)
                            + _phi_at(xm, Q, a, eps, shift) - 2.0 * fx)
        out[p] = acc + sum_cw * (-2.0 * shift - 2.0 * fx) + alpha_sum
    return out


def lphi_numpy(X, ys, ws, sum_cw, alpha_sum, Q, a, eps, shift):
    X = np.asarray(X, dtype=float)
    out = np.empty(len(X))
    for start in range(0, len(X), _CHUNK):
        x = X[start:start + _CHUNK]
        fx = phi_numpy(x, Q, a, eps, shift)
        plus = (x[:, None, :] + ys[None, :, :]).reshape(-1, x.shape[1])
        minus = (x[:, None, :] - ys[None, :, :]).reshape(-1, x.shape[1])
        fp = phi_numpy(plus, Q, a, eps, shift).reshape(len(x), -1)
        fm = phi_numpy(minus, Q, a, eps, shift).reshape(len(x), -1)
        delta = fp + fm - 2.0 * fx[:, None]
        out[start:start + _CHUNK] = (delta @ ws + sum_cw * (-2.0 * shift - 2.0 * fx)
                                     + alpha_sum)
    return out


# --------------------------------------------------------------------------
# translation-invariant stencil on a padded grid
#
#   out_i = sum_k wts_k * w[base_i + off_k] - center * w[base_i]


@njit(parallel=True)
def stencil_apply_numba(wpad, base, offflat, wts, center):
    m = base.shape[0]
    nk = offflat.shape[0]
    out = np.empty(m)
    for i in prange(m):
        b = base[i]
        acc = 0.0
        for k in range(nk):
            acc += wts[k] * wpad[b + offflat[k]]
        out[i] = acc - center * wpad[b]
    return out


def stencil_apply_numpy(wpad, base, offflat, wts, center):
    out = np.empty(len(base))
    for start in range(0, len(base), _CHUNK):
        b = base[start:start + _CHUNK]
        gathered = wpad[b[:, None] + offflat[None, :]]
        out[start:start + _CHUNK] = gathered @ wts - center * wpad[b]
    return out


@njit
def assemble_numba(base, unknown_of, policy, offflat, wts, ptr, centers):
    """Dense matrix of ``I - S`` under a frozen policy."""
    m = base.shape[0]
    mat = np.zeros((m, m))
    for i in range(m):
        p = policy[i]
        mat[i, i] += 1.0 + centers[p]
        b = base[i]
        for k in range(ptr[p], ptr[p + 1]):
            j = unknown_of[b + offflat[k]]
            if j >= 0:
                mat[i, j] -= wts[k]
    return mat


def assemble_numpy(base, unknown_of, policy, offflat, wts, ptr, centers):
    m = len(base)
    mat = np.zeros((m, m))
    mat[np.arange(m), np.arange(m)] += 1.0 + centers[policy]
    for p in np.unique(policy):
        rows = np.flatnonzero(policy == p)
        off = offflat[ptr[p]:ptr[p + 1]]
        wk = wts[ptr[p]:ptr[p + 1]]
        cols = unknown_of[base[rows][:, None] + off[None, :]]
        r, k = np.nonzero(cols >= 0)
        np.add.at(mat, (rows[r], cols[r, k]), -wk[k])
    return mat


# --------------------------------------------------------------------------
# discrete sup-convolution over lattice offsets (offset zero beyond the box)


@njit
def supconv_numba(vals, n_nodes, n, offs, pen):
    total = vals.shape[0]
    nk = offs.shape[0]
    out = np.empty(total)
    idx = np.empty(n, np.int64)
    for p in range(total):
        rem = p
        for d in range(n - 1, -1, -1):
            idx[d] = rem % n_nodes
            rem //= n_nodes
        best = -np.inf
        for k in range(nk):
            flat = 0
            ok = True
            for d in range(n):
                j = idx[d] + offs[k, d]
                if j < 0 or j >= n_nodes:
                    ok = False
                    break
                flat = flat * n_nodes + j
            # the offset is zero beyond the box
            cand = (vals[flat] if ok else 0.0) - pen[k]
            if cand > best:
                best = cand
        out[p] = best
    return out


def supconv_numpy(vals, n_nodes, n, offs, pen):
    grid = vals.reshape((n_nodes,) * n)
    pad = int(np.abs(offs).max()) if len(offs) else 0
    padded = np.pad(grid, pad)
    best = np.full(grid.shape, -np.inf)
    for off, p in zip(offs, pen):
        sl = tuple(slice(pad + o, pad + o + n_nodes) for o in off)
        np.maximum(best, padded[sl] - p, out=best)
    return best.ravel()


# --------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    interp = interp_numba
    phi_values = phi_numba
    lphi = lphi_numba
    stencil_apply = stencil_apply_numba
    assemble = assemble_numba
    supconv = supconv_numba
else:
    interp = interp_numpy
    phi_values = phi_numpy
    lphi = lphi_numpy
    stencil_apply = stencil_apply_numpy
    assemble = assemble_numpy
    supconv = supconv_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
