"""A-posteriori checks on grid functions: comparison, regularity, positivity."""
import itertools

import numpy as np

from ..ma_operator import family_values
from ..quadrature import eval_frac_lap_1d


def _region_nodes(gf, radius):
    X = gf.nodes()
    return np.flatnonzero(np.linalg.norm(X, axis=1) <= radius * (1 + 1e-12)), X


def _default_points(u, v, max_points):
    radii = [g.interior_radius for g in (u, v) if getattr(g, "interior_radius", None)]
    radius = min(radii) * (1 - 1e-9) if radii else 0.5 * min(u.box_radius, v.box_radius)
    ref = u if getattr(u, "offset", None) is not None else v
    idx, X = _region_nodes(ref, radius)
    X = X[idx]
    stride = max(1, len(X) // max_points)
    return X[::stride]


def check_comparison(u, v, rhs, *, fam, quad, s, points=None, slack=1e-3, max_points=400):
    """Check ``u <= v`` given that ``u`` is a subsolution and ``v`` a supersolution.

    The premises ``D_s u >= g(x, u) - slack`` and ``D_s v <= g(x, v) + slack``
    are verified at the test points first. If either fails the pair is
    outside the contract of the comparison principle and the status is
    ``"out-of-contract"``; otherwise it is ``"pass"`` or ``"fail"``
    according to ``u <= v + slack`` at the points.
    """
    X = _default_points(u, v, max_points) if points is None else np.atleast_2d(points)
    uval, vval = u(X), v(X)
    du = family_values(u, X, fam, quad, s).min(axis=0)
    dv = family_values(v, X, fam, quad, s).min(axis=0)
    sub_gap = float((du - rhs(X, uval)).min())
    super_gap = float((rhs(X, vval) - dv).min())
    order_gap = float((vval - uval).min())
    sub_ok = sub_gap >= -slack
    super_ok = super_gap >= -slack
    if not (sub_ok and super_ok):
        status = "out-of-contract"
    else:
        status = "pass" if order_gap >= -slack else "fail"
    worst = int(np.argmin(vval - uval))
    return {"status": status, "passed": status == "pass", "premise_sub_ok": bool(sub_ok),
            "premise_super_ok": bool(super_ok), "sub_margin": sub_gap,
            "super_margin": super_gap, "min_margin": order_gap,
            "worst_point": X[worst].tolist(), "slack": slack, "n_points": len(X)}


def _pair_offsets(dim, window):
    """Axis and diagonal lattice directions up to ``window`` steps."""
    dirs = [tuple(int(i == d) for i in range(dim)) for d in range(dim)]
    for a, b in itertools.combinations(range(dim), 2):
        for sgn in (1, -1):
            dirs.append(tuple(1 if i == a else (sgn if i == b else 0) for i in range(dim)))
    return [tuple(k * c for c in d) for d in dirs for k in range(1, window + 1)]


def _shift(vals, off):
    """View pairs ``(vals[i], vals[i + off])`` over nodes where both exist."""
    a = tuple(slice(max(0, -o), vals.shape[d] - max(0, o)) for d, o in enumerate(off))
    b = tuple(slice(max(0, o), vals.shape[d] - max(0, -o)) for d, o in enumerate(off))
    return a, b


def measure_regularity(gf, region_radius, window=3):
    """Discrete Lipschitz and semiconcavity constants on ``|x| <= region_radius``."""
    vals = gf.values
    inside = (np.linalg.norm(gf.nodes(), axis=1) <= region_radius * (1 + 1e-12))
    inside = inside.reshape(vals.shape)
    lip, sc = 0.0, -np.inf
    for off in _pair_offsets(gf.dim, window):
        step = gf.h * np.linalg.norm(off)
        a, b = _shift(vals, off)
        mask = inside[a] & inside[b]
        if mask.any():
            lip = max(lip, float(np.abs(vals[b] - vals[a])[mask].max() / step))
        sc = max(sc, _max_second_increment(vals, inside, off) / step ** 2)
    return lip, sc


def _max_second_increment(vals, inside, off):
    core = tuple(slice(abs(o), vals.shape[d] - abs(o)) for d, o in enumerate(off))
    plus = tuple(slice(abs(o) + o, vals.shape[d] - abs(o) + o) for d, o in enumerate(off))
    minus = tuple(slice(abs(o) - o, vals.shape[d] - abs(o) - o) for d, o in enumerate(off))
    delta = vals[plus] + vals[minus] - 2 * vals[core]
    mask = inside[core] & inside[plus] & inside[minus]
    return float(delta[mask].max()) if mask.any() else -np.inf


def regularity_bounds(rhs, phi):
    """Lipschitz and semiconcavity bounds for solutions with data ``(g, phi)``.

    For the model right-hand side these are the constants of ``phi``
    itself; otherwise ``max(Lip(g)/mu, Lip(phi))`` and
    ``(C/mu)(1 + max((Lip(g)/mu)^2, Lip(phi)^2))``.
    """
    if rhs.kind == "model":
        return phi.lipschitz, phi.semiconcavity
    lip = max(rhs.lipschitz / rhs.mu, phi.lipschitz)
    sc = rhs.semiconvexity / rhs.mu * (1 + max((rhs.lipschitz / rhs.mu) ** 2, phi.lipschitz ** 2))
    return lip, sc


def check_regularity(u, rhs, phi, region_radius=None, window=3, slack_per_h=5.0):
    """Measured Lipschitz and semiconcavity constants against their bounds.

    Differences use axis and diagonal node offsets up to ``window`` steps
    inside ``|x| <= region_radius`` (default: 0.6 of the interior radius,
    or half the box). The allowed slack is ``slack_per_h * h``.
    """
    if region_radius is None:
        region_radius = 0.6 * u.interior_radius if u.interior_radius else 0.5 * u.box_radius
    lip, sc = measure_regularity(u, region_radius, window)
    lip_b, sc_b = regularity_bounds(rhs, phi)
    slack = slack_per_h * u.h
    return {"lipschitz": lip, "lipschitz_bound": float(lip_b),
            "semiconcavity": sc, "semiconcavity_bound": float(sc_b),
            "slack": slack, "region_radius": float(region_radius),
            "lipschitz_ok": bool(lip <= lip_b + slack),
            "semiconcavity_ok": bool(sc <= sc_b + slack),
            "passed": bool(lip <= lip_b + slack and sc <= sc_b + slack)}


def _directions(n, count):
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        t = np.pi * np.arange(count) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    rng = np.random.default_rng(0)
    d = rng.standard_normal((count, n))
    return np.vstack([np.eye(n), d / np.linalg.norm(d, axis=1, keepdims=True)])


def check_positivity(u, phi, fam_dense, quad, s, directions=16, region_radius=None):
    """``min (u - phi) > 0`` over interior nodes, with a line-Laplacian witness test.

    At the node minimizing ``u - phi`` every sampled direction must have a
    positive one-dimensional fractional Laplacian (no degenerate direction).
    The region defaults to 0.6 of the interior radius (or half the box), the
    same region as :func:`check_regularity`: next to the truncation sphere
    ``u`` is pinned to ``phi`` and is not convex.
    """
    if region_radius is None:
        region_radius = 0.6 * u.interior_radius if u.interior_radius else 0.5 * u.box_radius
    idx, X = _region_nodes(u, region_radius)
    X = X[idx]
    margin_vals = u(X) - phi(X)
    k = int(np.argmin(margin_vals))
    x = X[k]
    lines = [eval_frac_lap_1d(u, x, e, s, quad) for e in _directions(u.dim, directions)]
    ds = float(family_values(u, x[None], fam_dense, quad, s).min())
    margin = float(margin_vals[k])
    return {"min_margin": margin, "argmin": x.tolist(), "min_line_laplacian": float(min(lines)),
            "ds_at_argmin": ds, "directions": len(lines),
            "region_radius": float(region_radius),
            "passed": bool(margin > 0 and min(lines) > 0)}
