"""Randomized audits of the matrix identity and the sphere-kernel bounds."""
import math

import numpy as np

from .detone import inf_trace_sampled, minimizing_matrix, sample_detone_family
from .quadrature import sphere_kernel_bounds, sphere_kernel_integral


def random_spd(rng, n, cond_max=10.0):
    """SPD matrix with log-uniform spectrum of condition at most ``cond_max``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(0, math.log(cond_max), n)) * rng.uniform(0.2, 5.0)
    return (Q * lam) @ Q.T


def random_unit_eps(rng, k, spread=2.0):
    """Positive vector with product one and log-entries in ``[-spread, spread]``."""
    logs = rng.uniform(-spread, spread, k)
    return np.exp(logs - logs.mean())


def normalized_sphere_integral(eps, s, method="identity"):
    """``prod(eps) / sum(eps^{-2s})`` times the sphere-kernel integral."""
    eps = np.asarray(eps, dtype=float)
    return float(np.prod(eps) / np.sum(eps ** (-2 * s)) * sphere_kernel_integral(eps, s, method))


def audit_matrix_identity(rng, counts=None, res=64, floor=0.25, cond_max=10.0):
    """``n det(B)^(1/n) = inf trace(A A^T B)`` on random SPD ``B``.

    The closed-form value is compared with the trace at the closed-form
    minimizer (tolerance 1e-9 relative) and, for n = 2, with the minimum
    over a sampled family at resolution ``res``, which must exceed it by
    at least -1e-12 and at most 1e-3 (relative). The sampled error at a
    fixed resolution grows with the condition number of ``B``; the
    default ``cond_max`` keeps the minimizers well inside the family.
    """
    counts = counts or {2: 100, 3: 30}
    fam2 = sample_detone_family(2, floor, res)
    worst_closed, worst_low, worst_high = 0.0, 0.0, 0.0
    for n, count in sorted(counts.items()):
        for _ in range(count):
            B = random_spd(rng, n, cond_max)
            A, value = minimizing_matrix(B)
            S = A.matrix
            err = abs(np.trace(S @ S.T @ B) - value) / value
            worst_closed = max(worst_closed, float(err))
            if n == 2:
                gap = (inf_trace_sampled(B, fam2) - value) / value
                worst_low = min(worst_low, gap)
                worst_high = max(worst_high, gap)
    checks = {
        "closed_form": {"max_rel_error": worst_closed, "tolerance": 1e-9,
                        "passed": bool(worst_closed <= 1e-9)},
        "sampled_infimum": {"min_rel_gap": worst_low, "max_rel_gap": worst_high,
                            "res": res, "floor": floor,
                            "passed": bool(worst_low >= -1e-12 and worst_high <= 1e-3)},
    }
    return checks


def audit_sphere_kernel(rng, count=50, ks=(2, 3), s_values=(0.6, 0.75, 0.9)):
    """Bounds, method agreement and equality case of the sphere-kernel integral."""
    out = {}
    for k in ks:
        for s in s_values:
            lo, hi = sphere_kernel_bounds(k, s)
            worst_agree, below, above = 0.0, 0, 0
            for _ in range(count):
                eps = random_unit_eps(rng, k)
                a = normalized_sphere_integral(eps, s, "identity")
                b = normalized_sphere_integral(eps, s, "direct")
                worst_agree = max(worst_agree, abs(a - b) / abs(b))
                below += int(a < lo * (1 - 1e-12))
                above += int(a > hi * (1 + 1e-12))
            eq = abs(normalized_sphere_integral(np.ones(k), s) - lo) / lo
            out[f"k={k},s={s}"] = {
                "lower": lo, "upper": hi, "below_lower": below, "above_upper": above,
                "max_method_gap": worst_agree, "equality_gap": eq,
                "passed": bool(below == 0 and above == 0 and worst_agree <= 1e-6
                               and eq <= 1e-10)}
    return out
