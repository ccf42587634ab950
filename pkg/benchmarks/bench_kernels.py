"""Time the numba kernels against their numpy fallbacks on model-problem inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--nodes 64] [--repeat 5] [--json out.json]

Both paths are called directly, so ``FRACMA_NUMBA`` does not matter here.
Each row reports the best wall time of ``--repeat`` calls after one warm-up
call (which also triggers compilation).
"""
import argparse
import json
import math
import time

import numpy as np

from fracma import kernels
from fracma.core import FarFieldModel, SolverConfig
from fracma.quadrature import build_plan
from fracma.solver import stage_lattice
from fracma.solver.truncated import TruncatedProblem


def _best(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n_nodes=64, seed=0):
    """Kernel name and argument tuple for each benchmark case."""
    rng = np.random.default_rng(seed)
    config = SolverConfig(n_nodes=n_nodes)
    phi = FarFieldModel.isotropic(2)
    problem = TruncatedProblem(phi, config, config.truncation_radii[-1])
    lattice = stage_lattice(config, config.floors[-1])
    coords = lattice.coarse_coords(config.coarse_factor)
    ids = problem.ids_of(lattice, coords[rng.choice(len(coords), 8, replace=False)])
    member = problem.members[ids[0]]
    w = rng.uniform(0, 1, problem.size)
    wpad = problem.padded(w)
    plan = build_plan(member.matrix, config.s, config.h, config.box_radius, config.quad)
    X = problem.points[:256]
    alpha = phi.tail_pair(X[:1], plan.dirs)[0]
    lphi_args = (X, plan.ys, plan.ws, float(plan.cw.sum()), float(plan.aw @ alpha[0]),
                 phi.cone_matrix, float(phi.pert_amplitude), float(phi.pert_decay), phi.shift)

    policy = rng.integers(0, len(ids), problem.size)
    mems = [problem.members[i] for i in ids]
    ptr = np.zeros(len(mems) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(m.offflat) for m in mems])
    assemble_args = (problem.base, problem.unknown_of, policy.astype(np.int64),
                     np.concatenate([m.offflat for m in mems]),
                     np.concatenate([m.wts for m in mems]), ptr,
                     np.array([m.center for m in mems]))

    field = rng.standard_normal(n_nodes ** 2)
    pts = rng.uniform(-config.box_radius, config.box_radius, (10_000, 2))
    eps = 0.5
    reach = int(math.sqrt((2 * np.abs(field).max() + 1) * eps) / config.h)
    grid = np.arange(-reach, reach + 1)
    offs = np.array([(i, j) for i in grid for j in grid], dtype=np.int64)
    pen = ((offs * config.h) ** 2).sum(axis=1) / eps
    return {
        "interp": (field, n_nodes, -config.box_radius, config.h, pts),
        "phi": (pts, phi.cone_matrix, 0.0, 1.0, phi.shift),
        "lphi": lphi_args,
        "stencil_apply": (wpad, problem.base, member.offflat, member.wts, member.center),
        "assemble": assemble_args,
        "supconv": (field, n_nodes, 2, offs, pen),
    }


def run(n_nodes=64, repeat=5, seed=0):
    rows = []
    for name, args in cases(n_nodes, seed).items():
        fast = getattr(kernels, f"{name}_numba")
        slow = getattr(kernels, f"{name}_numpy")
        a, b = np.asarray(fast(*args)), np.asarray(slow(*args))
        t_fast = _best(fast, args, repeat)
        t_slow = _best(slow, args, repeat)
        rows.append({"kernel": name, "numba_s": t_fast, "numpy_s": t_slow,
                     "speedup": t_slow / t_fast,
                     "max_abs_diff": float(np.abs(a - b).max())})
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the rows to this file")
    args = parser.parse_args()
    rows = run(args.nodes, args.repeat)
    print(f"{'kernel':<14}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for r in rows:
        print(f"{r['kernel']:<14}{1e3 * r['numba_s']:>12.3f}{1e3 * r['numpy_s']:>12.3f}"
              f"{r['speedup']:>10.1f}{r['max_abs_diff']:>12.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
