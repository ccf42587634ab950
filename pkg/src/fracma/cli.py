"""Command-line drivers: ``solve``, ``check <name>``, ``limit-sweep``, ``eval-op``.

Configuration files are INI text (see ``configs/``). Every run writes a
``manifest.json`` next to its outputs with the config snapshot, a
git-style blob hash of the config bytes, timestamps and the output list.

Exit codes: 0 success, 1 configuration or input error, 2 numerical
failure (non-convergence or a failed check).
"""
import argparse
import configparser
from dataclasses import asdict
import datetime
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import kernels
from .audits import audit_matrix_identity, audit_sphere_kernel
from .core import (AffineField, ConfigError, FarFieldModel, GridFunction, RightHandSide,
                   SolverConfig)
from .detone import sample_detone_family
from .ma_operator import ellipticity_certificate, eval_Ds, local_limit_sweep
from .quadrature import QuadratureScheme
from .solver import (ConvergenceError, build_barrier, check_comparison, check_positivity,
                     check_regularity, solve)
from .solver.truncated import MEASURE_FRACTION, stage_lattice

log = logging.getLogger("fracma")

CHECKS = ("comparison", "regularity", "positivity", "ellipticity", "appendixA", "appendixB")
LIMIT_FUNCTIONS = ("soliton", "aniso", "affine")

# section -> key -> parser
_FLOAT, _INT = float, int


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _matrix(text):
    rows = [r.split() for r in text.split(";") if r.strip()]
    M = np.array([[float(v) for v in r] for r in rows])
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square, rows separated by ';'")
    return M


def _optional_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


SCHEMA = {
    "problem": {"dim": _INT, "s": _FLOAT, "cone_matrix": _matrix,
                "pert_amplitude": _FLOAT, "pert_decay": _FLOAT},
    "grid": {"box_radius": _FLOAT, "n_nodes": _INT, "taper": _FLOAT},
    "quadrature": {"inner_radius": _optional_float, "outer_radius": _optional_float,
                   "radial_per_decade": _INT, "angular_nodes": _INT,
                   "tail_decades": _FLOAT, "order": _INT},
    "family": {"rotations": _INT, "eig_levels": _INT, "coarse_factor": _INT},
    "solver": {"floors": _floats, "stages": _INT, "radii": _floats, "tol_fp": _FLOAT,
               "max_iter": _INT, "damping": _FLOAT, "tau": _optional_float,
               "stall_stop": _bool, "argmin": str},
    "check": {"solution": str, "sub": str, "super": str, "samples": _INT,
              "theta": _optional_float, "slack": _FLOAT, "coarse_factor": _INT,
              "count_2d": _INT, "count_3d": _INT, "cond_max": _FLOAT,
              "family_res": _INT, "family_floor": _FLOAT, "eps_count": _INT},
    "limit": {"function": str, "s_list": _floats, "tolerance": _FLOAT, "x": _floats,
              "hessian": _matrix, "box_radius": _FLOAT, "spacing": _FLOAT,
              "family_floor": _FLOAT, "family_rotations": _INT, "family_eig_levels": _INT},
    "run": {"seed": _INT},
}

# SolverConfig fields and where they come from
_CONFIG_KEYS = {"dim": "problem", "s": "problem", "box_radius": "grid", "n_nodes": "grid",
                "taper": "grid", "rotations": "family", "eig_levels": "family",
                "coarse_factor": "family", "floors": "solver", "radii": "solver",
                "tol_fp": "solver", "max_iter": "solver", "damping": "solver",
                "tau": "solver", "stall_stop": "solver", "argmin": "solver"}

# keywords in SolverConfig messages that point at a config key
_MESSAGE_KEYS = {"order s": "s", "dimension": "dim", "box_radius": "box_radius",
                 "n_nodes": "n_nodes", "family resolution": "rotations",
                 "coarse_factor": "coarse_factor", "floors": "floors", "tol_fp": "tol_fp",
                 "max_iter": "max_iter", "damping": "damping", "taper": "taper",
                 "truncation radi": "radii", "tau": "tau", "argmin": "argmin"}


class ConfigFileError(Exception):
    """Configuration error tied to a file position."""


class Settings:
    """Parsed configuration with the line number of every key."""

    def __init__(self, path, text):
        self.path = path
        self.text = text
        self.values = {}
        self.lines = {}
        self._parse()

    def _error(self, line, message):
        where = f"{self.path}:{line}" if line else str(self.path)
        return ConfigFileError(f"{where}: {message}")

    def _parse(self):
        section = None
        raw = {}
        for lineno, line in enumerate(self.text.splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped[0] in "#;":
                continue
            if stripped.startswith("["):
                if not stripped.endswith("]"):
                    raise self._error(lineno, f"malformed section header {stripped!r}")
                section = stripped[1:-1].strip()
                if section not in SCHEMA:
                    raise self._error(lineno, f"unknown section [{section}]")
                continue
            if section is None:
                raise self._error(lineno, "key outside of any section")
            if "=" not in stripped:
                raise self._error(lineno, f"expected 'key = value', got {stripped!r}")
            key, value = (t.strip() for t in stripped.split("=", 1))
            if key not in SCHEMA[section]:
                raise self._error(lineno, f"unknown key {key!r} in [{section}]")
            if (section, key) in raw:
                raise self._error(lineno, f"duplicate key {key!r} in [{section}]")
            raw[section, key] = (value, lineno)
        # the grammar above is a strict subset of what configparser accepts
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string(self.text, source=str(self.path))
        except configparser.Error as exc:
            raise self._error(getattr(exc, "lineno", None), str(exc).splitlines()[0]) from exc
        for (section, key), (_, lineno) in raw.items():
            value = parser.get(section, key)
            try:
                self.values[section, key] = SCHEMA[section][key](value)
            except ValueError as exc:
                raise self._error(lineno, f"[{section}] {key}: {exc}") from exc
            self.lines[key] = self.lines.get(key, lineno)
            self.lines[section, key] = lineno

    def get(self, section, key, default=None):
        return self.values.get((section, key), default)

    def has(self, section, key):
        return (section, key) in self.values

    def error(self, section, key, message):
        return self._error(self.lines.get((section, key)), message)

    def config_error(self, exc):
        """Attach the line of the offending key to a :class:`ConfigError`."""
        msg = str(exc)
        for needle, key in _MESSAGE_KEYS.items():
            if needle in msg and key in self.lines:
                return self._error(self.lines[key], msg)
        return self._error(None, msg)


def load_settings(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigFileError(f"{path}: cannot read config ({exc.strerror})") from exc
    return Settings(path, data.decode("utf-8")), data


def build_phi(settings):
    n = settings.get("problem", "dim", 2)
    Q = settings.get("problem", "cone_matrix", np.eye(n))
    if Q.shape != (n, n):
        raise settings.error("problem", "cone_matrix", f"cone_matrix must be {n}x{n}")
    try:
        return FarFieldModel(Q, settings.get("problem", "pert_amplitude", 0.0),
                             settings.get("problem", "pert_decay", 1.0))
    except ValueError as exc:
        key = "cone_matrix" if "cone" in str(exc) else (
            "pert_amplitude" if "amplitude" in str(exc) else "pert_decay")
        raise settings.error("problem", key, str(exc)) from exc


def build_quadrature(settings):
    kw = {k: settings.get("quadrature", k) for k in SCHEMA["quadrature"]
          if settings.has("quadrature", k)}
    try:
        return QuadratureScheme(**kw)
    except ValueError as exc:
        raise settings.error("quadrature", next(iter(kw), None), str(exc)) from exc


def build_config(settings, seed):
    kw = {}
    for key, section in _CONFIG_KEYS.items():
        if settings.has(section, key):
            kw[key] = settings.get(section, key)
    if settings.has("solver", "stages"):
        if "floors" in kw:
            raise settings.error("solver", "stages", "give either floors or stages, not both")
        k = settings.get("solver", "stages")
        if k < 1:
            raise settings.error("solver", "stages", "stages must be at least 1")
        kw["floors"] = tuple(2.0 ** -j for j in range(1, k + 1))
    kw["quad"] = build_quadrature(settings)
    try:
        return SolverConfig(seed=seed, **kw)
    except ConfigError as exc:
        raise settings.config_error(exc) from exc


# --------------------------------------------------------------------------
# output helpers


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def write_csv(path, header, columns):
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def blob_hash(data):
    """Git blob SHA-1 of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


class Run:
    """Output directory bookkeeping and the run manifest."""

    def __init__(self, out_dir, command, config_path, config_bytes, seed):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.command = command
        self.config_path = config_path
        self.config_bytes = config_bytes
        self.seed = seed
        self.started = _now()
        self.outputs = []

    def path(self, name):
        p = os.path.join(self.out_dir, name)
        self.outputs.append(p)
        return p

    def finish(self, exit_code):
        manifest = {
            "command": self.command,
            "config_path": None if self.config_path is None else str(self.config_path),
            "config_snapshot": (self.config_bytes or b"").decode("utf-8"),
            "config_hash": blob_hash(self.config_bytes or b""),
            "seed": self.seed,
            "started": self.started,
            "finished": _now(),
            "exit_code": exit_code,
            "backend": kernels.BACKEND,
            "outputs": [p for p in self.outputs if os.path.exists(p)],
        }
        write_json(os.path.join(self.out_dir, "manifest.json"), manifest)
        return exit_code


# --------------------------------------------------------------------------
# commands


def _config_dict(config):
    d = asdict(config)
    d["quad"] = asdict(config.quad)
    d["truncation_radii"] = list(config.truncation_radii)
    d["barrier_tau"] = config.barrier_tau
    return d


def cmd_solve(settings, run, seed):
    config = build_config(settings, seed)
    phi = build_phi(settings)
    if phi.dim != config.dim:
        raise settings.error("problem", "cone_matrix", "cone_matrix size must equal dim")
    barrier = build_barrier(phi, config.s, config.barrier_tau, config.quad,
                            config.box_radius, config.h)
    r = barrier.profile.radii
    write_csv(run.path("barrier.csv"), ["r", "w1", "barrier_offset"],
              [r, barrier.profile.profile(r), barrier.M * barrier.profile.profile(r)])
    try:
        u, report, out = solve(phi, config, barrier=barrier, with_output=True)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        write_json(run.path("report.json"), {
            "converged": False, "residual": exc.residual, "iterations": exc.iterations,
            "stage": exc.stage, "config": _config_dict(config)})
        return 2
    X = u.nodes()[out.flat]
    phi_vals = phi(X)
    write_csv(run.path("solution.csv"),
              [f"x{i}" for i in range(config.dim)]
              + ["u", "phi", "u_minus_phi", "residual", "residual_dense", "argmin_lambda_min"],
              [*X.T, phi_vals + out.offset, phi_vals, out.offset, out.residual,
               out.residual_dense, out.argmin_lambda_min])
    u.to_csv(run.path("u.csv"))
    run.outputs.append(os.path.join(run.out_dir, "u.json"))
    payload = report.to_dict()
    payload.update(converged=True, config=_config_dict(config))
    write_json(run.path("report.json"), payload)
    log.info("solve finished: residual %.2e, %d stages", report.residual, len(report.stages))
    return 0 if report.residual <= config.tol_fp else 2


def _load_function(settings, key, phi, config, barrier_cache):
    """``phi``, ``barrier`` or a grid-function CSV path from ``[check] key``."""
    spec = settings.get("check", key)
    if spec is None:
        return None
    if spec == "phi":
        return GridFunction.analytic(phi, config.box_radius, config.h)
    if spec == "barrier":
        if "barrier" not in barrier_cache:
            barrier_cache["barrier"] = build_barrier(phi, config.s, config.barrier_tau,
                                                     config.quad, config.box_radius, config.h)
        return barrier_cache["barrier"].ubar
    path = spec
    if not os.path.isabs(path):
        path = os.path.join(os.path.dirname(os.path.abspath(settings.path)), path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"[check] {key}: no such file {spec!r}")
    return GridFunction.from_csv(path)


def _require(settings, key, phi, config, cache):
    gf = _load_function(settings, key, phi, config, cache)
    if gf is None:
        raise FileNotFoundError(f"[check] {key} is required for this check")
    return gf


def _check_family(settings, config):
    factor = settings.get("check", "coarse_factor", config.coarse_factor)
    return stage_lattice(config, config.floors[-1]).family(factor)


def _sample_nodes(gf, radius, count, rng):
    X = gf.nodes()
    inside = np.flatnonzero(np.linalg.norm(X, axis=1) <= radius)
    pick = rng.choice(inside, size=min(count, len(inside)), replace=False)
    return X[np.sort(pick)]


def run_check(name, settings, seed):
    """Evaluate one check; returns the JSON report (``passed`` at top level)."""
    rng = np.random.default_rng(seed)
    if name == "appendixA":
        counts = {2: settings.get("check", "count_2d", 100), 3: settings.get("check", "count_3d", 30)}
        res = settings.get("check", "family_res", 64)
        floor = settings.get("check", "family_floor", 0.25)
        checks = audit_matrix_identity(rng, counts, res=res, floor=floor,
                                       cond_max=settings.get("check", "cond_max", 10.0))
        return {"checks": checks, "passed": all(c["passed"] for c in checks.values())}
    if name == "appendixB":
        checks = audit_sphere_kernel(rng, settings.get("check", "eps_count", 50))
        return {"checks": checks, "passed": all(c["passed"] for c in checks.values())}

    config = build_config(settings, seed)
    phi = build_phi(settings)
    rhs = RightHandSide.model(phi)
    cache = {}
    if name == "comparison":
        sub = _load_function(settings, "sub", phi, config, cache)
        sup = _load_function(settings, "super", phi, config, cache)
        if sub is None or sup is None:
            raise FileNotFoundError("[check] sub and super are required for comparison")
        result = check_comparison(sub, sup, rhs, fam=_check_family(settings, config),
                                  quad=config.quad, s=config.s,
                                  slack=settings.get("check", "slack", 1e-3),
                                  max_points=settings.get("check", "samples", 400))
        return {"checks": {"comparison": result}, "passed": result["passed"]}
    u = _require(settings, "solution", phi, config, cache)
    radius = MEASURE_FRACTION * (u.interior_radius or u.box_radius)
    if name == "regularity":
        result = check_regularity(u, rhs, phi, region_radius=radius)
        return {"checks": {"regularity": result}, "passed": result["passed"]}
    if name == "positivity":
        result = check_positivity(u, phi, _check_family(settings, config), config.quad, config.s)
        return {"checks": {"positivity": result}, "passed": result["passed"]}
    if name == "ellipticity":
        reg = check_regularity(u, rhs, phi, region_radius=radius)
        X = _sample_nodes(u, radius, settings.get("check", "samples", 200), rng)
        cert = ellipticity_certificate(u, X, _check_family(settings, config),
                                       settings.get("check", "theta"), quad=config.quad,
                                       s=config.s, lipschitz=reg["lipschitz"],
                                       semiconcavity=reg["semiconcavity"])
        result = cert.to_dict()
        return {"checks": {"ellipticity": result}, "passed": result["passed"]}
    raise ValueError(f"unknown check {name!r}")


def cmd_check(name, settings, run, seed):
    try:
        report = run_check(name, settings, seed)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report["name"] = name
    write_json(run.path(f"check_{name}.json"), report)
    for sub, res in report["checks"].items():
        log.info("%s/%s: %s", name, sub, "pass" if res.get("passed") else "FAIL")
    return 0 if report["passed"] else 2


def limit_function(settings):
    """Test function and its dimension for the local-limit sweep."""
    name = settings.get("limit", "function", "soliton")
    if name not in LIMIT_FUNCTIONS:
        raise ValueError(f"unknown test function {name!r}; choose from {', '.join(LIMIT_FUNCTIONS)}")
    n = settings.get("problem", "dim", 2)
    if name == "soliton":
        return FarFieldModel.isotropic(n)
    if name == "aniso":
        H = settings.get("limit", "hessian", np.diag([4.0] + [1.0] * (n - 1)))
        return FarFieldModel(H)
    slope = np.linspace(0.3, -0.2, n)
    return AffineField(slope, 1.0)


def cmd_limit_sweep(settings, run, seed):
    try:
        f = limit_function(settings)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    n = f.dim
    s_list = settings.get("limit", "s_list", (0.9, 0.95, 0.99))
    x = np.asarray(settings.get("limit", "x", (0.0,) * n))
    tol = settings.get("limit", "tolerance", 0.05)
    gf = GridFunction.analytic(f, settings.get("limit", "box_radius", 4.0),
                               settings.get("limit", "spacing", 0.05))
    levels = settings.get("limit", "family_eig_levels", 4)
    fam = sample_detone_family(n, settings.get("limit", "family_floor", 1 / 16), 8,
                               eig_step=math.log(2) / levels,
                               rotations=settings.get("limit", "family_rotations", 32))
    sweep = local_limit_sweep(gf, x, s_list, fam, build_quadrature(settings))
    ref = sweep.reference
    if abs(ref) > 0:
        error = abs(sweep.extrapolated - ref) / abs(ref)
        passed = error <= tol
    else:
        # a zero reference means D_s itself vanishes (affine data)
        error = float(max(abs(v) for v in sweep.values))
        passed = error <= 1e-10
    write_csv(run.path("limit.csv"), ["s", "scaled_value"], [sweep.s_list, sweep.values])
    write_json(run.path("limit.json"), {
        "function": settings.get("limit", "function", "soliton"), "x": x.tolist(),
        "s_list": list(sweep.s_list), "values": list(sweep.values),
        "extrapolated": sweep.extrapolated, "reference": ref,
        "reference_trace": sweep.reference_trace, "error": error, "tolerance": tol,
        "family_size": len(fam), "passed": bool(passed)})
    log.info("limit: extrapolated %.6g reference %.6g error %.3g", sweep.extrapolated, ref, error)
    return 0 if passed else 2


def cmd_eval_op(args, settings, run):
    phi = build_phi(settings) if settings is not None else FarFieldModel.isotropic(2)
    x = np.asarray(_floats(args.x))
    if x.size != phi.dim:
        print(f"error: --x needs {phi.dim} coordinates", file=sys.stderr)
        return 1
    box = settings.get("grid", "box_radius", 8.0) if settings is not None else 8.0
    if np.abs(x).max() >= box:
        print(f"error: x lies outside the box of radius {box:g}", file=sys.stderr)
        return 1
    if not 0.5 < args.s < 1:
        print(f"error: order s = {args.s} must lie in the open interval (1/2, 1)", file=sys.stderr)
        return 1
    if not 0 < args.theta <= 1:
        print("error: theta must lie in (0, 1]", file=sys.stderr)
        return 1
    quad = build_quadrature(settings) if settings is not None else QuadratureScheme()
    gf = GridFunction.analytic(phi, box, 2 * box / 63)
    fam = sample_detone_family(phi.dim, args.theta, args.family_res)
    res = eval_Ds(gf, x, fam, quad, args.s)
    payload = {"x": x.tolist(), "s": args.s, "theta": args.theta,
               "family_res": args.family_res, "family_size": len(fam), "value": res.value,
               "argmin": res.argmin.matrix.tolist(),
               "argmin_lambda_min": res.argmin_lambda_min}
    write_json(run.path("eval_op.json"), payload)
    print(json.dumps(_clean(payload), sort_keys=True, default=_json_default))
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="fracma", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the model problem")
    p = sub.add_parser("check", parents=[common], help="run one verification check")
    p.add_argument("name", choices=CHECKS)
    sub.add_parser("limit-sweep", parents=[common], help="s -> 1 local-limit diagnostic")
    p = sub.add_parser("eval-op", parents=[common], help="evaluate D_s of phi at one point")
    p.add_argument("--x", required=True, help="comma-separated coordinates")
    p.add_argument("--s", type=float, default=0.75)
    p.add_argument("--theta", type=float, default=0.25, help="eigenvalue floor")
    p.add_argument("--family-res", type=int, default=16)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    settings, data = None, None
    try:
        if args.config is not None:
            settings, data = load_settings(args.config)
        elif args.command != "eval-op":
            print("error: --config is required", file=sys.stderr)
            return 1
        seed = args.seed if args.seed is not None else (
            settings.get("run", "seed", 0) if settings is not None else 0)
        if seed < 0 or seed >= 2 ** 64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return 1
        command = args.command + (f" {args.name}" if args.command == "check" else "")
        run = Run(args.out, command, args.config, data, seed)
        t0 = time.perf_counter()
        if args.command == "solve":
            code = cmd_solve(settings, run, seed)
        elif args.command == "check":
            code = cmd_check(args.name, settings, run, seed)
        elif args.command == "limit-sweep":
            code = cmd_limit_sweep(settings, run, seed)
        else:
            code = cmd_eval_op(args, settings, run)
        log.info("%s finished in %.1fs with exit code %d", command, time.perf_counter() - t0, code)
        return run.finish(code)
    except ConfigFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
