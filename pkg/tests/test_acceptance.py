"""Acceptance suite: one printed pass/fail line per criterion.

Tolerances are fixed by the build contract; nothing here is tuned to the
measured numbers. Criteria 5 and 6 reuse the session ``model_run`` solve.
"""
import math
import time

import numpy as np
import pytest
import scipy.integrate

from fracma.audits import audit_matrix_identity, audit_sphere_kernel
from fracma.core import AffineField, FarFieldModel, GridFunction, RightHandSide, SumField
from fracma.detone import sample_detone_family
from fracma.ma_operator import ellipticity_certificate, local_limit_sweep
from fracma.quadrature import QuadratureScheme, structural_constants
from fracma.solver import check_comparison, fit_decay_exponent, stage_lattice, sup_inf_convolution
from fracma.solver.barrier import frac_lap_of, g1
from fracma.solver.truncated import MEASURE_FRACTION

QUAD = QuadratureScheme()


def verdict(capsys, number, title, passed, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if passed else 'FAIL'}: {title}; {detail}")
    assert passed, detail


def test_criterion_1_matrix_identity(capsys):
    checks = audit_matrix_identity(np.random.default_rng(101), {2: 100, 3: 30}, res=64)
    closed, sampled = checks["closed_form"], checks["sampled_infimum"]
    verdict(capsys, 1, "n det(B)^(1/n) = inf trace over det-one family",
            closed["passed"] and sampled["passed"],
            f"closed-form max rel err {closed['max_rel_error']:.2e} (tol 1e-9), sampled gap in "
            f"[{sampled['min_rel_gap']:.2e}, {sampled['max_rel_gap']:.2e}] "
            f"(need >= -1e-12, <= 1e-3) at res 64")


def test_criterion_2_sphere_kernel(capsys):
    out = audit_sphere_kernel(np.random.default_rng(202), 50, ks=(2, 3),
                              s_values=(0.6, 0.75, 0.9))
    worst_gap = max(r["max_method_gap"] for r in out.values())
    worst_eq = max(r["equality_gap"] for r in out.values())
    outside = sum(r["below_lower"] + r["above_upper"] for r in out.values())
    verdict(capsys, 2, "sphere-kernel integral bounds", all(r["passed"] for r in out.values()),
            f"{len(out)} (k, s) cases x 50 vectors: {outside} outside bounds, method gap "
            f"{worst_gap:.2e} (tol 1e-6), equality gap {worst_eq:.2e} (tol 1e-10)")


def _mu1_by_quadrature(L, C, s):
    t0 = 2 * L / C
    a, _ = scipy.integrate.quad(lambda t: C * t ** (1 - 2 * s), 0, t0, epsabs=0, epsrel=1e-13)
    b, _ = scipy.integrate.quad(lambda t: 2 * L * t ** (-2 * s), t0, np.inf, epsabs=0,
                                epsrel=1e-13)
    return (1 - s) * (a + b)


def test_criterion_3_structural_constants(capsys):
    worst = 0.0
    for L in (0.5, 1.0, 2.0):
        for C in (0.5, 2.0, 4.0):
            for s in (0.6, 0.75, 0.9):
                k = structural_constants(L, C, s, 2, 0.2)
                worst = max(worst, abs(k.mu1 - _mu1_by_quadrature(L, C, s)) / k.mu1)
    L, C, eta0 = 1.0, 2.0, 0.2
    ks = [structural_constants(L, C, s, 2, eta0) for s in (0.9, 0.95, 0.99)]
    e1 = [abs(k.mu1 - C / 2) for k in ks]
    e0 = [abs(k.mu0 - k.mu0_bar / 2) for k in ks]
    monotone = all(np.diff(e1) < 0) and all(np.diff(e0) < 0)
    final1 = e1[-1] / (C / 2)
    final0 = e0[-1] / (ks[-1].mu0_bar / 2)
    ok = worst <= 1e-8 and monotone and final1 <= 0.1 and final0 <= 0.1
    verdict(capsys, 3, "structural constants", ok,
            f"mu1 closed form vs quadrature max rel err {worst:.2e} over 27 points (tol 1e-8); "
            f"s -> 1 monotone {monotone}, final rel err mu1 {final1:.3f}, mu0 {final0:.3f} "
            f"(tol 0.1)")


@pytest.fixture(scope="module")
def limit_family():
    return sample_detone_family(2, 1 / 16, 8, eig_step=math.log(2) / 4, rotations=32)


@pytest.mark.parametrize("label, Q, target", [
    ("isotropic soliton vs pi/2", np.eye(2), math.pi / 2),
    ("Hessian diag(4, 1) vs pi", np.diag([4.0, 1.0]), math.pi),
])
def test_criterion_4_local_limit(capsys, limit_family, label, Q, target):
    t0 = time.perf_counter()
    gf = GridFunction.analytic(FarFieldModel(Q), 4.0, 0.05)
    sweep = local_limit_sweep(gf, np.zeros(2), (0.9, 0.95, 0.99), limit_family, QUAD)
    secs = time.perf_counter() - t0
    err = abs(sweep.extrapolated - target) / target
    verdict(capsys, 4, f"local limit, {label}", err <= 0.05 and secs <= 120,
            f"extrapolated {sweep.extrapolated:.4f}, target {target:.4f}, rel err {err:.3f} "
            f"(tol 0.05), {secs:.0f}s (limit 120s)")


def test_criterion_5_model_solve(capsys, model_run):
    rep, c, phi = model_run["report"], model_run["config"], model_run["phi"]
    lip_ok = rep.lipschitz <= phi.lipschitz + 5 * c.h
    sc_ok = rep.semiconcavity <= phi.semiconcavity + 5 * c.h
    ok = (len(rep.stages) == 6 and rep.residual <= 1e-3 and rep.sandwich_violations == 0
          and rep.monotonicity_violations == 0 and rep.min_offset > 0 and lip_ok and sc_ok
          and rep.seconds <= 600)
    verdict(capsys, 5, "model solve 64^2, s = 3/4, six floors", ok,
            f"residual {rep.residual:.1e} (tol 1e-3), sandwich violations "
            f"{rep.sandwich_violations}, stage violations {rep.monotonicity_violations}, "
            f"min(u - phi) {rep.min_offset:.4f}, Lip {rep.lipschitz:.3f} <= "
            f"{phi.lipschitz + 5 * c.h:.3f}, SC {rep.semiconcavity:.3f} <= "
            f"{phi.semiconcavity + 5 * c.h:.3f}, {rep.seconds:.0f}s (limit 600s)")


def test_criterion_6_ellipticity(capsys, model_run):
    u, rep, c = model_run["u"], model_run["report"], model_run["config"]
    radius = MEASURE_FRACTION * u.interior_radius
    X = u.nodes()
    inside = np.flatnonzero(np.linalg.norm(X, axis=1) <= radius)
    pick = np.random.default_rng(606).choice(inside, 200, replace=False)
    dense = stage_lattice(c, c.floors[-1]).family(1)
    cert = ellipticity_certificate(u, X[np.sort(pick)], dense, quad=c.quad, s=c.s,
                                   lipschitz=rep.lipschitz, semiconcavity=rep.semiconcavity)
    verdict(capsys, 6, "ellipticity certificate on the model solve", cert.passed,
            f"theta {cert.theta:.4f} = threshold/2 from L {cert.lipschitz:.3f}, C "
            f"{cert.semiconcavity:.3f}, eta0 {cert.eta0:.4f}; {cert.n_points} nodes, "
            f"{len(dense)} members, max gap {cert.max_gap:.1e}, min argmin lambda "
            f"{cert.min_argmin_lambda:.4f}, violations {len(cert.violations)}")


def test_criterion_7_comparison(capsys, model_run):
    c, phi, barrier = model_run["config"], model_run["phi"], model_run["barrier"]
    fam = stage_lattice(c, c.floors[-1]).family(c.coarse_factor)
    rhs = RightHandSide.model(phi)
    sub = GridFunction.analytic(phi, c.box_radius, c.h)

    def run(u, v):
        return check_comparison(u, v, rhs, fam=fam, quad=c.quad, s=c.s, max_points=200)

    lifted = GridFunction.analytic(SumField((phi, AffineField(np.zeros(2), 20.0))),
                                   c.box_radius, c.h)
    lowered = GridFunction.analytic(SumField((phi, AffineField(np.zeros(2), -1.0))),
                                    c.box_radius, c.h)
    good = run(sub, barrier.ubar)
    broken_sub = run(lifted, barrier.ubar)
    broken_super = run(sub, lowered)
    ok = (good["status"] == "pass" and broken_sub["status"] == "out-of-contract"
          and not broken_sub["premise_sub_ok"] and broken_super["status"] == "out-of-contract"
          and not broken_super["premise_super_ok"])
    verdict(capsys, 7, "comparison harness", ok,
            f"(phi, ubar) {good['status']} with margins sub {good['sub_margin']:.2f}, super "
            f"{good['super_margin']:.2f}, order {good['min_margin']:.2f}; phi + 20 as "
            f"subsolution: {broken_sub['status']}; phi - 1 as supersolution: "
            f"{broken_super['status']}")


def test_criterion_8_barrier(capsys, model_run):
    barrier, c = model_run["barrier"], model_run["config"]
    rng = np.random.default_rng(808)
    r = np.concatenate([rng.uniform(0.05, 0.95, 20), rng.uniform(1.05, 6.0, 30)])
    t = rng.uniform(0, 2 * np.pi, r.size)
    X = np.column_stack([r * np.cos(t), r * np.sin(t)])
    vals = frac_lap_of(barrier.profile, X, c.s, c.quad, box_radius=c.box_radius)
    rel = float(np.abs(vals / g1(r, c.s, barrier.tau) - 1).max())
    tau_fit, _, _ = fit_decay_exponent(barrier.profile, 2.0, c.box_radius, c.s, 2)
    grid = np.concatenate([[0.0], np.geomspace(1e-3, 1e4, 4000)])
    w = barrier.profile.profile(grid)
    increases = int(np.sum(np.diff(w) > 0))
    ok = rel <= 1e-3 and abs(tau_fit - barrier.tau) <= 0.1 * barrier.tau and increases == 0
    verdict(capsys, 8, "barrier profile", ok,
            f"(-Delta)^s w1 / g1 - 1 max {rel:.1e} at 50 points (tol 1e-3); decay fit on "
            f"[2, {c.box_radius:g}] {tau_fit:.4f} vs tau {barrier.tau:.4f} (tol 10%); "
            f"{increases} radial increases")


def test_criterion_9_sup_inf_convolution(capsys, lipschitz_offset):
    flat = AffineField(np.zeros(1))
    eps = 0.5
    errs, hs = [], []
    for N in (41, 81, 161):
        g = np.linspace(-4, 4, N)
        gf = GridFunction(4.0, 8 / (N - 1), flat, np.abs(g))
        out = sup_inf_convolution(gf, eps).offset
        inner = np.abs(g) <= 2
        errs.append(float(np.abs(out - (np.abs(g) + eps / 4))[inner].max()))
        hs.append(gf.h)
    oracle_ok = all(e <= h for e, h in zip(errs, hs)) and errs[-1] < errs[0]
    sandwich_bad, worst_sc = 0, -np.inf
    for seed in range(20):
        gf = lipschitz_offset(seed)
        up = sup_inf_convolution(gf, eps).offset
        down = sup_inf_convolution(gf, eps, "inf").offset
        sandwich_bad += int(np.sum(down > gf.offset + 1e-12) + np.sum(gf.offset > up + 1e-12))
        for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
            core = up[1:-1, 1:-1]
            plus = up[1 + di:up.shape[0] - 1 + di, 1 + dj:up.shape[1] - 1 + dj]
            minus = up[1 - di:up.shape[0] - 1 - di, 1 - dj:up.shape[1] - 1 - dj]
            second = (plus + minus - 2 * core) / ((di * di + dj * dj) * gf.h ** 2)
            worst_sc = max(worst_sc, float(-second.min()))
    sc_ok = worst_sc <= 2 / eps + gf.h
    verdict(capsys, 9, "sup/inf convolution", oracle_ok and sandwich_bad == 0 and sc_ok,
            f"|x| oracle errors {', '.join(f'{e:.3f}' for e in errs)} at h "
            f"{', '.join(f'{h:.2f}' for h in hs)} (need <= h); {sandwich_bad} sandwich "
            f"violations over 20 offsets; semiconvexity {worst_sc:.3f} <= 2/eps + h = "
            f"{2 / eps + gf.h:.3f}")
