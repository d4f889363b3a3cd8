"""Acceptance gate: every criterion at its stated tolerance, one line each.

Desk scale: n = 1 on a 4096-point torus.  The criteria are property-based
with frozen seeds; budgets are wall-clock upper bounds per criterion.
"""

import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, MCF_SEEDS, QEW_SEEDS, radial_fd_laplacian

from quenchpin import mcf as mcf_mod
from quenchpin import qew as qew_mod
from quenchpin.experiments import (
    Config,
    parse_config,
    run_hysteresis,
    run_percolation_stats,
    run_verify_certificate,
)
from quenchpin.obstacles import eval_f_max_local_sum
from quenchpin.percolation import SiteField, minimal_lipschitz_surface, tail_statistics
from quenchpin.errors import CapExceeded
from quenchpin.sim import (
    Grid,
    Outcome,
    SimState,
    StopSpec,
    comparison_check,
    monotone_check,
    run_until,
    update_roundoff_scale,
)
from test_percolation import brute_force_minimal
from test_qew import bare_params as qew_bare
from test_mcf import bare_params as mcf_bare


def record(num, desc, ok, detail, budget_s, elapsed):
    line = (f"ACCEPTANCE {num:02d} [{'PASS' if ok else 'FAIL'}] {desc}: "
            f"{detail} ({elapsed:.1f}s / budget {budget_s:.0f}s)")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert elapsed < budget_s, line


def test_criterion_01_local_profile_exactness():
    t0 = time.monotonic()
    worst_neumann = 0.0
    slopes_checked = 0
    ok = True
    for n in (1, 2):
        p = qew_bare(n=n)
        worst_neumann = max(worst_neumann,
                            abs(qew_mod.v_out_eval(np.array([p.r_out]), p)[1][0]))
        for pts, target, fn in (
            (np.linspace(0.1, 0.45, 8), p.F_in,
             lambda r, _p=p: qew_mod.v_in_eval(np.abs(r), _p)[0]),
            (np.linspace(0.6, 1.9, 8), p.F_out,
             lambda r, _p=p: qew_mod.v_out_eval(np.abs(r), _p)[0]),
        ):
            errs = []
            for delta in (1e-2, 5e-3, 2.5e-3):
                errs.append(np.abs(radial_fd_laplacian(fn, pts, n, delta) - target).max())
            if errs[0] > 1e-11:
                slope = math.log2(errs[0] / errs[1])
                slopes_checked += 1
                ok &= slope >= 1.9
            else:
                ok &= errs[-1] < 1e-9  # quadratic piece: stencil exact
    ok &= worst_neumann <= 1e-8
    record(1, "local profile exactness",
           ok, f"neumann={worst_neumann:.2e}, richardson checks={slopes_checked}",
           1.0, time.monotonic() - t0)


def test_criterion_02_jump_condition_equivalence():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    agree = 0
    total = 100
    for _ in range(total):
        n = int(rng.integers(1, 4))
        p = qew_bare(n=n, F_in=rng.uniform(0.1, 5.0), r_in=rng.uniform(0.05, 0.5),
                     F_out=-rng.uniform(0.001, 0.5), r_out=rng.uniform(0.8, 5.0))
        ok_cond, slack = qew_mod.check_jump_condition(p)
        delta = 1e-7
        inner = (qew_mod.v_in_eval(np.array([p.r_in]), p)[0][0]
                 - qew_mod.v_in_eval(np.array([p.r_in - delta]), p)[0][0]) / delta
        outer = (qew_mod.v_out_eval(np.array([p.r_in + delta]), p)[0][0]
                 - qew_mod.v_out_eval(np.array([p.r_in]), p)[0][0]) / delta
        diff = inner - outer
        if abs(diff) > 1e-10 or abs(slack) > 1e-10:
            agree += int(ok_cond == (diff >= 0.0))
        else:
            agree += 1
    record(2, "jump condition equals downward derivative jump",
           agree == total, f"{agree}/{total} agree", 1.0, time.monotonic() - t0)


def test_criterion_03_lipschitz_percolation():
    t0 = time.monotonic()
    rng = np.random.default_rng(33)
    mismatches = 0
    for _ in range(500):
        openness = rng.random((6, 4)) < rng.uniform(0.35, 0.9)
        sf = SiteField(n=1, extent=(6,), cap=4, openness=openness)
        ref = brute_force_minimal(openness, 4)
        try:
            got = minimal_lipschitz_surface(sf).L
        except CapExceeded:
            got = None
        same = (got is None and ref is None) or (
            got is not None and ref is not None and np.array_equal(got, ref))
        mismatches += int(not same)
    curve = tail_statistics(0.95, 1, trials=100_000, seed=7, cap=12, side=48)
    ratio, ratio_hi = curve.envelope_ratio()
    ok = mismatches == 0 and ratio_hi <= 0.2
    record(3, "lipschitz percolation",
           ok, f"bruteforce mismatches={mismatches}, envelope ratio "
           f"{ratio:.4f} (hi {ratio_hi:.4f}) <= nu=0.2",
           300.0, time.monotonic() - t0)


def test_criterion_04_qew_certificates(fixture_shape, fixture_dist, qew_params):
    t0 = time.monotonic()
    ok = True
    worst = -np.inf
    per_seed_budget_ok = True
    for seed in QEW_SEEDS:
        ts = time.monotonic()
        sup, _, _ = qew_mod.build_qew_pipeline(
            fixture_shape, 1.0, fixture_dist, seed=seed, cells=(4,),
            params=qew_params)
        rep = qew_mod.certify(sup, qew_params.F_star, grid_spacing=0.02,
                              tol_analytic=1e-8, tol_glue=1e-4)
        rep_bad = qew_mod.certify(sup, 10 * qew_params.F_star, grid_spacing=0.02)
        ok &= rep.passed and rep.ridge_failures == 0 and rep.sphere_failures == 0
        ok &= not rep_bad.passed
        worst = max(worst, max(r.worst for r in rep.regions if r.count))
        per_seed_budget_ok &= (time.monotonic() - ts) < 120.0
    record(4, "qew certificates (5 seeds, pass at F*, fail at 10 F*)",
           ok and per_seed_budget_ok,
           f"worst residual {worst:.3e}", 600.0, time.monotonic() - t0)


def test_criterion_05_mcf_profile_and_certificates(fixture_shape, fixture_dist,
                                                   mcf_params):
    t0 = time.monotonic()
    p = mcf_bare()
    prof = mcf_mod.annulus_profile(p)

    def val(x):
        r = np.sqrt(np.sum(np.atleast_2d(x) ** 2, axis=1))
        return prof.value(r)

    pts = np.linspace(0.7, 1.8, 10).reshape(-1, 1)
    kap, _, _ = mcf_mod.kappa_fd(val, pts, 1e-3, 1)
    cmc_err = np.abs(kap - p.F_out).max()
    rs = np.linspace(0.55, 1.95, 20)
    eps = 1e-5
    fd = (mcf_mod.w_out_eval(rs + eps, p) - mcf_mod.w_out_eval(rs - eps, p)) / (2 * eps)
    slope_err = np.abs(fd - mcf_mod.w_out_slope(rs, p)).max()
    ok = cmc_err < 1e-4 and slope_err < 1e-6
    per_seed_budget_ok = True
    for seed in MCF_SEEDS:
        ts = time.monotonic()
        sup, _, _ = mcf_mod.build_mcf_pipeline(
            fixture_shape, 1.0, fixture_dist, seed=seed, cells=(3,),
            params=mcf_params)
        rep = mcf_mod.certify_mcf(sup, mcf_params.F_star, grid_spacing=0.02)
        rep_bad = mcf_mod.certify_mcf(sup, 10 * mcf_params.F_star,
                                      grid_spacing=0.05)
        ok &= rep.passed and not rep_bad.passed
        per_seed_budget_ok &= (time.monotonic() - ts) < 300.0
    record(5, "mcf profile oracles and certificates (3 seeds)",
           ok and per_seed_budget_ok,
           f"cmc err {cmc_err:.2e}, slope err {slope_err:.2e}",
           900.0, time.monotonic() - t0)


def test_criterion_06_pinning_end_to_end(fixture_shape, fixture_dist, qew_params):
    t0 = time.monotonic()
    ok = True
    details = []
    for seed in QEW_SEEDS:
        ts = time.monotonic()
        sup, _, _ = qew_mod.build_qew_pipeline(
            fixture_shape, 1.0, fixture_dist, seed=seed, cells=(4,),
            params=qew_params)
        grid = Grid(n=1, points=(4096,), side=(sup.sides[0],))
        F = qew_params.F_star / 2.0
        state = SimState.initial(grid, sup.field, F=F, model="qew")
        H_esc = sup.field.window.y_hi - fixture_shape.r1
        stop = StopSpec(v_tol=1e-4 * F, tau=5.0, H_esc=H_esc, T_max=150.0,
                        sample_dt=1.0)
        outcome, trace = run_until(state, stop)
        v = sup.eval(grid.coordinates())[0]
        below = bool(np.all(state.u <= v))
        tol = 1e-12 * update_roundoff_scale(state, trace.max_dt)
        mono = monotone_check(trace, tol)
        elapsed = time.monotonic() - ts
        ok &= outcome == Outcome.PINNED and below and mono and elapsed < 120.0
        details.append(f"seed {seed}: {outcome.value} t={state.t:.0f} "
                       f"below={below} mono={mono} ({elapsed:.0f}s)")
    record(6, "pinning end-to-end at F*/2 (5 seeds)", ok,
           "; ".join(details), 600.0, time.monotonic() - t0)


def test_criterion_07_escape_end_to_end(fixture_shape, fixture_dist, qew_params):
    t0 = time.monotonic()
    sup, _, _ = qew_mod.build_qew_pipeline(
        fixture_shape, 1.0, fixture_dist, seed=QEW_SEEDS[0], cells=(4,),
        params=qew_params)
    grid = Grid(n=1, points=(4096,), side=(sup.sides[0],))
    H_esc = sup.field.window.y_hi - fixture_shape.r1
    M = eval_f_max_local_sum(sup.field, 0.0, sup.sides[0], 0.0,
                             H_esc + fixture_shape.r1, resolution=0.02)
    F = 1.1 * M
    state = SimState.initial(grid, sup.field, F=F, model="qew")
    stop = StopSpec(v_tol=1e-8 * F, tau=1.0, H_esc=H_esc, T_max=20.0,
                    sample_dt=0.01)
    outcome, trace = run_until(state, stop)
    mean_velocity = float(np.mean(state.u)) / state.t
    ok = outcome == Outcome.ESCAPED and mean_velocity >= (F - M) * 0.95
    record(7, "escape end-to-end above the field bound", ok,
           f"F={F:.1f}, M={M:.1f}, mean velocity {mean_velocity:.1f} "
           f">= {(F - M) * 0.95:.1f}", 60.0, time.monotonic() - t0)


def test_criterion_08_discrete_comparison(fixture_shape, fixture_dist):
    t0 = time.monotonic()
    from quenchpin.obstacles import sample_field_torus
    rng = np.random.default_rng(88)
    failures = 0
    # 60 obstacle-free pairs
    g = Grid(n=1, points=(256,), side=(10.0,))
    for _ in range(60):
        lo = SimState.initial(g, None, F=rng.uniform(-0.5, 0.5), model="qew")
        lo.u[:] = rng.normal(0, 1, 256)
        hi = SimState.initial(g, None, F=lo.F, model="qew")
        hi.u[:] = lo.u + np.abs(rng.normal(0, 1, 256))
        failures += int(not comparison_check(lo, hi, steps=50))
    # 40 pairs over a sampled field
    f = sample_field_torus((12.0,), 4.0, 1.0, fixture_dist, fixture_shape, 4)
    g2 = Grid(n=1, points=(512,), side=(12.0,))
    for _ in range(40):
        base = rng.uniform(0.0, 1.0, 512)
        lo = SimState.initial(g2, f, F=rng.uniform(0.0, 0.2), model="qew", u0=base)
        hi = SimState.initial(g2, f, F=lo.F, model="qew",
                              u0=base + np.abs(rng.normal(0, 0.3, 512)))
        failures += int(not comparison_check(lo, hi, steps=60))
    record(8, "discrete comparison principle (100 ordered pairs)",
           failures == 0, f"failures={failures}", 60.0, time.monotonic() - t0)


def test_criterion_09_hysteresis():
    t0 = time.monotonic()
    fixture = run_hysteresis(Config({
        "seed": "101", "grid.points": "512", "recipe.cells": "2",
        "hyst.plateaus": "5", "hyst.T_plateau": "40.0",
    })).results
    control = run_hysteresis(Config({
        "field.kind": "none", "grid.points": "128", "grid.side": "10.0",
        "hyst.F_max": "0.06", "hyst.plateaus": "6", "hyst.T_plateau": "20.0",
        "hyst.H_window": "1.0",
    })).results
    ok = (fixture["area_T"] > 0.0
          and fixture["rate_dependence"] < 0.10
          and control["area_2T"] < control["area_T"])
    record(9, "hysteresis: pinned loop rate-independent, viscous control shrinks",
           ok, f"fixture area {fixture['area_T']:.3e} "
           f"(rate dep {fixture['rate_dependence']:.3f}); control "
           f"{control['area_T']:.3e} -> {control['area_2T']:.3e}",
           300.0, time.monotonic() - t0)


def test_criterion_10_reproducibility(tmp_path):
    t0 = time.monotonic()
    perc = {"perc.trials": "20000", "perc.cap": "10", "perc.side": "40"}
    r1 = run_percolation_stats(Config({**perc, "threads": "1"}))
    r8 = run_percolation_stats(Config({**perc, "threads": "8"}))
    same_threads = (r1.to_text() == r8.to_text()
                    and r1.tables["survival.csv"] == r8.tables["survival.csv"])
    # re-run from the echoed config block
    r1.write(tmp_path)
    text = (tmp_path / "report.txt").read_text()
    block = text.split("[config]\n", 1)[1].split("[results]\n", 1)[0]
    r_again = run_percolation_stats(Config(parse_config(block)))
    same_rerun = r_again.to_text() == r1.to_text()
    cert = {"seed": "101", "cert.grid_spacing": "0.05"}
    c1 = run_verify_certificate(Config(cert))
    c2 = run_verify_certificate(Config(cert))
    same_cert = c1.to_text() == c2.to_text() and c1.tables == c2.tables
    ok = same_threads and same_rerun and same_cert
    record(10, "byte-identical reports across re-runs and thread counts", ok,
           f"threads={same_threads}, rerun={same_rerun}, certificate={same_cert}",
           120.0, time.monotonic() - t0)
