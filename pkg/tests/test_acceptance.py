"""Acceptance gate: one PASS/FAIL line per criterion in the terminal summary."""
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np

from velocity_jump.algebra import Monomial, OperatorPoly, det_bareiss, det_rank_one
from velocity_jump.compare import CompareSpec, run_compare
from velocity_jump.expansion import build_stack
from velocity_jump.model import (
    ModelConfig,
    build_L,
    det_model,
    expected_leading_operator,
    is_even_in_v,
    perturbation_series,
    reconcile_published,
)
from velocity_jump.montecarlo import RunConfig, second_moment_closed_form, second_moment_ode, simulate_batch
from velocity_jump.spectral import (
    InitialCondition,
    ModeSystemState,
    SpectralGrid,
    density,
    evolve,
    mode_matrix,
    moments,
    telegraph_rates,
)

MC_CFG = ModelConfig(3, v=2.0, lam=3.0)


def test_criterion_1_determinant_identity(record_criterion):
    start = time.perf_counter()
    equal = []
    for n in (1, 2, 3):
        L = build_L(n)
        equal.append(det_bareiss(L) == det_rank_one([L[i][i] for i in range(2 * n)], L[0][1]))
    elapsed = time.perf_counter() - start
    record_criterion(1, all(equal) and elapsed < 10.0,
                     f"elimination == rank-one for n=1,2,3: {equal}, {elapsed:.2f} s")


def test_criterion_2_published_leading_terms(record_criterion):
    eps_lead = -10
    rep = reconcile_published(3, "det")
    s_row = rep.lookup(Monomial(1, (0, 0, 0)))
    lap_rows = [rep.lookup(Monomial(0, tuple(2 if a == b else 0 for a in range(3)))) for b in range(3)]
    leading_ok = (s_row.computed == Fraction(7776, 3125) and s_row.eps_power == eps_lead
                  and all(r.computed == Fraction(-432, 625) and r.eps_power == eps_lead for r in lap_rows))
    counts = rep.counts()
    labels = {r.label for r in rep.rows if r.label}
    itemized = all(r.printed is not None for r in rep.mismatches())
    ok = leading_ok and len(labels) == 15 and itemized
    record_criterion(2, ok, f"7776/3125 and -432/625 at eps^-10: {leading_ok}; "
                            f"{len(labels)} printed terms covered; counts {counts}")


def test_criterion_3_normalized_series(record_criterion):
    series = perturbation_series(3)
    s, lap, mixed = OperatorPoly.s(3), OperatorPoly.laplacian(3), OperatorPoly.mixed_fourth(3)
    P0 = s - lap * Fraction(5, 18)
    P1 = (s * s - lap * s * Fraction(1, 3) + mixed * Fraction(5, 54)) * Fraction(25, 6)
    ok = series.P[0] == P0 and series.P[1] == P1
    record_criterion(3, ok, f"P0 = {series.P[0]}; P1 exact: {series.P[1] == P1}")


def test_criterion_4_general_leading_operator(record_criterion):
    results = {}
    for n in (1, 2, 3, 4):
        results[n] = (perturbation_series(n).P[0] == expected_leading_operator(n), is_even_in_v(det_model(n)))
    ok = all(a and b for a, b in results.values())
    record_criterion(4, ok, "(P0 form, even in v) per n: " + str(results))


def test_criterion_5_montecarlo_second_moment(record_criterion):
    start = time.perf_counter()
    est = simulate_batch(RunConfig(MC_CFG, 100_000, (1.0,), seed=2024))
    elapsed = time.perf_counter() - start
    oracle = float(second_moment_closed_form(MC_CFG, 1.0))
    ode = float(second_moment_ode(MC_CFG, [1.0])[0])
    m2, se = est.m2[0, 0], est.se_m2[0, 0]
    z = abs(m2 - oracle) / se
    ok = z < 4 and elapsed < 60 and abs(ode - oracle) < 1e-10
    record_criterion(5, ok, f"E[x1^2](1) = {m2:.5f} +- {se:.5f} vs {oracle:.5f} ({z:.2f} SE), "
                            f"ODE {ode:.10f}, {elapsed:.1f} s")


def test_criterion_6_reference_vs_montecarlo(record_criterion):
    sigma0 = 0.2
    state = ModeSystemState.initial(SpectralGrid(3, 12.0, 256), InitialCondition("gaussian", sigma0), "axes")
    var_ref = moments(density(evolve(state, 1.0, MC_CFG))).variance
    est = simulate_batch(RunConfig(MC_CFG, 100_000, (1.0,), seed=7, sigma0=sigma0))
    var_mc = est.variance()[0]
    rel = np.abs(var_mc - var_ref) / var_ref
    record_criterion(6, bool(np.all(rel < 0.02)),
                     f"spectral {np.round(var_ref, 5).tolist()} vs MC {np.round(var_mc, 5).tolist()}, "
                     f"max rel diff {rel.max():.4f}")


def test_criterion_7_diffusion_limit_convergence(record_criterion):
    spec = CompareSpec(n=3, eps_list=(0.4, 0.2, 0.1), k_list=(0, 1), t_eval=1.0,
                       grid=SpectralGrid(3, 16.0, 32))
    table = run_compare(spec)
    s0, s1 = table.slopes[0][0], table.slopes[1][0]
    record_criterion(7, s0 >= 1.8 and s1 >= 3.5,
                     f"32^3 grid, t=1: slope k=0 {s0:.3f} (need 1.8), k=1 {s1:.3f} (need 3.5); "
                     f"L2 errors k=0 {['%.2e' % e for e in table.errors(0)]}, "
                     f"k=1 {['%.2e' % e for e in table.errors(1)]}")


def test_criterion_8_conservation_and_exactness(record_criterion):
    grid = SpectralGrid(3, 16.0, 32)
    init = InitialCondition("gaussian", 1.0)
    mass_err = 0.0
    for cfg in (MC_CFG, ModelConfig(3, eps=0.1)):
        st = ModeSystemState.initial(grid, init)
        for _ in range(5):
            st = evolve(st, 0.2, cfg)
            mass_err = max(mass_err, abs(st.mass - 1.0))
    residual = 0.0
    for split in ("slow", "concentrated"):
        residual = max(residual, max(build_stack(perturbation_series(3), grid, init, 3, split=split).residuals()))
    rc = RunConfig(MC_CFG, 20_000, (0.5, 1.0), seed=99, chunk_size=4096)
    runs = [simulate_batch(replace(rc, workers=w)) for w in (1, 2, 4)]
    same = all(np.array_equal(runs[0].m2, r.m2) and np.array_equal(runs[0].mean, r.mean) for r in runs[1:])
    ok = mass_err <= 1e-12 and residual <= 1e-12 and same
    record_criterion(8, ok, f"mass drift {mass_err:.1e}, recursion residual {residual:.1e}, "
                            f"MC identical for 1/2/4 workers: {same}")


def test_criterion_9_two_state_chain(record_criterion):
    s, d, v, lam = OperatorPoly.s(1), OperatorPoly.d(1, 0), OperatorPoly.v(1), OperatorPoly.lam(1)
    det_ok = det_model(1) == s * s + s * lam * 2 - v * v * d * d
    series = perturbation_series(1)
    scaled_ok = (series.P[0] * series.normalization == s * 2 - d * d
                 and series.P[1] * series.normalization == s * s and len(series.P) == 2)
    p0_ok = series.P[0] == s - d * d * Fraction(1, 2)
    cfg = ModelConfig(1, v=2.0, lam=3.0)
    worst = 0.0
    for k in np.linspace(0.0, 4.0, 41):
        eig = np.linalg.eigvals(mode_matrix(np.array([k]), cfg))
        ref = telegraph_rates(k, cfg)
        if abs(cfg.v * k - cfg.lam) > 1e-3:  # the defective point is ill-conditioned for eig
            # pair the eigenvalues as a multiset
            dev = min(np.abs(eig - ref).max(), np.abs(eig - ref[::-1]).max())
            worst = max(worst, float(dev))
    ok = det_ok and scaled_ok and p0_ok and worst <= 1e-10
    record_criterion(9, ok, f"det exact: {det_ok}; eps^2 s^2 + 2 s - d^2: {scaled_ok}; "
                            f"P0 = s - d^2/2: {p0_ok}; max eigenvalue deviation {worst:.1e}")
