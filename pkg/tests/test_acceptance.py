"""Acceptance criteria 1-12, one test each.

Every test records a one-line PASS/FAIL verdict that is printed at the end of
the pytest run. Criteria 7 and 8 run Monte Carlo studies and take a few
minutes together; the whole file stays under ten minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_feasible_problem, record_acceptance, tilt_closed_form, tilt_constraints
from polylr import (
    HalfLine,
    RealLine,
    StdGaussian,
    build_basis,
    check_pd,
    moment_matrix_for,
    structure_for,
)
from polylr.asymptotics import SimulationConfig, consistency_sweep, loglog_slope
from polylr.asymptotics import simulate_sampling_distribution
from polylr.density_bajd import (
    BajdParams,
    bajd_conditional_moments,
    expand_density,
    first_moment_closed_form,
    mc_moment_check,
    mc_transition_oracle,
)
from polylr.moments import empirical_moments, moment_matrix
from polylr.plr import build_problem, fit, fms_constrained, h_norm
from polylr.polybasis import Polynomial
from polylr.pricing_kernel import ReturnsPanel, build_hj_problem, hj_linear_solution, solve_kernel
from polylr.solver import (
    ConicProblem,
    Status,
    assemble_dual,
    duality_gap,
    recover_primal_from_dual,
    relative_gap,
    solve_primal,
)
from polylr.sos_cones import certificate_check

TILT_MUS = [0.0, 0.3, -0.3, 0.6, -0.6, 0.9, -0.9, 0.999, -0.999]
BAJD_DELTAS = (2 / 12, 3 / 12)


def _gauss_H():
    return moment_matrix_for(StdGaussian(), build_basis(1, 2))


def _tilt_problem(mu):
    return build_problem(_gauss_H(), tilt_constraints(mu), RealLine())


def _random_problems():
    rng = np.random.default_rng(2024)
    plan = [(1, 2)] * 13 + [(1, 4)] * 13 + [(1, 6)] * 12 + [(2, 2)] * 12
    return [random_feasible_problem(rng, d, n, n_eq=2, n_ineq=1) for d, n in plan]


@pytest.fixture(scope="module")
def tilt_models():
    return {mu: fit(StdGaussian(), tilt_constraints(mu), 2, RealLine()) for mu in TILT_MUS}


@pytest.fixture(scope="module")
def bajd_expansions():
    return {d: expand_density(BajdParams(), d) for d in BAJD_DELTAS}


@pytest.fixture(scope="module")
def pricing_panels():
    """Random panels: 20 whose linear kernel is positive on the sample, plus 10 skewed ones."""
    rng = np.random.default_rng(77)
    positive, skewed = [], []
    while len(positive) < 20:
        d = int(rng.integers(1, 4))
        k = int(rng.integers(40, 200))
        data = rng.normal(0.01, 0.04, (k, d))
        p = ReturnsPanel.from_array(data)
        if np.min(hj_linear_solution(p)(p.data)) > 0:
            positive.append(p)
    while len(skewed) < 10:
        d = int(rng.integers(1, 3))
        k = int(rng.integers(40, 120))
        data = rng.normal(0.0, 0.05, (k, d)) + rng.exponential(0.1, (k, d)) * (
            rng.uniform(size=(k, d)) < 0.1)
        skewed.append(ReturnsPanel.from_array(data))
    fits = []
    for p in positive + skewed:
        hj = build_hj_problem(p, 2)
        fits.append((hj, solve_kernel(hj)))
    return fits[:20], fits[20:]


def test_criterion_01_closed_form():
    t0 = time.perf_counter()
    errs = []
    for mu in TILT_MUS:
        sol = solve_primal(_tilt_problem(mu))
        assert sol.status is Status.OPTIMAL
        errs.append(float(np.max(np.abs(sol.x - tilt_closed_form(mu)))))
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-6 and elapsed < 1.0
    record_acceptance(1, ok, f"max coefficient error {max(errs):.2e} (tol 1e-6), "
                             f"{elapsed:.2f} s for {len(TILT_MUS)} solves")
    assert ok


def test_criterion_02_printed_matrices():
    H = _gauss_H().entries
    p = _tilt_problem(0.6)
    gamma = assemble_dual(ConicProblem(p.H, p.S, p.c, sos=structure_for(RealLine(), 2))).Gamma
    want_gamma = np.array([
        [1, 0, 1, 0, 0],
        [0, 1, 0, 1, 0],
        [1, 0, 3 / 2, 0, -1 / 2],
        [0, 1, 0, 1, 0],
        [0, 0, -1 / 2, 0, 1 / 2],
    ])
    errs = [np.max(np.abs(H - [[1, 0, 1], [0, 1, 0], [1, 0, 3]])),
            np.max(np.abs(p.S - [[1, 0, 0], [0, 1, 0]])),
            np.max(np.abs(gamma - want_gamma))]
    ok = max(errs) <= 1e-12
    record_acceptance(2, ok, "H2 / S / dual block errors " + " / ".join(f"{e:.1e}" for e in errs))
    assert ok


def test_criterion_03_feasibility_boundary():
    notes, ok = [], True
    for mu in (1.0, -1.0):
        sol = solve_primal(_tilt_problem(mu))
        ev = np.linalg.eigvalsh(sol.grams[0]) if sol.status is Status.OPTIMAL else [1, 1]
        rank_one = ev[0] <= 1e-7 * ev[-1]
        ok &= sol.status is Status.OPTIMAL and rank_one
        notes.append(f"mu={mu:+g} {sol.status.value} eig ratio {ev[0] / ev[-1]:.1e}")
    for mu in (1.0001, -1.0001):
        sol = solve_primal(_tilt_problem(mu))
        ok &= sol.status is Status.INFEASIBLE
        notes.append(f"mu={mu:+g} {sol.status.value}")
    record_acceptance(3, ok, "; ".join(notes))
    assert ok


def test_criterion_04_duality():
    worst_gap = worst_rec = 0.0
    n_opt = 0
    for p in _random_problems():
        sol = solve_primal(p)
        if sol.status is not Status.OPTIMAL:
            continue
        n_opt += 1
        worst_gap = max(worst_gap, relative_gap(sol))
        x = recover_primal_from_dual(p, sol.eta, sol.nu, sol.eps)
        worst_rec = max(worst_rec, float(np.max(np.abs(x - sol.x))))
    ok = n_opt == 50 and worst_gap <= 1e-6 and worst_rec <= 1e-6
    record_acceptance(4, ok, f"{n_opt}/50 optimal, max rel gap {worst_gap:.1e}, "
                             f"max recovery error {worst_rec:.1e} (tol 1e-6)")
    assert ok


def _grid(d):
    if d == 1:
        return np.linspace(-5, 5, 10_000)
    return np.random.default_rng(0).uniform(-5, 5, (10_000, d))


def test_criterion_05_certificates(bajd_expansions):
    problems = [_tilt_problem(mu) for mu in TILT_MUS + [1.0, -1.0]] + _random_problems()
    solved = [(p, solve_primal(p), None) for p in problems]
    for e in bajd_expansions.values():
        p = build_problem(e.H, e.plr.constraints, HalfLine())
        solved.append((p, e.plr.solution, e.plr))
    n = 0
    worst_match = 0.0
    worst_eig = worst_grid = math.inf
    ok = True
    for p, sol, model in solved:
        if sol.status is not Status.OPTIMAL:
            continue
        n += 1
        rep = certificate_check(sol.x, sol.grams, p.maps, psd_tol=1e-9, match_tol=1e-8)
        ok &= rep.passed
        worst_match = max(worst_match, rep.match_residual)
        worst_eig = min(worst_eig, rep.min_eigenvalue)
        if model is not None:
            grid_min = model.grid_min()
        else:
            grid_min = float(Polynomial(p.maps.basis, sol.x)(_grid(p.maps.basis.d)).min())
        worst_grid = min(worst_grid, grid_min)
    ok &= worst_grid >= -1e-7
    record_acceptance(5, ok, f"{n} optimal solutions, max match residual {worst_match:.1e}, "
                             f"min Gram eigenvalue {worst_eig:.1e}, grid min {worst_grid:.1e}")
    assert ok


def test_criterion_06_lemma2():
    rng = np.random.default_rng(6)
    good = bad = 0
    for trial in range(20):
        d, n = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        basis = build_basis(d, n)
        need = basis.size
        for enough in (True, False):
            k_star = int(rng.integers(need, need + 10)) if enough else int(rng.integers(1, need))
            pts = rng.standard_normal((k_star, d))
            samples = pts[rng.integers(0, k_star, 3 * need)]
            samples = np.vstack([pts, samples])  # every distinct point appears
            H = moment_matrix(empirical_moments(samples, 2 * n), basis)
            pd = check_pd(H).is_pd
            if enough:
                good += pd
            else:
                bad += not pd
    ok = good == 20 and bad == 20
    record_acceptance(6, ok, f"PD with >= N+1 distinct points {good}/20, "
                             f"singular with fewer {bad}/20")
    assert ok


def test_criterion_07_consistency():
    k_grid = [100, 1000, 10_000]
    med = consistency_sweep(0.6, k_grid, reps=500, seed=0)
    ratios = med[10_000] / med[100]
    slopes = [loglog_slope(k_grid, [med[k][j] for k in k_grid]) for j in range(3)]
    ok = bool(np.all(ratios <= 0.2)) and all(-0.7 <= s <= -0.3 for s in slopes)
    record_acceptance(7, ok, "median error ratio k=1e4/1e2 "
                      + ", ".join(f"{r:.3f}" for r in ratios)
                      + "; slopes " + ", ".join(f"{s:.3f}" for s in slopes))
    assert ok


def test_criterion_08_sampling_shape():
    res = simulate_sampling_distribution(SimulationConfig(0.6, 100, 10_000, 0))
    s = res.summary()["coefficients"]
    sk = [s[f"x{j}"]["skewness"] for j in range(3)]
    est = res.estimates[res.ok]
    tol = 1e-6
    in_x0 = bool(np.all((est[:, 0] >= 0.5 - tol) & (est[:, 0] <= 1 + tol)))
    in_x2 = bool(np.all((est[:, 2] >= -tol) & (est[:, 2] <= 0.5 + tol)))
    shape = abs(sk[0]) > 0.5 and abs(sk[2]) > 0.5 and abs(sk[1]) < 0.5
    ok = shape and in_x0 and in_x2 and res.n_failed == 0
    record_acceptance(
        8, ok,
        f"skewness x0 {sk[0]:.3f}, x1 {sk[1]:.3f}, x2 {sk[2]:.3f}; "
        f"x0 range [{est[:, 0].min():.3f}, {est[:, 0].max():.3f}], "
        f"x2 range [{est[:, 2].min():.3f}, {est[:, 2].max():.3f}]; "
        f"{res.n_infeasible} infeasible of {len(res.status)}")
    assert ok


def test_criterion_09_bajd_moments():
    p = BajdParams()
    m = bajd_conditional_moments(p, 0.25, 3)
    m1_ok = (abs(m.values[1] - first_moment_closed_form(p, 0.25)) <= 1e-7
             and abs(m.values[1] - 0.0610599) <= 1e-7)
    y = mc_transition_oracle(p, 0.25, 1_000_000, seed=0)
    z = {c["order"]: c["z"] for c in mc_moment_check(y, m)}
    ok = m1_ok and abs(z[2]) <= 3 and abs(z[3]) <= 3
    record_acceptance(9, ok, f"m1 {m.values[1]:.10f}; Monte Carlo z-scores "
                             f"m2 {z[2]:+.2f}, m3 {z[3]:+.2f} at 1e6 paths")
    assert ok


def test_criterion_10_bajd_signs(bajd_expansions):
    e2, e3 = bajd_expansions[2 / 12], bajd_expansions[3 / 12]
    f2, f3 = e2.grid_min("fms", upper=0.3), e3.grid_min("fms", upper=0.3)
    plr_min = min(min(e.grid_min("plr", upper=0.3), e.grid_min("plr"))
                  for e in (e2, e3))
    replay = max(e.moment_residuals("plr").max() for e in (e2, e3))
    mass = max(abs(e.total_mass() - 1) for e in (e2, e3))
    ok = f2 < 0 and f3 < 0 and f2 < f3 and plr_min >= -1e-7 and replay <= 1e-6 and mass <= 1e-5
    record_acceptance(10, ok, f"FMS min {f2:.3f} (2/12), {f3:.3f} (3/12); PLR min {plr_min:.1e}; "
                              f"replay {replay:.1e}; mass error {mass:.1e}")
    assert ok


def test_criterion_11_pricing(pricing_panels):
    positive, skewed = pricing_panels
    nest = max(f.plr.correction_norm for _, f in positive)
    resid = gap = 0.0
    floor = math.inf
    for hj, f in positive + skewed:
        resid = max(resid, float(np.abs(f.pricing_residuals).max()))
        dual = (f.eta, f.nu, f.plr.solution.eps)
        gap = max(gap, abs(duality_gap(hj.problem, f.plr.solution, dual)))
        floor = min(floor, f.plr.norm**2)
    two = ReturnsPanel.from_array([-0.1, 0.3])
    bound = solve_kernel(build_hj_problem(two, 1)).hj_bound_linear
    ok = (nest <= 1e-6 and resid <= 1e-7 and gap <= 1e-7 and floor >= 1 - 1e-9
          and abs(bound - 0.5) <= 1e-9)
    record_acceptance(11, ok, f"max correction norm on nested panels {nest:.1e}; residuals "
                              f"{resid:.1e}; gap {gap:.1e}; min E[xi^2] {floor:.4f}; "
                              f"two-point bound {bound:.12f}")
    assert ok


def test_criterion_12_price_of_nonnegativity(tilt_models, bajd_expansions, pricing_panels):
    pairs = []
    for mu, m in tilt_models.items():
        pairs.append((m, fms_constrained(m.H, m.constraints)))
    for e in bajd_expansions.values():
        pairs.append((e.plr, e.fms))
    for hj, f in pricing_panels[0] + pricing_panels[1]:
        pairs.append((f.plr, fms_constrained(f.plr.H, f.plr.constraints)))
    ok, worst, n_eq = True, 0.0, 0
    for m, fms in pairs:
        plr2, fms2 = m.norm**2, h_norm(m.H, fms) ** 2
        circ2 = m.correction_norm**2
        scale = max(1.0, fms2)
        equal = abs(plr2 - fms2) <= 1e-10 * scale
        zero = circ2 <= 1e-10 * scale
        ok &= plr2 >= fms2 - 1e-10 * scale and equal == zero
        worst = max(worst, abs(plr2 - fms2 - circ2) / scale)
        n_eq += equal
    ok &= worst <= 1e-8
    record_acceptance(12, ok, f"{len(pairs)} fits, {n_eq} with xi_circ = 0; "
                              f"max |plr^2 - fms^2 - circ^2| {worst:.1e}")
    assert ok
