"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with ``pytest -s`` to see them on success).

Oracles are independent of the code paths they check: dense/adaptive
quadrature for Ito variances, closed-form scalar kernels plus an adaptive
integrator, an RK4 integrator for the matrix kernel, Monte Carlo cost
dominance under common random numbers for the optimality certificates, and
batched replication for comparisons between estimators that carry internal
regression noise.
"""

import numpy as np
import pytest
from scipy.integrate import quad

import bridgectl.spectral as spectral
from bridgectl import (
    BridgeConfig,
    TimeGrid,
    riccati_rk4,
    sample_noise,
    simulate_forward,
    solve_riccati,
)
from bridgectl.bridge import bridge_solve, direct_quadratic_solution, fbsde_residual
from bridgectl.certify import perturbed_cost_paths
from bridgectl.control import (
    control_table_from_solution,
    duality_identity_check,
    random_direction_table,
    running_cost_paths,
    variational_inequality_check,
)
from bridgectl.riccati import solve_riccati_diag
from bridgectl.scenarios import build_scenario

GRID = TimeGrid(1.0, 200)


def _report(num, name, passed, detail):
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {num} - {name}: {detail}")
    assert passed, f"criterion {num} ({name}): {detail}"


def ito_var(a_k, t):
    return quad(lambda s: np.exp(2.0 * a_k * s), 0.0, t, epsabs=1e-13)[0]


@pytest.fixture(scope="module")
def lq16():
    return build_scenario("lq_benchmark")


@pytest.fixture(scope="module")
def sat16():
    return build_scenario("nonlinear_gamma")


@pytest.fixture(scope="module")
def sat_bridge(sat16):
    noise = sample_noise(GRID, 16, 3000, seed=808)
    config = BridgeConfig(delta=0.1, picard_tol=1e-12, degree=2, max_picard=60)
    solution, diag = bridge_solve(sat16, GRID, config=config, noise=noise)
    return solution, diag, noise


def test_criterion_1_spectral_algebra():
    rng = np.random.default_rng(1)
    worst = {"semigroup": 0.0, "power": 0.0, "duality": 0.0, "lift": 0.0}
    for model in (spectral.build_model(16), spectral.build_model(256)):
        lifts = spectral.neumann_lift(model)
        worst["lift"] = max(worst["lift"], float(np.max(np.abs(
            model.shifted * lifts.b1 + spectral.basis_at_zero(model)))))
        for _ in range(25):
            v = rng.normal(size=model.n_modes)
            s, t = rng.uniform(0, 1.5, size=2)
            lhs = spectral.apply_semigroup(model, s, spectral.apply_semigroup(model, t, v))
            rhs = spectral.apply_semigroup(model, s + t, v)
            denom = np.abs(rhs) + 1e-300
            # below ~1e-200 the double exponent range dominates the comparison
            mask = np.abs(rhs) > 1e-200
            worst["semigroup"] = max(worst["semigroup"],
                                     float(np.max(np.abs(lhs - rhs)[mask] / denom[mask])))
            e1, e2 = rng.uniform(-0.5, 0.5, size=2)
            lhs = spectral.apply_fractional_power(
                model, e1, spectral.apply_fractional_power(model, e2, v))
            rhs = spectral.apply_fractional_power(model, e1 + e2, v)
            worst["power"] = max(worst["power"], float(np.max(
                np.abs(lhs - rhs) / (np.abs(rhs) + 1e-300))))
            u1, u2 = rng.normal(size=2)
            pair = spectral.apply_E(model, lifts, u1, u2) @ v
            z1, z2 = spectral.apply_E_adjoint(model, lifts, v)
            gap = abs(pair - (u1 * z1 + u2 * z2))
            worst["duality"] = max(worst["duality"], gap / max(
                1e-300, np.linalg.norm(v) * np.hypot(u1, u2)))
    ok = (worst["semigroup"] <= 1e-13 and worst["power"] <= 1e-12
          and worst["duality"] <= 1e-12 and worst["lift"] <= 1e-12)
    _report(1, "spectral algebra", ok,
            "defects semigroup={semigroup:.1e} power={power:.1e} "
            "duality={duality:.1e} lift={lift:.1e}".format(**worst))


def test_criterion_2_noise_calibration():
    model = spectral.build_model(16)
    lifts = spectral.neumann_lift(model)
    noise = sample_noise(GRID, 16, 10000, seed=505)
    checks = []
    ens = simulate_forward(model, lifts, np.zeros(16), None, None, noise,
                           g_matrix=np.eye(16), boundary=False)
    for k in (0, 1, 2, 5, 9):
        for m in (100, 200):
            t = GRID.nodes[m]
            sample = np.var(ens.states[:, m, k], ddof=1)
            exact = ito_var(model.eigenvalues[k], t)
            se = sample * np.sqrt(2.0 / (noise.n_paths - 1))
            checks.append(abs(sample - exact) <= 3 * se)
    ens = simulate_forward(model, lifts, np.zeros(16), None, None, noise,
                           g_matrix=None, boundary=True)
    for k in (0, 1, 3, 6):
        weight = 2 / np.pi if k else 1 / np.pi
        sample = np.var(ens.states[:, -1, k], ddof=1)
        exact = weight * ito_var(model.eigenvalues[k], GRID.horizon)
        se = sample * np.sqrt(2.0 / (noise.n_paths - 1))
        checks.append(abs(sample - exact) <= 3 * se)
    _report(2, "noise calibration", all(checks),
            f"{sum(checks)}/{len(checks)} mode variances within 3 SE "
            f"(n_paths=10^4, n_modes=16, n_steps=200)")


def test_criterion_3_smoothing_exponents():
    model = spectral.build_model(256)
    lifts = spectral.neumann_lift(model)
    t_grid = np.geomspace(1e-4, 1e-1, 50)
    slope_boundary = spectral.fit_loglog_slope(
        t_grid, spectral.hs_bound_profile(model, lifts, t_grid))
    slope_dist = spectral.fit_loglog_slope(
        t_grid, spectral.hs_profile_from_weights(model, np.ones(256), t_grid))
    ok = abs(slope_boundary + 0.25) <= 0.03 and abs(slope_dist + 0.25) <= 0.03
    _report(3, "smoothing-rate exponents", ok,
            f"fitted slopes boundary={slope_boundary:.4f} "
            f"distributed={slope_dist:.4f} (target -0.25 +/- 0.03)")


def test_criterion_4_riccati_oracle():
    details = []
    grid = GRID
    sol = solve_riccati_diag(np.array([0.0]), np.array([[1.0]]), grid)
    stationary = float(np.max(np.abs(sol.P - 1.0)))
    details.append(f"stationary={stationary:.1e}")
    a = -2.0
    sol = solve_riccati_diag(np.array([a]), np.array([[0.0]]), grid)
    closed = np.exp(2 * a * (grid.horizon - grid.nodes)) * (1 + 1 / (2 * a)) - 1 / (2 * a)
    lyap = float(np.max(np.abs(sol.P[:, 0, 0] - closed)))
    details.append(f"lyapunov={lyap:.1e}")
    gaps, sym, psd = [], [], []
    for n, substeps in ((8, 25), (16, 90)):
        scen = build_scenario("lq_benchmark", n_modes=n)
        M = scen.op.gram()
        frac = solve_riccati(scen.model, M, grid)
        rk = riccati_rk4(scen.model.eigenvalues, M, grid, substeps=substeps)
        gaps.append(float(np.max(np.abs(frac.P - rk.P))))
        sym.append(frac.diagnostics["max_symmetry_defect"])
        psd.append(frac.diagnostics["min_eigenvalue"])
    details.append("cross-check n=8: %.1e, n=16: %.1e" % tuple(gaps))
    ok = (stationary <= 1e-8 and lyap <= 1e-8 and max(gaps) <= 1e-8
          and max(sym) <= 1e-10 and min(psd) >= -1e-10)
    _report(4, "backward kernel oracle", ok, "; ".join(details))


def test_criterion_5_lq_optimality(lq16):
    noise = sample_noise(GRID, 16, 4000, seed=606)
    sol, _, _ = direct_quadratic_solution(lq16, GRID, noise)
    u = control_table_from_solution(lq16, sol)
    base = running_cost_paths(lq16, GRID, sol.X, u)
    rng = np.random.default_rng(66)
    worst_margin = np.inf
    worst_slope = 0.0
    ok = True
    for _ in range(20):
        v = random_direction_table(lq16, GRID, rng)
        for eps in (1e-3, 1e-2):
            plus = perturbed_cost_paths(lq16, noise, u, v, eps)
            minus = perturbed_cost_paths(lq16, noise, u, v, -eps)
            diff = plus - base
            se = np.std(diff, ddof=1) / np.sqrt(len(diff))
            ok = ok and (np.mean(diff) >= -3 * se)
            worst_margin = min(worst_margin, float(np.mean(diff) + 3 * se))
            slope = abs(np.mean(plus) - np.mean(minus)) / (2 * eps)
            ok = ok and slope <= 2e-2
            worst_slope = max(worst_slope, float(slope))
    _report(5, "LQ feedback optimality", ok,
            f"min(dJ + 3 SE)={worst_margin:.2e} (>=0), "
            f"max central slope={worst_slope:.2e} (<=2e-2), 20 directions")


def test_criterion_6_duality_identity(lq16, sat16, sat_bridge):
    noise = sample_noise(GRID, 16, 10000, seed=707)
    direct, _, _ = direct_quadratic_solution(lq16, GRID, noise)
    rng = np.random.default_rng(77)
    worst = 0.0
    ok = True
    for _ in range(20):
        dv = random_direction_table(lq16, GRID, rng)
        rep = duality_identity_check(lq16, direct, dv, noise)
        ratio = abs(rep["gap"]) / max(np.hypot(rep["se_lhs"], rep["se_rhs"]), 1e-300)
        ok = ok and ratio <= 3.0
        worst = max(worst, ratio)
    del direct, noise
    solution, _, sat_noise = sat_bridge
    for _ in range(20):
        dv = random_direction_table(sat16, GRID, rng)
        rep = duality_identity_check(sat16, solution, dv, sat_noise)
        ratio = abs(rep["gap"]) / max(np.hypot(rep["se_lhs"], rep["se_rhs"]), 1e-300)
        ok = ok and ratio <= 3.0
        worst = max(worst, ratio)
    _report(6, "adjoint duality identity", ok,
            f"worst |gap|/combined SE = {worst:.2f} (<=3) over 2x20 directions")


def _batched_equivalence(scenario, config, n_batches=8, paths_per_batch=625,
                         seed0=9000):
    """Bridge vs direct kernel solve, batch means with replication SEs."""
    fX, fp, fJ = [], [], []
    for b in range(n_batches):
        noise = sample_noise(GRID, scenario.n_modes, paths_per_batch, seed=seed0 + b)
        bridged, diag = bridge_solve(scenario, GRID, config=config, noise=noise)
        assert diag.converged
        direct, _, _ = direct_quadratic_solution(scenario, GRID, noise)
        fX.append([np.mean(np.sum(s.X**2, axis=2), axis=0) for s in (bridged, direct)])
        fp.append([np.mean(np.sum(s.p**2, axis=2), axis=0) for s in (bridged, direct)])
        fJ.append([np.mean(running_cost_paths(
            scenario, GRID, s.X, control_table_from_solution(scenario, s)))
            for s in (bridged, direct)])
    worst = 0.0
    for pair in (np.array(fX), np.array(fp), np.array(fJ)):
        mean = pair.mean(axis=0)          # (2, nodes) or (2,)
        se = pair.std(axis=0, ddof=1) / np.sqrt(n_batches)
        tol = 3 * np.maximum(se[0], se[1]) + 1e-9
        ratio = np.max(np.abs(mean[0] - mean[1]) / tol)
        worst = max(worst, float(ratio))
    return worst


def test_criterion_7_bridge_riccati_equivalence(lq16):
    config = BridgeConfig(delta=0.1, picard_tol=1e-10, degree=1, max_picard=40)
    worst = _batched_equivalence(lq16, config)
    _report(7, "continuation matches kernel solve (linear benchmark)", worst <= 1.0,
            f"worst |diff| / (3 MC SE) = {worst:.3f} over E|X|^2, E|p|^2, J "
            f"at every node (8 x 625 paths)")


def test_criterion_8_nonlinear_system(sat16, sat_bridge):
    solution, diag, noise = sat_bridge
    residual = fbsde_residual(sat16, solution, 1.0, noise, degree=2)
    vi = variational_inequality_check(sat16, solution, rng=np.random.default_rng(88))
    stages_ok = all(s["accepted"] for s in diag.stages)
    ok = (stages_ok
          and residual["forward_rms"] <= 1e-8
          and residual["backward"]["max_abs_z"] <= 3.0
          and vi["passed"]
          and residual["weighted_tail_ratio"] <= 10.0)
    _report(8, "nonlinear optimality system", ok,
            f"stages={len(diag.stages)} all accepted={stages_ok}, "
            f"forward rms={residual['forward_rms']:.1e} (<=1e-8), "
            f"backward max|z|={residual['backward']['max_abs_z']:.2f} (<=3), "
            f"VI max violation={vi['max_violation']:.2e} (tol {vi['tol']:.2e}), "
            f"weighted tail ratio={residual['weighted_tail_ratio']:.2f} (<=10)")


def test_criterion_9_uniqueness_probe(sat16):
    noise = sample_noise(GRID, 16, 2500, seed=909)
    config = BridgeConfig(delta=0.2, picard_tol=1e-10, degree=2, max_picard=60)
    rng = np.random.default_rng(9)
    pert = 0.3 * rng.normal(size=(noise.n_paths, GRID.n_steps + 1, 16))
    sol_a, _ = bridge_solve(sat16, GRID, config=config, noise=noise,
                            warm_perturbation=pert)
    sol_b, _ = bridge_solve(sat16, GRID, config=config, noise=noise,
                            warm_perturbation=-pert)
    w = np.full(GRID.n_steps + 1, GRID.h)
    w[0] = w[-1] = GRID.h / 2
    dual_a = sat16.op.adjoint(sol_a.p)
    dual_b = sat16.op.adjoint(sol_b.p)
    diff = float(np.mean(np.sum((dual_a - dual_b) ** 2, axis=2) @ w))
    scale_paths = np.sum(dual_a**2, axis=2) @ w
    se = float(np.std(scale_paths, ddof=1) / np.sqrt(noise.n_paths))
    _report(9, "uniqueness under warm-start perturbation", diff <= 3 * se,
            f"E int |(E+B)^T dp|^2 dt = {diff:.2e} <= 3 SE = {3 * se:.2e}")


def test_criterion_10a_boundary_only_linear_equivalence():
    bo_lq = build_scenario("boundary_only")
    config = BridgeConfig(delta=0.1, picard_tol=1e-10, degree=1, max_picard=80)
    worst = _batched_equivalence(bo_lq, config, seed0=10000)
    _report("10a", "boundary-only variant, linear equivalence", worst <= 1.0,
            f"worst |diff| / (3 MC SE) = {worst:.3f} over E|X|^2, E|p|^2, J "
            f"(no distributed control, identity-augmented anchor)")


def test_criterion_10b_boundary_only_nonlinear_system():
    bo_sat = build_scenario("boundary_only", gamma_kind="saturating")
    noise = sample_noise(GRID, 16, 2500, seed=11000)
    config = BridgeConfig(delta=0.1, picard_tol=1e-12, degree=2, max_picard=80)
    solution, diag = bridge_solve(bo_sat, GRID, config=config, noise=noise)
    residual = fbsde_residual(bo_sat, solution, 1.0, noise, degree=2)
    vi = variational_inequality_check(bo_sat, solution, rng=np.random.default_rng(101))
    ok = (diag.converged
          and all(s["accepted"] for s in diag.stages)
          and residual["forward_rms"] <= 1e-8
          and residual["backward"]["max_abs_z"] <= 3.0
          and vi["passed"]
          and residual["weighted_tail_ratio"] <= 10.0)
    _report("10b", "boundary-only variant, nonlinear system", ok,
            f"forward rms={residual['forward_rms']:.1e} (<=1e-8), "
            f"backward max|z|={residual['backward']['max_abs_z']:.2f} (<=3), "
            f"VI={vi['max_violation']:.2e} (tol {vi['tol']:.2e}), "
            f"tail ratio={residual['weighted_tail_ratio']:.2f} (<=10)")
