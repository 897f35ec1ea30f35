import dataclasses

import numpy as np
import pytest

from bridgectl import TimeGrid, cost_J, gamma_map, hamiltonian, sample_noise
from bridgectl.bridge import direct_quadratic_solution
from bridgectl.control import (
    check_gradients,
    control_from_costate,
    duality_identity_check,
    hamiltonian_u_gradient,
    random_direction_table,
    validate_assumptions,
    variational_inequality_check,
)
from bridgectl.scenarios import build_scenario, registry


@pytest.fixture(scope="module")
def lq6():
    return build_scenario("lq_benchmark", n_modes=6)


@pytest.fixture(scope="module")
def sat6():
    return build_scenario("nonlinear_gamma", n_modes=6)


def test_hamiltonian_zero_control(lq6, rng):
    x = rng.normal(size=6)
    p = rng.normal(size=6)
    val = hamiltonian(lq6, 0.3, x, np.zeros(8), p)
    assert val == pytest.approx(-float(lq6.l0(0.3, x[None, :])[0]))
    u = rng.normal(size=8)
    val0 = hamiltonian(lq6, 0.3, x, u, np.zeros(6))
    expected = -float(lq6.l0(0.3, x[None, :])[0] + lq6.g_of_u(u[None, :])[0])
    assert val0 == pytest.approx(expected)


def test_gamma_is_hamiltonian_maximizer(lq6, rng):
    x = rng.normal(size=6)
    p = rng.normal(size=6) * 0.5
    u_star = control_from_costate(lq6, p)
    h_star = hamiltonian(lq6, 0.1, x, u_star, p)
    for _ in range(200):
        u = u_star + rng.normal(size=8)
        assert hamiltonian(lq6, 0.1, x, u, p) <= h_star + 1e-12
    grad = hamiltonian_u_gradient(lq6, 0.1, x[None, :], u_star[None, :], p[None, :])
    assert np.max(np.abs(grad)) < 1e-12


def test_gamma_quadratic_closed_form(lq6, rng):
    z = rng.normal(size=(50, 8))
    assert np.allclose(gamma_map(lq6, z), -z)
    assert np.array_equal(gamma_map(lq6, np.zeros(8)), np.zeros(8))


def test_gamma_saturating_solves_stationarity(sat6, rng):
    z = rng.normal(size=(100, 8)) * 3
    u = gamma_map(sat6, z)
    residual = sat6.g_grad(u) + z
    assert np.max(np.abs(residual)) < 1e-12


def test_gamma_dissipativity_and_lipschitz(sat6, lq6, rng):
    for scen in (lq6, sat6):
        z1 = rng.normal(size=(1000, 8)) * 2
        z2 = rng.normal(size=(1000, 8)) * 2
        dz = z1 - z2
        dg = gamma_map(scen, z1) - gamma_map(scen, z2)
        ip = np.sum(dg * dz, axis=1)
        sq = np.sum(dz * dz, axis=1)
        assert np.all(ip <= -scen.c_gamma * sq + 1e-10)
        assert np.all(np.sum(dg * dg, axis=1) <= scen.lip_gamma**2 * sq + 1e-10)
        if scen.gamma_kind == "quadratic":
            assert np.max(np.abs(ip / sq + 1.0 / scen.c_g)) < 1e-10


def test_gamma_invariant_to_constant_energy_shift(lq6, rng):
    shifted = dataclasses.replace(
        lq6, g_of_u=lambda U, _g=lq6.g_of_u: _g(U) + 5.0)
    z = rng.normal(size=(20, 8))
    assert np.max(np.abs(gamma_map(shifted, z) - gamma_map(lq6, z))) < 1e-12


def test_cost_zero_everything(lq6):
    scen = dataclasses.replace(
        lq6,
        l0=lambda t, X: 0.5 * np.sum(X * X, axis=-1),
        l0_x=lambda t, X: X,
        h=lambda X: np.zeros(X.shape[0]),
        h_x=lambda X: np.zeros_like(X),
        g_matrix=None, boundary_noise=False, x0=np.zeros(6))
    grid = TimeGrid(1.0, 20)
    noise = sample_noise(grid, 6, 50, seed=1)
    J, se = cost_J(scen, scen.x0, None, noise)
    assert J == 0.0 and se == 0.0


def test_cost_closed_form_under_distributed_noise(lq6):
    # no control, identity noise weight, l0 = |x|^2/2, no terminal cost:
    # J = 1/2 int_0^T sum_k Var_k(t) dt with the per-mode Ito variances
    scen = dataclasses.replace(
        lq6,
        l0=lambda t, X: 0.5 * np.sum(X * X, axis=-1),
        l0_x=lambda t, X: X,
        h=lambda X: np.zeros(X.shape[0]),
        h_x=lambda X: np.zeros_like(X),
        boundary_noise=False, x0=np.zeros(6))
    T = 1.0
    grid = TimeGrid(T, 100)
    noise = sample_noise(grid, 6, 10000, seed=23)
    J, se = cost_J(scen, scen.x0, None, noise)
    expected = 0.5 * T**2 / 2
    for k in range(1, 6):
        expected += 0.5 * (T / (2 * k**2) - (1 - np.exp(-2 * k**2 * T)) / (4 * k**4))
    assert abs(J - expected) <= 3 * se
    # replay contract
    J2, _ = cost_J(scen, scen.x0, None, noise)
    assert J2 == J


@pytest.fixture(scope="module")
def lq6_solution(lq6):
    grid = TimeGrid(0.8, 80)
    noise = sample_noise(grid, 6, 3000, seed=41)
    sol, _, _ = direct_quadratic_solution(lq6, grid, noise)
    return sol, noise


def test_duality_identity_zero_direction(lq6, lq6_solution):
    sol, noise = lq6_solution
    rep = duality_identity_check(lq6, sol, np.zeros((81, 8)), noise)
    assert rep["lhs"] == 0.0 and rep["rhs"] == 0.0 and rep["gap"] == 0.0


def test_duality_identity_random_directions(lq6, lq6_solution, rng):
    sol, noise = lq6_solution
    for _ in range(4):
        dv = random_direction_table(lq6, sol.grid, rng)
        rep = duality_identity_check(lq6, sol, dv, noise)
        combined = np.hypot(rep["se_lhs"], rep["se_rhs"])
        assert abs(rep["gap"]) <= 3 * combined


def test_duality_identity_scales_linearly(lq6, lq6_solution, rng):
    sol, noise = lq6_solution
    dv = random_direction_table(lq6, sol.grid, rng)
    rep1 = duality_identity_check(lq6, sol, dv, noise)
    rep2 = duality_identity_check(lq6, sol, 2 * dv, noise)
    assert rep2["lhs"] == pytest.approx(2 * rep1["lhs"], rel=1e-10)
    assert rep2["rhs"] == pytest.approx(2 * rep1["rhs"], rel=1e-10)


def test_variational_inequality_at_solution(lq6, lq6_solution):
    sol, _ = lq6_solution
    rep = variational_inequality_check(lq6, sol, rng=np.random.default_rng(5))
    assert rep["passed"], rep


def test_variational_inequality_detects_shifted_control(lq6, lq6_solution):
    sol, _ = lq6_solution
    baseline = variational_inequality_check(lq6, sol, rng=np.random.default_rng(5))
    shifted = control_from_costate(lq6, sol.p) + 0.5
    rep = variational_inequality_check(lq6, sol, rng=np.random.default_rng(5),
                                       tol=baseline["tol"], control_table=shifted)
    assert not rep["passed"]
    assert rep["max_violation"] > 10 * baseline["tol"]


def test_registry_contract():
    names = list(registry())
    assert names == ["lq_benchmark", "neumann_heat_default",
                     "nonlinear_gamma", "boundary_only"]
    bo = build_scenario("boundary_only", n_modes=6)
    assert bo.op.b_matrix is None
    assert np.array_equal(bo.op_lin.b_matrix, np.eye(6))
    # builders are deterministic
    a = build_scenario("neumann_heat_default", n_modes=6)
    b = build_scenario("neumann_heat_default", n_modes=6)
    assert np.array_equal(a.op.b_matrix, b.op.b_matrix)


@pytest.mark.parametrize("name", list(registry()))
def test_every_builtin_scenario_validates(name):
    scen = build_scenario(name, n_modes=6)
    rep = validate_assumptions(scen, n_samples=200)
    assert rep["passed"], rep
    ok, worst = check_gradients(scen, n_points=100)
    assert ok, f"gradient finite-difference defect {worst}"


def test_validator_flags_concave_terminal(lq6):
    broken = dataclasses.replace(
        lq6,
        h=lambda X: -0.5 * np.sum(X * X, axis=-1),
        h_x=lambda X: -X)
    rep = validate_assumptions(broken, n_samples=100)
    assert not rep["passed"]
    assert not rep["checks"]["terminal_gradient_monotonicity"]["passed"]


def test_quadratic_monotonicity_constants_are_exact(lq6):
    rep = validate_assumptions(lq6, n_samples=300)
    assert rep["checks"]["running_gradient_monotonicity"]["value"] == \
        pytest.approx(1.0, abs=1e-10)
    assert rep["checks"]["gamma_lipschitz"]["value"] == \
        pytest.approx(1.0 / lq6.c_g, abs=1e-10)
