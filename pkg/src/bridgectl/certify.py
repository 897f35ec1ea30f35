"""Optimality certificates: cost dominance, variational inequality, duality.

The certificate treats the solved control as a stochastic process (open
loop): the realized control table is extracted from the solution costate,
perturbed directionally, and re-simulated under the same noise ensemble, so
every comparison is a common-random-number comparison.  All Monte Carlo
quantities are reported with standard errors.
"""

from __future__ import annotations

import numpy as np

from .control import (
    control_table_from_solution,
    cost_of_paths,
    duality_identity_check,
    random_direction_table,
    running_cost_paths,
    variational_inequality_check,
)
from .forward import simulate_forward

SLOPE_TOL = 2e-2  # central-difference slope bound per unit direction norm


def perturbed_cost_paths(scenario, noise, u_table, direction, eps):
    """Pathwise costs under the control process u + eps * direction."""
    pert = u_table + eps * direction[None, :, :]
    ens = simulate_forward(scenario.model, scenario.lifts, scenario.x0, pert,
                           None, noise, op=scenario.op,
                           g_matrix=scenario.g_matrix,
                           boundary=scenario.boundary_noise)
    return running_cost_paths(scenario, noise.grid, ens.states, pert)


def certificate_for(scenario, solution, noise, seed=0, n_directions=20,
                    epsilons=(1e-3, 1e-2)):
    """Assemble the full certificate dictionary for a solved problem."""
    rng = np.random.default_rng(seed + 77)
    grid = solution.grid
    u_table = control_table_from_solution(scenario, solution)
    base_paths = running_cost_paths(scenario, grid, solution.X, u_table)
    n_paths = len(base_paths)
    J, J_se = cost_of_paths(scenario, grid, solution.X, u_table)

    directions = [random_direction_table(scenario, grid, rng) for _ in range(n_directions)]
    pert_rows = []
    all_pass = True
    for idx, v in enumerate(directions):
        for eps in epsilons:
            plus = perturbed_cost_paths(scenario, noise, u_table, v, eps)
            minus = perturbed_cost_paths(scenario, noise, u_table, v, -eps)
            diff = plus - base_paths
            delta = float(np.mean(diff))
            se_delta = float(np.std(diff, ddof=1) / np.sqrt(n_paths))
            slope = float(abs(np.mean(plus) - np.mean(minus)) / (2 * eps))
            dominance_ok = delta >= -3.0 * se_delta
            slope_ok = slope <= SLOPE_TOL
            all_pass = all_pass and dominance_ok and slope_ok
            pert_rows.append({
                "direction": idx,
                "eps": eps,
                "J_perturbed": float(np.mean(plus)),
                "se_perturbed": float(np.std(plus, ddof=1) / np.sqrt(n_paths)),
                "delta_J": delta,
                "se_delta": se_delta,
                "delta_J_over_tol": float((delta + 3.0 * se_delta)
                                          / max(3.0 * se_delta, 1e-300)),
                "central_slope": slope,
                "slope_tol": SLOPE_TOL,
                "passed": bool(dominance_ok and slope_ok),
            })

    dual_rows = []
    worst_ratio = 0.0
    dual_pass = True
    for idx, v in enumerate(directions):
        rep = duality_identity_check(scenario, solution, v, noise)
        combined = float(np.hypot(rep["se_lhs"], rep["se_rhs"]))
        ratio = abs(rep["gap"]) / max(combined, 1e-300)
        ok = ratio <= 3.0
        dual_pass = dual_pass and ok
        worst_ratio = max(worst_ratio, ratio)
        dual_rows.append({**rep, "direction": idx, "combined_se": combined,
                          "ratio": ratio, "passed": bool(ok)})

    vi = variational_inequality_check(scenario, solution,
                                      rng=np.random.default_rng(seed + 177))
    return {
        "scenario": scenario.name,
        "cost": {"value": J, "se": J_se},
        "perturbations": pert_rows,
        "perturbations_passed": bool(all_pass),
        "variational_inequality": vi,
        "duality": {"table": dual_rows, "worst_ratio": worst_ratio,
                    "passed": bool(dual_pass)},
        "passed": bool(all_pass and vi["passed"] and dual_pass),
    }
