"""Command-line entry point: ``bridgectl <command> --config <file>``.

Commands
--------
simulate      uncontrolled forward ensemble, exported per the emit flags
riccati       backward kernel with the independent integrator cross-check
solve-bridge  continuation solve of the full optimality system + residuals
certify       optimality certificate (cost dominance, variational
              inequality, adjoint duality) for the solved control
validate      structural-assumption report for the scenario

Exit status: 0 when every in-scope check passes, 1 on a failed check or
runtime error (a machine-readable ``failure.json`` is written), 2 on
configuration/usage errors (unknown scenario, bad config file).
The environment variable ``BRIDGECTL_THREADS`` caps the linear-algebra
thread pools when set before launch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import config_hash, parse_config
from .errors import ConfigurationError

COMMANDS = ("simulate", "riccati", "solve-bridge", "certify", "validate")


def _apply_thread_env():
    threads = os.environ.get("BRIDGECTL_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _setup(cfg):
    from .forward import TimeGrid, sample_noise
    from .scenarios import build_scenario, registry

    if cfg.scenario not in registry():
        raise _UnknownScenario(cfg.scenario, sorted(registry()))
    scenario = build_scenario(cfg.scenario, n_modes=cfg.n_modes)
    grid = TimeGrid(cfg.horizon, cfg.n_steps)
    noise = sample_noise(grid, cfg.n_modes, cfg.n_paths, cfg.seed)
    return scenario, grid, noise


class _UnknownScenario(Exception):
    def __init__(self, name, available):
        self.name = name
        self.available = available
        super().__init__(f"unknown scenario {name!r}; available: {', '.join(available)}")


def _solve(scenario, grid, noise, cfg):
    from .bridge import BridgeConfig, bridge_solve, direct_quadratic_solution

    if scenario.quadratic:
        solution, _, _ = direct_quadratic_solution(scenario, grid, noise)
        return solution, None
    bcfg = BridgeConfig(delta=cfg.delta, picard_tol=cfg.picard_tol,
                        max_picard=cfg.max_picard,
                        degree=cfg.resolved_degree(scenario))
    solution, diag = bridge_solve(scenario, grid, config=bcfg, noise=noise)
    return solution, diag


def cmd_simulate(cfg, out, cfg_hash):
    from . import io, report
    from .forward import simulate_forward

    scenario, grid, noise = _setup(cfg)
    ens = simulate_forward(scenario.model, scenario.lifts, scenario.x0, None,
                           None, noise, g_matrix=scenario.g_matrix,
                           boundary=scenario.boundary_noise)
    if "binary" in cfg.emit:
        io.ensemble_to_binary(out / "ensemble.bin", ens)
    if "csv" in cfg.emit:
        io.ensemble_to_csv(out / "ensemble.csv", ens, cfg_hash)
    if "json" in cfg.emit:
        import numpy as np
        io.write_json(out / "simulate_summary.json", "simulate_summary", {
            "n_paths": ens.n_paths, "n_steps": grid.n_steps, "n_modes": ens.n_modes,
            "seed": cfg.seed,
            "final_mode_variance": np.var(ens.states[:, -1, :], axis=0, ddof=1).tolist(),
        }, cfg_hash)
    if "plots" in cfg.emit:
        report.render_ensemble_figure(out / "ensemble.png", ens)
    return 0, {"paths": ens.n_paths}


def cmd_riccati(cfg, out, cfg_hash):
    import numpy as np

    from . import io, report
    from .bridge import offset_table
    from .riccati import (
        riccati_rk4,
        solve_affine_term,
        solve_riccati,
        weighted_regularity_profile,
    )

    scenario, grid, _ = _setup(cfg)
    sol = solve_riccati(scenario.model, scenario.op.gram(), grid)
    # enough substeps that the cross-check integrator's own error sits well
    # below the 1e-8 agreement gate even for the stiffest retained mode
    substeps = max(1, int(np.ceil(2000 / grid.n_steps))) * (6 if cfg.n_modes > 8 else 2)
    oracle = riccati_rk4(scenario.model.eigenvalues, scenario.op.gram(), grid,
                         substeps=substeps)
    gap = float(np.max(np.abs(sol.P - oracle.P)))
    profile = weighted_regularity_profile(scenario.model, sol.P, grid)
    affine = solve_affine_term(scenario.model, sol, scenario.op,
                               h0=offset_table(scenario.running_offset, grid),
                               g0=scenario.terminal_offset)
    passed = gap <= 1e-8
    if "csv" in cfg.emit:
        io.riccati_to_csv(out / "riccati.csv", sol, cfg_hash)
    if "json" in cfg.emit:
        io.write_json(out / "riccati_summary.json", "riccati_summary", {
            "integrator_cross_check_max_gap": gap,
            "cross_check_substeps": substeps,
            "max_symmetry_defect": sol.diagnostics["max_symmetry_defect"],
            "min_eigenvalue": sol.diagnostics["min_eigenvalue"],
            "weighted_profile_sup": float(np.max(profile)),
            "passed": passed,
        }, cfg_hash)
        io.write_json(out / "riccati_affine.json", "affine_term",
                      io.affine_term_payload(affine, scenario.model, grid), cfg_hash)
    if "plots" in cfg.emit:
        report.render_riccati_figure(out / "riccati.png", sol, profile)
    return (0 if passed else 1), {"cross_check_gap": gap}


def cmd_solve_bridge(cfg, out, cfg_hash):
    import numpy as np

    from . import io, report
    from .bridge import BridgeConfig, bridge_solve, fbsde_residual

    scenario, grid, noise = _setup(cfg)
    bcfg = BridgeConfig(delta=cfg.delta, picard_tol=cfg.picard_tol,
                        max_picard=cfg.max_picard,
                        degree=cfg.resolved_degree(scenario))
    solution, diag = bridge_solve(scenario, grid, config=bcfg, noise=noise)
    residual = fbsde_residual(scenario, solution, 1.0, noise,
                              degree=bcfg.degree)
    passed = (diag.converged
              and residual["forward_rms"] <= 1e-8
              and residual["backward"]["max_abs_z"] <= 3.0
              and residual["weighted_tail_ratio"] <= 10.0)
    agreement = None
    if scenario.quadratic:
        # the kernel-based solve is exact for quadratic scenarios: report the
        # continuation's agreement with it, in units of 3 MC standard errors
        from .bridge import direct_quadratic_solution

        direct, _, _ = direct_quadratic_solution(scenario, grid, noise)
        worst = 0.0
        for a, b in ((solution.X, direct.X), (solution.p, direct.p)):
            sa, sb = np.sum(a * a, axis=2), np.sum(b * b, axis=2)
            se = np.maximum(sa.std(axis=0, ddof=1), sb.std(axis=0, ddof=1))
            se = se / np.sqrt(a.shape[0])
            worst = max(worst, float(np.max(
                np.abs(sa.mean(axis=0) - sb.mean(axis=0)) / (3 * se + 1e-9))))
        agreement = {"worst_ratio_vs_3se": worst, "passed": worst <= 1.0}
        passed = passed and agreement["passed"]
    if "csv" in cfg.emit:
        io.summary_to_csv(out / "bridge_solution.csv", "bridge_solution",
                          io.solution_summary_columns(solution, scenario), cfg_hash)
    if "json" in cfg.emit:
        io.write_json(out / "bridge_diagnostics.json", "bridge_diagnostics", {
            "diagnostics": diag.to_dict(),
            "residual": residual,
            "riccati_agreement": agreement,
            "passed": passed,
        }, cfg_hash)
        io.write_json(out / "bridge_summary.json", "solution_summary",
                      io.solution_summary_payload(solution, scenario), cfg_hash)
    if "plots" in cfg.emit:
        report.render_bridge_figure(out / "bridge.png", diag, solution)
    return (0 if passed else 1), {"stages": len(diag.stages),
                                  "forward_rms": residual["forward_rms"]}


def cmd_certify(cfg, out, cfg_hash):
    from . import io, report
    from .certify import certificate_for

    scenario, grid, noise = _setup(cfg)
    solution, _ = _solve(scenario, grid, noise, cfg)
    cert = certificate_for(scenario, solution, noise, seed=cfg.seed)
    if "json" in cfg.emit:
        io.write_json(out / "certificate.json", "certificate", cert, cfg_hash)
    if "csv" in cfg.emit:
        io.summary_to_csv(out / "certified_solution.csv", "certified_solution",
                          io.solution_summary_columns(solution, scenario), cfg_hash)
    if "plots" in cfg.emit:
        report.render_certificate_figure(out / "certificate.png", cert)
    _print_certificate(cert)
    return (0 if cert["passed"] else 1), {"J": cert["cost"]["value"]}


def cmd_validate(cfg, out, cfg_hash):
    import numpy as np

    from . import io, report, spectral
    from .control import check_gradients, validate_assumptions

    scenario, _, _ = _setup(cfg)
    rep = validate_assumptions(scenario)
    grad_ok, grad_worst = check_gradients(scenario)
    rep["checks"]["gradient_finite_difference"] = {
        "value": grad_worst, "expected": "<= 1e-5", "passed": bool(grad_ok)}
    rep["passed"] = rep["passed"] and grad_ok
    if "json" in cfg.emit:
        io.write_json(out / "validation.json", "validation", rep, cfg_hash)
    if "plots" in cfg.emit:
        fine = spectral.build_model(256, scenario.model.lambda_shift,
                                    scenario.model.frac_alpha, scenario.model.frac_beta)
        fine_lifts = spectral.neumann_lift(fine)
        t_grid = np.geomspace(1e-4, 1e-1, 40)
        boundary = spectral.hs_bound_profile(fine, fine_lifts, t_grid)
        distributed = spectral.hs_profile_from_weights(fine, np.ones(fine.n_modes), t_grid)
        report.render_validation_figure(out / "validation.png", t_grid, {
            "boundary channel": (boundary, spectral.fit_loglog_slope(t_grid, boundary)),
            "distributed channel": (distributed, spectral.fit_loglog_slope(t_grid, distributed)),
        })
    for name, chk in rep["checks"].items():
        status = "ok" if chk["passed"] else "VIOLATION"
        print(f"  {name}: {chk['value']:.6g} (expected {chk['expected']}) [{status}]")
    return (0 if rep["passed"] else 1), {"checks": len(rep["checks"])}


def _print_certificate(cert):
    print(f"scenario: {cert['scenario']}")
    print(f"J = {cert['cost']['value']:.6f} +/- {cert['cost']['se']:.2e}")
    vi = cert["variational_inequality"]
    print(f"variational inequality: max violation {vi['max_violation']:.3e} "
          f"(tol {vi['tol']:.3e}) [{'ok' if vi['passed'] else 'FAIL'}]")
    dual = cert["duality"]
    print(f"adjoint duality: worst |gap|/se {dual['worst_ratio']:.2f} "
          f"over {len(dual['table'])} directions [{'ok' if dual['passed'] else 'FAIL'}]")
    pert = cert["perturbations"]
    worst = min(row["delta_J_over_tol"] for row in pert) if pert else float("inf")
    print(f"cost dominance: min (delta_J + 3 SE)/scale {worst:.3f} "
          f"[{'ok' if cert['perturbations_passed'] else 'FAIL'}]")


HANDLERS = {
    "simulate": cmd_simulate,
    "riccati": cmd_riccati,
    "solve-bridge": cmd_solve_bridge,
    "certify": cmd_certify,
    "validate": cmd_validate,
}


def main(argv=None):
    _apply_thread_env()
    parser = argparse.ArgumentParser(
        prog="bridgectl",
        description="spectral solvers for boundary-controlled stochastic heat equations")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--plots", action="store_true",
                        help="also render figures alongside the delimited output")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config,
                           overrides={"seed": args.seed, "out_dir": args.out})
        if args.plots and "plots" not in cfg.emit:
            cfg.emit = tuple(cfg.emit) + ("plots",)
    except ConfigurationError as exc:
        print(f"bridgectl: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(cfg)
    try:
        code, summary = HANDLERS[args.command](cfg, out, cfg_hash)
    except _UnknownScenario as exc:
        print(f"bridgectl: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"bridgectl: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: leave a machine-readable trace
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "payload"):
            payload["detail"] = exc.payload()
        from . import io
        io.write_json(out / "failure.json", "failure", payload, cfg_hash)
        print(f"bridgectl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    status = "ok" if code == 0 else "FAILED"
    print(f"bridgectl {args.command}: {status} {json.dumps(summary, default=str)}")
    return code


if __name__ == "__main__":
    sys.exit(main())
