"""Figure rendering for the report path.

Each function takes already-computed data and writes one PNG next to the
delimited output.  Matplotlib runs on the Agg backend so the CLI works
headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_ensemble_figure(path, ensemble, n_show=4):
    """Mean +/- one standard deviation bands of the leading coefficients."""
    t = ensemble.grid.nodes
    fig, ax = plt.subplots(figsize=(7, 4))
    for k in range(min(n_show, ensemble.n_modes)):
        series = ensemble.states[:, :, k]
        mu, sd = series.mean(axis=0), series.std(axis=0)
        line, = ax.plot(t, mu, label=f"mode {k}")
        ax.fill_between(t, mu - sd, mu + sd, alpha=0.2, color=line.get_color())
    ax.set_xlabel("t")
    ax.set_ylabel("coefficient")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("state ensemble: mean and one-sigma band")
    return _finish(fig, path)


def render_riccati_figure(path, solution, profile=None):
    t = solution.grid.nodes
    norms = [np.linalg.norm(P, 2) for P in solution.P]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, norms, label="||P(t)||")
    if profile is not None:
        ax.plot(t[:-1], profile, label="weighted regularity profile")
    ax.set_xlabel("t")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("backward kernel")
    return _finish(fig, path)


def render_bridge_figure(path, diagnostics, solution):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for stage in diagnostics.stages:
        axes[0].semilogy(range(1, len(stage["increments"]) + 1), stage["increments"],
                         marker="o", ms=3, label=f"theta={stage['theta']:.2f}")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("increment")
    axes[0].set_title("fixed-point increments per stage")
    if len(diagnostics.stages) <= 10:
        axes[0].legend(fontsize=7)
    t = solution.grid.nodes
    axes[1].plot(t, np.mean(np.sum(solution.X**2, axis=2), axis=0), label="E||X||^2")
    axes[1].plot(t, np.mean(np.sum(solution.p**2, axis=2), axis=0), label="E||p||^2")
    axes[1].set_xlabel("t")
    axes[1].legend(fontsize=8)
    axes[1].set_title("solution second moments")
    return _finish(fig, path)


def render_certificate_figure(path, certificate):
    table = certificate["perturbations"]
    fig, ax = plt.subplots(figsize=(7, 4))
    eps_values = sorted({row["eps"] for row in table})
    for eps in eps_values:
        deltas = [row["delta_J"] for row in table if row["eps"] == eps]
        ax.plot(range(len(deltas)), deltas, "o", ms=4, label=f"eps={eps:g}")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("direction index")
    ax.set_ylabel("J(u + eps v) - J(u)")
    ax.legend(fontsize=8)
    ax.set_title("cost response to control perturbations")
    return _finish(fig, path)


def render_validation_figure(path, t_grid, profiles):
    """Log-log decay profiles with their fitted slopes."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, (values, slope) in profiles.items():
        ax.loglog(t_grid, values, label=f"{label} (slope {slope:.3f})")
    ax.set_xlabel("t")
    ax.set_ylabel("Hilbert-Schmidt norm")
    ax.legend(fontsize=8)
    ax.set_title("semigroup smoothing profiles")
    return _finish(fig, path)
