"""Seeded Monte Carlo simulation of the forward state equation.

The state equation is advanced in mild form with an exponential Euler step
on spectral coefficients.  Because the generator is diagonal the step is
exact for piecewise-constant drift data: over a step of length h each mode
uses the decay factor exp(a_k h), the drift weight

    phi_k(h) = (exp(a_k h) - 1) / a_k      (= h at a_k = 0),

and stochastic increments with the exact per-step Ito variance

    v_k(h) = (exp(2 a_k h) - 1) / (2 a_k)  (= h at a_k = 0).

The distributed channel freezes the multiplication operator G over the step
and samples with per-step covariance G diag(v(h)) G^T through its symmetric
square root (weak order one; exact whenever G is diagonal).  The boundary
channel scales the single scalar increment per step by e1_k sqrt(v_k(h)),
which makes every mode variance exact.

Controls and affine drifts are node-indexed tables with n_steps + 1 rows
(row m is held on [t_m, t_{m+1}); the final row exists for cost quadrature),
given either as one shared table, one table per path, or a feedback callable
``f(step_index, states) -> (n_paths, dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SimulationBlowup


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with n_steps intervals."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def h(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class NoiseEnsemble:
    """Brownian increments scaled by sqrt(h), one substream per path.

    dW has shape (n_paths, n_steps, n_modes) (truncated cylindrical noise),
    dWt has shape (n_paths, n_steps) (the scalar boundary channel).  Path i
    draws from the i-th jumped Philox substream of ``seed``, so ensembles are
    bit-reproducible and independent of any path-level parallel schedule.
    """

    grid: TimeGrid
    n_modes: int
    n_paths: int
    seed: int
    dW: np.ndarray
    dWt: np.ndarray

    def fingerprint(self):
        """Cheap identity used by the continuation solver's seed audit."""
        return (self.seed, self.n_paths, self.grid.n_steps, self.n_modes,
                float(self.dW[0, 0, 0]), float(self.dWt[-1, -1]))


def sample_noise(grid, n_modes, n_paths, seed):
    """Draw a :class:`NoiseEnsemble` deterministically from ``seed``."""
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be >= 1, got {n_paths}")
    if n_modes < 1:
        raise ConfigurationError(f"n_modes must be >= 1, got {n_modes}")
    m, n = grid.n_steps, int(n_modes)
    root = np.random.Philox(int(seed))
    dW = np.empty((n_paths, m, n))
    dWt = np.empty((n_paths, m))
    sqrt_h = np.sqrt(grid.h)
    for i in range(n_paths):
        gen = np.random.Generator(root.jumped(i))
        dW[i] = gen.standard_normal((m, n)) * sqrt_h
        dWt[i] = gen.standard_normal(m) * sqrt_h
    return NoiseEnsemble(grid=grid, n_modes=n, n_paths=int(n_paths), seed=int(seed),
                         dW=dW, dWt=dWt)


@dataclass(frozen=True)
class PathEnsemble:
    """States on the grid: shape (n_paths, n_steps + 1, n_modes)."""

    grid: TimeGrid
    states: np.ndarray
    seed: int

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def n_modes(self):
        return self.states.shape[2]


@dataclass(frozen=True)
class StepKernel:
    """Precomputed per-step factors for one (model, grid, noise-ops) triple."""

    decay: np.ndarray                 # exp(a_k h)
    phi: np.ndarray                   # drift weight
    var: np.ndarray                   # exact per-mode Ito variance v_k(h)
    dist_transform: np.ndarray | None  # (n, n) factor S with S S^T = G v G^T
    dist_diag: np.ndarray | None       # fast path when G is diagonal
    boundary_scale: np.ndarray | None  # e1_k sqrt(v_k)


def _phi_weights(a, h):
    out = np.full_like(a, h, dtype=float)
    nz = a != 0
    out[nz] = np.expm1(a[nz] * h) / a[nz]
    return out


def _ito_variances(a, h):
    out = np.full_like(a, h, dtype=float)
    nz = a != 0
    out[nz] = np.expm1(2.0 * a[nz] * h) / (2.0 * a[nz])
    return out


def step_kernel(model, grid, g_matrix=None, lifts=None, boundary=True):
    a = model.eigenvalues
    h = grid.h
    var = _ito_variances(a, h)
    dist_transform = dist_diag = None
    if g_matrix is not None:
        g_matrix = np.asarray(g_matrix, dtype=float)
        off = g_matrix - np.diag(np.diag(g_matrix))
        if np.max(np.abs(off)) < 1e-14 * max(1.0, np.max(np.abs(g_matrix))):
            dist_diag = np.diag(g_matrix) * np.sqrt(var)
        else:
            cov = (g_matrix * var[None, :]) @ g_matrix.T
            evals, evecs = np.linalg.eigh(cov)
            dist_transform = evecs * np.sqrt(np.clip(evals, 0.0, None))[None, :]
    boundary_scale = None
    if boundary:
        if lifts is None:
            raise ConfigurationError("boundary noise requested but no lift coefficients supplied")
        boundary_scale = lifts.e1 * np.sqrt(var)
    return StepKernel(decay=np.exp(a * h), phi=_phi_weights(a, h), var=var,
                      dist_transform=dist_transform, dist_diag=dist_diag,
                      boundary_scale=boundary_scale)


def _table_row(table, m, n_paths):
    """Row m of a shared (nodes, dim) or per-path (paths, nodes, dim) table."""
    if table.ndim == 2:
        return table[m][None, :]
    return table[:, m, :]


def _check_table(table, grid, n_paths, dim, what):
    table = np.asarray(table, dtype=float)
    nodes = grid.n_steps + 1
    if table.ndim == 2 and table.shape == (nodes, dim):
        return table
    if table.ndim == 3 and table.shape == (n_paths, nodes, dim):
        return table
    raise ConfigurationError(
        f"{what} must have shape ({nodes}, {dim}) or ({n_paths}, {nodes}, {dim}), got {table.shape}"
    )


def simulate_forward(model, lifts, x, control, b0, noise, *, op=None,
                     g_matrix=None, boundary=True, kernel=None):
    """Run the exponential-Euler scheme over the noise ensemble.

    ``control`` is None, a node table (shared or per path), or a feedback
    callable; it acts through ``op`` (a ControlOperator).  ``b0`` is an
    optional affine drift table in coefficient space.  Raises
    :class:`SimulationBlowup` with the first offending (step, path, mode) if
    any state leaves the finite range.
    """
    grid = noise.grid
    n, nsteps = model.n_modes, grid.n_steps
    n_paths = noise.n_paths
    if noise.n_modes != n:
        raise ConfigurationError("noise ensemble was drawn for a different mode count")
    if kernel is None:
        kernel = step_kernel(model, grid, g_matrix=g_matrix, lifts=lifts, boundary=boundary)

    control_table = feedback = None
    if callable(control):
        feedback = control
    elif control is not None:
        if op is None:
            raise ConfigurationError("a control table requires a control operator")
        control_table = _check_table(control, grid, n_paths, op.dim_u, "control table")
    if b0 is not None:
        b0 = _check_table(b0, grid, n_paths, n, "affine drift table")

    sqrt_h = np.sqrt(grid.h)
    states = np.empty((n_paths, nsteps + 1, n))
    X = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, n)).copy()
    states[:, 0] = X
    for m in range(nsteps):
        drift = None
        if feedback is not None:
            drift = op.apply(feedback(m, X))
        elif control_table is not None:
            drift = op.apply(_table_row(control_table, m, n_paths))
        if b0 is not None:
            row = _table_row(b0, m, n_paths)
            drift = row if drift is None else drift + row
        Xn = X * kernel.decay
        if drift is not None:
            Xn = Xn + drift * kernel.phi
        if kernel.dist_diag is not None:
            Xn = Xn + (noise.dW[:, m, :] / sqrt_h) * kernel.dist_diag
        elif kernel.dist_transform is not None:
            Xn = Xn + (noise.dW[:, m, :] / sqrt_h) @ kernel.dist_transform.T
        if kernel.boundary_scale is not None:
            Xn = Xn + np.outer(noise.dWt[:, m] / sqrt_h, kernel.boundary_scale)
        if not np.all(np.isfinite(Xn)):
            bad = np.argwhere(~np.isfinite(Xn))[0]
            raise SimulationBlowup(step=m + 1, path=bad[0], mode=bad[1])
        X = Xn
        states[:, m + 1] = X
    return PathEnsemble(grid=grid, states=states, seed=noise.seed)


def perturbation_state(model, lifts, dv, grid, *, op=None):
    """Noise-free response to a control direction, zero initial condition.

    Returns a (n_steps + 1, n_modes) table for a shared direction, or
    (n_paths, n_steps + 1, n_modes) when ``dv`` is per path.  The map is
    linear in ``dv`` and uses the same drift quadrature as the simulator, so
    simulate(u + dv) - simulate(u) reproduces it to rounding.
    """
    if op is None:
        raise ConfigurationError("perturbation_state requires a control operator")
    dv = np.asarray(dv, dtype=float)
    per_path = dv.ndim == 3
    n_paths = dv.shape[0] if per_path else 1
    dv = _check_table(dv, grid, n_paths, op.dim_u, "direction table")
    decay = np.exp(model.eigenvalues * grid.h)
    phi = _phi_weights(model.eigenvalues, grid.h)
    lead = (n_paths,) if per_path else ()
    out = np.zeros(lead + (grid.n_steps + 1, model.n_modes))
    X = np.zeros(lead + (model.n_modes,))
    for m in range(grid.n_steps):
        row = dv[:, m, :] if per_path else dv[m]
        X = X * decay + op.apply(row) * phi
        out[..., m + 1, :] = X
    return out


def propagate_covariance(model, grid, kernel, n_steps=None):
    """Exact second moments of the scheme itself (no sampling).

    Iterates Cov <- D Cov D + C_step where D is the per-mode decay and
    C_step the per-step injected covariance; used to measure the weak
    discretization error of the frozen-G sampling rule without Monte Carlo
    noise.  Returns the covariance at the final node.
    """
    n = model.n_modes
    nsteps = grid.n_steps if n_steps is None else n_steps
    if kernel.dist_diag is not None:
        C_step = np.diag(kernel.dist_diag**2)
    elif kernel.dist_transform is not None:
        C_step = kernel.dist_transform @ kernel.dist_transform.T
    else:
        C_step = np.zeros((n, n))
    if kernel.boundary_scale is not None:
        C_step = C_step + np.outer(kernel.boundary_scale, kernel.boundary_scale)
    D = kernel.decay
    cov = np.zeros((n, n))
    for _ in range(nsteps):
        cov = cov * np.outer(D, D) + C_step
    return cov
