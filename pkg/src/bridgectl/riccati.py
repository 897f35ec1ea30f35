"""Backward operator Riccati equation and the affine backward term.

The auxiliary linear-quadratic problem behind the continuation solver is

    dX = A X dt + (E+B) u dt + b0 dt + noise,
    J  = 1/2 E int (|X + h0|^2 + |u|^2) dt + 1/2 E |X_T + g0|^2.

Writing the costate as p = P X + r with terminal weight P_T = I, the kernel
P solves the backward matrix Riccati equation

    -dP/dt = A P + P A - P M P + Q,     M = (E+B)(E+B)^T,  Q = I,

and the affine term solves the backward equation (costate sign convention;
the drift below is what makes  u* = -(E+B)^T (P X + r)  cost-minimizing)

    -dr = A r dt - P M r dt + P b0 dt + h0 dt - q dW - qt dWt,   r_T = g0.

P is propagated per step through the matrix fraction P = V U^{-1} of the
exponential of the 2n x 2n block matrix [[A, -M], [-Q, -A]], which is exact
for the time-invariant data used here; an RK4 integrator is kept alongside
as an independent cross-check.  The affine term has a deterministic sweep
(windowed fixed-point iteration on the mild form) and a least-squares
Monte Carlo mode for path-dependent data.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, PicardDivergence, RiccatiSolveError
from .forward import simulate_forward
from .lsmc import build_features, fit_conditional

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10


@dataclass(frozen=True)
class RiccatiSolution:
    """Node-indexed symmetric PSD kernels P_m, terminal node = identity."""

    grid: "TimeGrid"
    P: np.ndarray  # (n_nodes, n, n)
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_modes(self):
        return self.P.shape[1]


def _hamiltonian_block(a_diag, M, Q):
    """[[A, -M], [-Q, -A]] for diagonal self-adjoint A."""
    n = len(a_diag)
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = np.diag(a_diag)
    H[:n, n:] = -M
    H[n:, :n] = -Q
    H[n:, n:] = -np.diag(a_diag)
    return H


def _check_node(P, node, check_tol):
    defect = np.max(np.abs(P - P.T))
    if defect > check_tol:
        raise RiccatiSolveError(node, f"symmetry defect {defect:.3e} exceeds {check_tol:.1e}")
    lam_min = float(np.linalg.eigvalsh(0.5 * (P + P.T))[0])
    if lam_min < -check_tol:
        raise RiccatiSolveError(node, f"kernel lost positive semidefiniteness (min eig {lam_min:.3e})")
    return defect, lam_min


def solve_riccati_diag(a_diag, M, grid, state_weight=None, terminal_weight=None,
                       check_tol=SYMMETRY_TOL):
    """Matrix-fraction backward sweep for diagonal generator ``a_diag``.

    Per step the stacked pair [U; V] = expm(-H h) [I; P] is formed and the
    next kernel recovered as V U^{-1}; a singular denominator means the step
    is too large for the fraction representation and aborts.
    """
    a_diag = np.asarray(a_diag, dtype=float)
    n = len(a_diag)
    M = np.asarray(M, dtype=float)
    if M.shape != (n, n):
        raise ConfigurationError(f"gain matrix must be {n}x{n}, got {M.shape}")
    if np.max(np.abs(M - M.T)) > 1e-12 * max(1.0, np.max(np.abs(M))):
        raise ConfigurationError("gain matrix must be symmetric")
    Q = np.eye(n) if state_weight is None else np.asarray(state_weight, dtype=float)
    PT = np.eye(n) if terminal_weight is None else np.asarray(terminal_weight, dtype=float)

    propagator = scipy.linalg.expm(-_hamiltonian_block(a_diag, M, Q) * grid.h)
    nodes = grid.n_steps + 1
    P = np.empty((nodes, n, n))
    P[-1] = PT
    worst_defect, worst_eig = 0.0, np.inf
    eye = np.eye(n)
    for m in range(grid.n_steps - 1, -1, -1):
        W = propagator @ np.vstack([eye, P[m + 1]])
        U, V = W[:n], W[n:]
        if not np.all(np.isfinite(U)) or np.linalg.cond(U) > 1e12:
            raise RiccatiSolveError(m, "singular matrix-fraction denominator; step too large")
        nxt = np.linalg.solve(U.T, V.T).T
        defect, lam_min = _check_node(nxt, m, check_tol)
        worst_defect = max(worst_defect, defect)
        worst_eig = min(worst_eig, lam_min)
        P[m] = 0.5 * (nxt + nxt.T)
    return RiccatiSolution(grid=grid, P=P, method="matrix-fraction",
                           diagnostics={"max_symmetry_defect": worst_defect,
                                        "min_eigenvalue": worst_eig})


def solve_riccati(model, M, grid, state_weight=None, terminal_weight=None,
                  check_tol=SYMMETRY_TOL):
    """Riccati kernel for a spectral model (generator = model eigenvalues)."""
    return solve_riccati_diag(model.eigenvalues, M, grid,
                              state_weight=state_weight,
                              terminal_weight=terminal_weight,
                              check_tol=check_tol)


def riccati_rk4(a_diag, M, grid, substeps=10, state_weight=None, terminal_weight=None):
    """Independent RK4 integration of the same backward equation.

    Marches in time-to-go with ``substeps`` stages per grid interval; kept
    deliberately free of the matrix-fraction machinery so the two solvers
    cross-check each other.
    """
    a_diag = np.asarray(a_diag, dtype=float)
    n = len(a_diag)
    M = np.asarray(M, dtype=float)
    Q = np.eye(n) if state_weight is None else np.asarray(state_weight, dtype=float)
    PT = np.eye(n) if terminal_weight is None else np.asarray(terminal_weight, dtype=float)

    def rhs(P):
        return a_diag[:, None] * P + P * a_diag[None, :] - P @ M @ P + Q

    dt = grid.h / substeps
    nodes = grid.n_steps + 1
    out = np.empty((nodes, n, n))
    out[-1] = PT
    P = PT.copy()
    for m in range(grid.n_steps - 1, -1, -1):
        for _ in range(substeps):
            k1 = rhs(P)
            k2 = rhs(P + 0.5 * dt * k1)
            k3 = rhs(P + 0.5 * dt * k2)
            k4 = rhs(P + dt * k3)
            P = P + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        P = 0.5 * (P + P.T)
        out[m] = P
    return RiccatiSolution(grid=grid, P=out, method="rk4", diagnostics={"substeps": substeps})


def weighted_regularity_profile(model, obj, grid, exponent=None):
    """Time-weighted extra-regularity norm profile, excluding the last node.

    For a kernel array (nodes, n, n) the entry at node m is
    (T - t_m)^e * ||diag((lambda + k^2)^e) P_m||_2; for a path ensemble
    (paths, nodes, n) the operator norm is replaced by the root mean square
    of the weighted field norm.  ``exponent`` defaults to 1 - frac_alpha.
    """
    if exponent is None:
        exponent = 1.0 - model.frac_alpha
    factors = model.shifted**exponent
    tt = (grid.horizon - grid.nodes[:-1]) ** exponent
    obj = np.asarray(obj, dtype=float)
    n_hist = grid.n_steps  # nodes 0 .. n_steps-1
    out = np.empty(n_hist)
    if obj.ndim == 3 and obj.shape[1] == obj.shape[2] == model.n_modes:
        for m in range(n_hist):
            out[m] = tt[m] * np.linalg.norm(factors[:, None] * obj[m], 2)
    elif obj.ndim == 3:
        weighted = obj[:, :n_hist, :] * factors
        out = tt * np.sqrt(np.mean(np.sum(weighted**2, axis=2), axis=0))
    else:
        raise ConfigurationError(f"cannot profile object of shape {obj.shape}")
    return out


@dataclass(frozen=True)
class AffineTerm:
    """Backward affine term: deterministic table or per-path LSMC values.

    In deterministic mode ``r_nodes`` holds the (nodes, n) table and the
    martingale integrands vanish identically.  In stochastic mode
    ``r_paths`` holds fitted pathwise values, ``coeffs`` the per-node
    regression coefficients (features -> r), and ``q``/``qt`` mean-level
    estimates of the martingale integrands.
    """

    grid: "TimeGrid"
    mode: str
    r_nodes: np.ndarray | None = None
    r_paths: np.ndarray | None = None
    coeffs: np.ndarray | None = None
    q: np.ndarray | None = None
    qt: np.ndarray | None = None
    ridge_used: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def values(self):
        """(nodes, n) or (paths, nodes, n) view suitable for broadcasting."""
        return self.r_nodes if self.mode == "deterministic" else self.r_paths


def _reaction_tables(P_slice, op, r_table, b0, h0):
    """-P(op op* r) + P b0 + h0 evaluated at every node of a (nodes, n) table."""
    w = op.apply(op.adjoint(r_table))
    out = -np.einsum("mij,mj->mi", P_slice, w)
    if b0 is not None:
        out += np.einsum("mij,mj->mi", P_slice, b0)
    if h0 is not None:
        out += h0
    return out


def solve_affine_term(model, riccati, op, b0=None, h0=None, g0=None,
                      mode="deterministic", *, feature_states=None, degree=1,
                      noise=None, tol_r=1e-12, max_sweeps=200, max_halvings=12):
    """Solve the backward affine equation; see the module docstring for signs.

    Deterministic mode realizes the mild-form fixed point: the interval is
    covered backward by windows, and within each window the reaction term
    (which couples r to itself through -P M r) is re-evaluated at the
    previous sweep until the update stalls below ``tol_r``.  The window
    length starts at the full horizon and is halved until the first sweep
    contracts by at least a factor of two, mirroring the small-interval
    contraction argument that backs the construction.

    Stochastic mode runs one backward least-squares Monte Carlo pass: the
    semigroup-propagated target is regressed on the supplied features, and
    the local reaction is folded in with a semi-implicit trapezoidal step.
    """
    grid = riccati.grid
    n = model.n_modes
    nodes = grid.n_steps + 1
    if mode == "deterministic":
        b0 = None if b0 is None else np.asarray(b0, dtype=float)
        h0 = None if h0 is None else np.asarray(h0, dtype=float)
        for name, tab in (("b0", b0), ("h0", h0)):
            if tab is not None and tab.shape != (nodes, n):
                raise ConfigurationError(f"{name} must be a ({nodes}, {n}) node table")
        gT = np.zeros(n) if g0 is None else np.asarray(g0, dtype=float)
        return _affine_deterministic(model, riccati, op, b0, h0, gT,
                                     tol_r, max_sweeps, max_halvings)
    if mode == "stochastic":
        if feature_states is None:
            raise ConfigurationError("stochastic mode requires a state ensemble for "
                                     "the regression features")
        return _affine_lsmc(model, riccati, op, b0, h0, g0, feature_states, degree, noise)
    raise ConfigurationError(f"unknown affine mode {mode!r}")


def _affine_deterministic(model, riccati, op, b0, h0, gT, tol_r, max_sweeps, max_halvings):
    grid = riccati.grid
    h = grid.h
    decay = np.exp(model.eigenvalues * h)
    nodes = grid.n_steps + 1
    r = np.zeros((nodes, model.n_modes))
    r[-1] = gT

    window = grid.n_steps  # window length in steps; adaptively halved
    sweeps_total = 0
    hi = grid.n_steps
    while hi > 0:
        lo = max(0, hi - window)
        prev = np.repeat(r[hi][None, :], hi - lo + 1, axis=0)
        prev_update = None
        grew = 0
        for sweep in range(max_sweeps):
            f = _reaction_tables(riccati.P[lo:hi + 1], op, prev,
                                 None if b0 is None else b0[lo:hi + 1],
                                 None if h0 is None else h0[lo:hi + 1])
            cur = np.empty_like(prev)
            cur[-1] = r[hi]
            for j in range(hi - lo - 1, -1, -1):
                cur[j] = decay * (cur[j + 1] + 0.5 * h * f[j + 1]) + 0.5 * h * f[j]
            update = float(np.max(np.abs(cur - prev)))
            scale = 1.0 + float(np.max(np.abs(cur)))
            if sweep == 1 and prev_update is not None and update > 0.5 * prev_update:
                # first sweep did not contract enough: shrink the window
                if window == 1 or max_halvings == 0:
                    raise PicardDivergence(window * h, "affine fixed point failed to contract")
                window = max(1, window // 2)
                max_halvings -= 1
                break
            if prev_update is not None and update > prev_update:
                grew += 1
                if grew >= 3:
                    raise PicardDivergence(window * h,
                                           "affine fixed point grew for 3 consecutive sweeps")
            else:
                grew = 0
            prev = cur
            prev_update = update
            sweeps_total += 1
            if update <= tol_r * scale:
                r[lo:hi + 1] = cur
                hi = lo
                break
        else:
            raise PicardDivergence(window * h, "affine fixed point exhausted its sweep budget")
    return AffineTerm(grid=grid, mode="deterministic", r_nodes=r,
                      diagnostics={"sweeps": sweeps_total, "window_steps": window})


def _affine_lsmc(model, riccati, op, b0, h0, g0, feature_states, degree, noise):
    grid = riccati.grid
    n = model.n_modes
    nodes = grid.n_steps + 1
    h = grid.h
    P = riccati.P
    M = op.gram()
    decay = np.exp(model.eigenvalues * h)
    feature_states = np.asarray(feature_states, dtype=float)
    n_paths = feature_states.shape[0]
    n_features = build_features(feature_states[:, 0, :], degree).shape[-1]

    def row(tab, m):
        if tab is None:
            return None
        return tab[m][None, :] if tab.ndim == 2 else tab[:, m, :]

    gT = np.zeros(n) if g0 is None else np.asarray(g0, dtype=float)
    r = np.empty((n_paths, nodes, n))
    r[:, -1, :] = gT
    coeffs = np.zeros((nodes, n_features, n))
    q = np.zeros((nodes, n, noise.n_modes)) if noise is not None else None
    qt = np.zeros((nodes, n)) if noise is not None else None
    ridge_max = 0.0
    eye = np.eye(n)

    for m in range(grid.n_steps - 1, -1, -1):
        r_next = r[:, m + 1, :]
        f_next = -op.apply(op.adjoint(r_next)) @ P[m + 1]
        bn = row(b0, m + 1)
        if bn is not None:
            f_next = f_next + bn @ P[m + 1]
        hn = row(h0, m + 1)
        if hn is not None:
            f_next = f_next + hn
        target = (r_next + 0.5 * h * f_next) * decay
        fitted, beta, ridge = fit_conditional(
            build_features(feature_states[:, m, :], degree), target)
        coeffs[m] = beta
        ridge_max = max(ridge_max, ridge)
        if noise is not None:
            # mean-level martingale integrand estimates (exposed, not certified)
            q[m] = target.T @ noise.dW[:, m, :] / (n_paths * h)
            qt[m] = target.T @ noise.dWt[:, m] / (n_paths * h)
        rhs = fitted
        bm = row(b0, m)
        if bm is not None:
            rhs = rhs + 0.5 * h * (bm @ P[m])
        hm = row(h0, m)
        if hm is not None:
            rhs = rhs + 0.5 * h * hm
        lhs = eye + 0.5 * h * (P[m] @ M)
        r[:, m, :] = np.linalg.solve(lhs, rhs.T).T
    return AffineTerm(grid=grid, mode="stochastic", r_paths=r, coeffs=coeffs,
                      q=q, qt=qt, ridge_used=ridge_max)


@dataclass(frozen=True)
class FBSDESolution:
    """Coupled forward/costate ensembles plus martingale representations."""

    grid: "TimeGrid"
    X: np.ndarray       # (paths, nodes, n)
    p: np.ndarray       # (paths, nodes, n)
    Z: np.ndarray | None    # (nodes, n, n_noise_modes): kernel x distributed op
    Zt: np.ndarray | None   # (nodes, n): kernel x boundary column (+ affine part)
    seed: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.X.shape[0]


def assemble_linear_fbsde(model, riccati, affine, x, noise, op, *, lifts,
                          b0=None, g_matrix=None, boundary=True):
    """Closed-loop forward sweep and costate assembly p = P X + r.

    The forward drift is -(E+B)(E+B)^T (P_m X_m + r_m) + b0_m, evaluated
    through the operator composition (never a premultiplied gain matrix) so
    that re-simulating from the extracted control reproduces the same
    floating-point trajectory.
    """
    grid = riccati.grid
    P = riccati.P
    r_vals = affine.values()
    per_path_r = r_vals.ndim == 3

    def feedback(m, X):
        rm = r_vals[:, m, :] if per_path_r else r_vals[m][None, :]
        return -op.adjoint(X @ P[m] + rm)

    t0 = time.perf_counter()
    ens = simulate_forward(model, lifts, x, feedback, b0, noise, op=op,
                           g_matrix=g_matrix, boundary=boundary)
    X = ens.states
    nodes = grid.n_steps + 1
    p = np.empty_like(X)
    for m in range(nodes):
        rm = r_vals[:, m, :] if per_path_r else r_vals[m][None, :]
        p[:, m, :] = X[:, m, :] @ P[m] + rm

    Z = None
    if g_matrix is not None:
        Z = np.einsum("mij,jk->mik", P, np.asarray(g_matrix, dtype=float))
    Zt = None
    if boundary:
        Zt = P @ lifts.e1
        if affine.qt is not None:
            Zt = Zt + affine.qt
    diag = {
        "terminal_gap_rms": float(np.sqrt(np.mean((p[:, -1, :] - X[:, -1, :]
                                                   - (r_vals[:, -1, :] if per_path_r
                                                      else r_vals[-1]))**2))),
        "wallclock": time.perf_counter() - t0,
    }
    return FBSDESolution(grid=grid, X=X, p=p, Z=Z, Zt=Zt, seed=noise.seed,
                         diagnostics=diag)
