"""Spectral representation of the Neumann Laplacian on (0, pi).

Everything downstream works on coefficient vectors in the truncated cosine
eigenbasis

    e_0(xi) = 1/sqrt(pi),    e_k(xi) = sqrt(2/pi) * cos(k*xi),  k >= 1,

where the Laplacian is diagonal with eigenvalues a_k = -k^2.  This module
builds the truncated model, the semigroup and fractional powers, the Neumann
boundary lifts together with their shifted-Laplacian images (the boundary
injection operator and the boundary-noise column), multiplication operators
assembled by panel Gauss-Legendre quadrature, and the Hilbert-Schmidt decay
profiles used to verify the smoothing-rate hypotheses.

State vectors are plain float64 arrays of length ``n_modes`` (Parseval:
``norm(v)**2`` is the squared L2 norm of the represented function).  Control
points are arrays of length ``n_modes + 2`` laid out as
``[distributed coefficients..., left boundary value, right boundary value]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class SpectralModel:
    """Truncated eigenbasis data: mode count, shift, smoothing exponents."""

    n_modes: int
    lambda_shift: float
    frac_alpha: float
    frac_beta: float
    eigenvalues: np.ndarray  # a_k = -k^2, shape (n_modes,)

    @property
    def shifted(self) -> np.ndarray:
        """lambda - a_k = lambda + k^2 (all >= lambda > 0)."""
        return self.lambda_shift - self.eigenvalues


@dataclass(frozen=True)
class LiftCoefficients:
    """Spectral data of the two Neumann lifts.

    ``b1``/``b2`` are the coefficient vectors of the harmonic-type lifts with
    unit flux at the left/right endpoint; ``e1``/``e2`` are the coefficients
    of their images under (lambda - Laplacian), i.e. the columns through
    which boundary data enters the state space.  The defining identity is

        (lambda + k^2) * b1_k = -e_k(0),
        (lambda + k^2) * b2_k = +e_k(pi).
    """

    b1: np.ndarray
    b2: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @property
    def boundary_columns(self) -> np.ndarray:
        """(n_modes, 2) matrix mapping (left, right) boundary data into H."""
        return np.column_stack([self.e1, self.e2])


def build_model(n_modes, lambda_shift=1.0, frac_alpha=0.6, frac_beta=0.75):
    """Validate parameters and build a :class:`SpectralModel`.

    The admissible ranges are open intervals: ``frac_alpha`` in (1/2, 3/4)
    (regularity of the boundary lifts), ``frac_beta`` in (1/2, 1)
    (boundary-noise smoothing rate), ``lambda_shift`` > 0.
    """
    problems = []
    if not (isinstance(n_modes, (int, np.integer)) and n_modes >= 2):
        problems.append(f"n_modes must be an integer >= 2, got {n_modes!r}")
    if not lambda_shift > 0:
        problems.append(f"lambda_shift must be positive, got {lambda_shift!r}")
    if not 0.5 < frac_alpha < 0.75:
        problems.append(f"frac_alpha must lie in the open interval (0.5, 0.75), got {frac_alpha!r}")
    if not 0.5 < frac_beta < 1.0:
        problems.append(f"frac_beta must lie in the open interval (0.5, 1), got {frac_beta!r}")
    if problems:
        raise ConfigurationError("; ".join(problems))
    k = np.arange(int(n_modes))
    return SpectralModel(
        n_modes=int(n_modes),
        lambda_shift=float(lambda_shift),
        frac_alpha=float(frac_alpha),
        frac_beta=float(frac_beta),
        eigenvalues=-(k.astype(float) ** 2),
    )


def basis_matrix(model, xi):
    """Evaluate the basis at points ``xi``: returns (len(xi), n_modes)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    k = np.arange(model.n_modes)
    out = np.sqrt(2.0 / np.pi) * np.cos(np.outer(xi, k))
    out[:, 0] = 1.0 / np.sqrt(np.pi)
    return out


def basis_at_zero(model):
    """e_k(0): 1/sqrt(pi) for k = 0, sqrt(2/pi) for k >= 1."""
    v = np.full(model.n_modes, np.sqrt(2.0 / np.pi))
    v[0] = 1.0 / np.sqrt(np.pi)
    return v


def basis_at_pi(model):
    """e_k(pi): alternating signs, sqrt(2/pi)*(-1)^k for k >= 1."""
    v = basis_at_zero(model)
    v[1::2] *= -1.0
    return v


def field_from_values(model, xi, weights, values):
    """Project point values onto the basis with quadrature weights."""
    return basis_matrix(model, xi).T @ (weights * values)


def evaluate_field(model, coeffs, xi):
    """Pointwise reconstruction of a coefficient vector."""
    return basis_matrix(model, xi) @ coeffs


def apply_semigroup(model, t, v):
    """Heat semigroup on coefficients: v_k -> exp(a_k t) v_k, t >= 0."""
    if t < 0:
        raise ConfigurationError(f"semigroup time must be nonnegative, got {t}")
    return np.exp(model.eigenvalues * t) * np.asarray(v, dtype=float)


def apply_fractional_power(model, exponent, v):
    """Shifted fractional power: v_k -> (lambda + k^2)^exponent v_k.

    Exponents are restricted to [-1, 1]; positive exponents amplify high
    modes (extra spatial regularity is being demanded), negative ones smooth.
    """
    if not -1.0 <= exponent <= 1.0:
        raise ConfigurationError(f"fractional exponent must lie in [-1, 1], got {exponent}")
    return model.shifted**exponent * np.asarray(v, dtype=float)


def neumann_lift(model):
    """Closed-form lift coefficients from the integration-by-parts identity.

    Integrating v'' = lambda*v against e_k and using that the basis has zero
    endpoint slope gives (lambda + k^2) <v, e_k> = flux_pi*e_k(pi) -
    flux_0*e_k(0); unit flux at one endpoint pins each lift exactly.  This
    avoids quadrature of the cosh/sinh closed form entirely.
    """
    e1 = -basis_at_zero(model)
    e2 = basis_at_pi(model)
    shifted = model.shifted
    return LiftCoefficients(b1=e1 / shifted, b2=e2 / shifted, e1=e1, e2=e2)


def lift_closed_form(lambda_shift, xi, side):
    """Pointwise lift profiles solving b'' = lambda*b with unit Neumann flux.

    side='left':  b(xi) = -cosh(sqrt(lam)(pi - xi)) / (sqrt(lam) sinh(sqrt(lam) pi))
    side='right': b(xi) = +cosh(sqrt(lam) xi)       / (sqrt(lam) sinh(sqrt(lam) pi))

    Used only as an independent cross-check of :func:`neumann_lift`.
    """
    xi = np.asarray(xi, dtype=float)
    s = np.sqrt(lambda_shift)
    den = s * np.sinh(s * np.pi)
    if side == "left":
        return -np.cosh(s * (np.pi - xi)) / den
    if side == "right":
        return np.cosh(s * xi) / den
    raise ConfigurationError(f"side must be 'left' or 'right', got {side!r}")


def apply_E(model, lifts, u1, u2):
    """Boundary injection: (u1, u2) -> u1*e1 + u2*e2 in coefficient space."""
    return u1 * lifts.e1 + u2 * lifts.e2


def apply_E_adjoint(model, lifts, v):
    """Dual pairing of a field with the two boundary columns."""
    v = np.asarray(v, dtype=float)
    return float(lifts.e1 @ v), float(lifts.e2 @ v)


def apply_B(model, b_matrix, u0):
    """Distributed multiplication operator applied to a coefficient vector."""
    b_matrix = np.asarray(b_matrix)
    u0 = np.asarray(u0, dtype=float)
    if b_matrix.shape != (model.n_modes, model.n_modes) or u0.shape[-1] != model.n_modes:
        raise ConfigurationError(
            f"dimension mismatch: operator {b_matrix.shape}, vector {u0.shape}"
        )
    return u0 @ b_matrix.T


# apply_G is the same matrix-vector action; the distinction is which profile
# (control weight b vs noise weight g) was used at assembly time.
apply_G = apply_B


def gauss_legendre_panels(breakpoints, n_points):
    """Composite Gauss-Legendre nodes/weights on (0, pi).

    ``breakpoints`` are interior panel edges (e.g. discontinuities of the
    profile); ``n_points`` is the total budget, distributed over panels
    proportionally to length with a floor of 8 points per panel.
    """
    edges = [0.0] + sorted(float(b) for b in breakpoints) + [np.pi]
    for lo, hi in zip(edges[:-1], edges[1:]):
        if not 0.0 <= lo < hi <= np.pi:
            raise ConfigurationError(f"breakpoints must be strictly inside (0, pi): {breakpoints}")
    spans = np.diff(edges)
    counts = np.maximum(8, np.ceil(n_points * spans / np.pi).astype(int))
    nodes, weights = [], []
    for (lo, hi), m in zip(zip(edges[:-1], edges[1:]), counts):
        x, w = np.polynomial.legendre.leggauss(int(m))
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def assemble_multiplication_operator(model, profile, breakpoints=(), n_points=None):
    """Assemble the n x n matrix of multiplication by ``profile``.

    The quadrature budget defaults to 4*n_modes points (enough to resolve
    products of the two highest retained modes); pass the profile's jump
    locations as ``breakpoints`` so each panel sees a smooth integrand.
    """
    if n_points is None:
        n_points = max(4 * model.n_modes, 64)
    xi, w = gauss_legendre_panels(breakpoints, n_points)
    E = basis_matrix(model, xi)
    vals = np.asarray(profile(xi), dtype=float) * w
    out = (E * vals[:, None]).T @ E
    return 0.5 * (out + out.T)  # multiplication operators are exactly self-adjoint


@dataclass(frozen=True)
class ControlOperator:
    """Combined control action [distributed multiplication | boundary columns].

    Applied to u = (u0 coefficients, u1, u2): the distributed block (may be
    absent) multiplies u0, the two columns inject the boundary values.  The
    adjoint splits a field back into (distributed, left, right) dual slots.
    """

    b_matrix: np.ndarray | None
    boundary_cols: np.ndarray

    @property
    def n_modes(self):
        return self.boundary_cols.shape[0]

    @property
    def dim_u(self):
        return self.n_modes + 2

    def apply(self, u):
        """(..., n_modes + 2) control points -> (..., n_modes) fields."""
        u = np.asarray(u, dtype=float)
        out = u[..., self.n_modes:] @ self.boundary_cols.T
        if self.b_matrix is not None:
            out = out + u[..., : self.n_modes] @ self.b_matrix.T
        return out

    def adjoint(self, v):
        """(..., n_modes) fields -> (..., n_modes + 2) dual control points."""
        v = np.asarray(v, dtype=float)
        boundary = v @ self.boundary_cols
        if self.b_matrix is None:
            distributed = np.zeros(v.shape[:-1] + (self.n_modes,))
        else:
            distributed = v @ self.b_matrix
        return np.concatenate([distributed, boundary], axis=-1)

    def gram(self):
        """The n x n symmetric PSD drift kernel (operator times its adjoint)."""
        M = self.boundary_cols @ self.boundary_cols.T
        if self.b_matrix is not None:
            M = M + self.b_matrix @ self.b_matrix.T
        return M


def make_control_operator(model, lifts, b_matrix=None):
    if b_matrix is not None:
        b_matrix = np.asarray(b_matrix, dtype=float)
        if b_matrix.shape != (model.n_modes, model.n_modes):
            raise ConfigurationError(f"b_matrix must be {model.n_modes}x{model.n_modes}")
    return ControlOperator(b_matrix=b_matrix, boundary_cols=lifts.boundary_columns)


def hs_profile_from_weights(model, weights, t_grid):
    """sqrt(sum_k w_k exp(2 a_k t)) on a grid of strictly positive times."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ConfigurationError("Hilbert-Schmidt profile requires t > 0 (bound diverges at 0)")
    decay = np.exp(2.0 * np.outer(model.eigenvalues, t_grid))
    return np.sqrt(np.asarray(weights, dtype=float) @ decay)


def hs_bound_profile(model, lifts, t_grid):
    """Hilbert-Schmidt norm of (semigroup o boundary-noise column) vs time.

    For the scalar boundary channel this is sqrt(sum_k e1_k^2 exp(2 a_k t));
    its log-log slope over small times fits the smoothing-rate exponent
    (expected -1/4 here, i.e. the rate hypothesis holds with margin).
    """
    return hs_profile_from_weights(model, lifts.e1**2, t_grid)


def hs_bound_profile_distributed(model, g_matrix, t_grid):
    """Same profile for the distributed-noise operator (weights = row norms)."""
    g_matrix = np.asarray(g_matrix, dtype=float)
    return hs_profile_from_weights(model, np.sum(g_matrix**2, axis=1), t_grid)


def fit_loglog_slope(t_grid, values):
    """Least-squares slope of log(values) against log(t)."""
    return float(np.polyfit(np.log(np.asarray(t_grid, float)), np.log(np.asarray(values, float)), 1)[0])
