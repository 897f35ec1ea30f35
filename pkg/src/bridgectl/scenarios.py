"""Built-in scenario registry.

Four problems ship with the package:

``lq_benchmark``
    Quadratic costs, distributed weight b == 1, noise weight g == 1.  The
    optimality system is solvable in closed form by the Riccati machinery,
    which makes this the oracle every continuation run is compared against.
``neumann_heat_default``
    Same quadratic costs but the distributed control acts only through the
    indicator of (pi/4, 3pi/4) -- the "physical" heating problem with a
    tracking target.
``nonlinear_gamma``
    Saturating control-energy gradient u + 0.25 tanh(u) (componentwise in
    the coefficient basis), giving a genuinely nonlinear optimality system.
``boundary_only``
    No distributed control at all; the auxiliary linear stage of the
    continuation solver runs on the boundary operator augmented with the
    identity, and the target system uses the boundary operator alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .control import Scenario
from .errors import ConfigurationError
from .spectral import (
    assemble_multiplication_operator,
    build_model,
    make_control_operator,
    neumann_lift,
)


def _padded(values, n):
    out = np.zeros(n)
    k = min(len(values), n)
    out[:k] = values[:k]
    return out


def _tracking_target(n):
    return _padded([0.5, 0.3, -0.2, 0.1], n)


def _initial_state(n):
    return _padded([0.8, -0.5, 0.3, 0.15], n)


def indicator_profile(lo, hi):
    def profile(xi):
        return ((xi > lo) & (xi < hi)).astype(float)
    return profile


def _quadratic_costs(x_ref, g0):
    def running_offset(t):
        return -(1.0 - 0.3 * t) * x_ref

    def l0(t, X):
        d = X + running_offset(t)[None, :]
        return 0.5 * np.sum(d * d, axis=-1)

    def l0_x(t, X):
        return X + running_offset(t)[None, :]

    def h(X):
        d = X + g0[None, :]
        return 0.5 * np.sum(d * d, axis=-1)

    def h_x(X):
        return X + g0[None, :]

    return running_offset, l0, l0_x, h, h_x


def _control_energy(kind, c_g, sat):
    if kind == "quadratic":
        def g_of_u(U):
            return 0.5 * c_g * np.sum(U * U, axis=-1)

        def g_grad(U):
            return c_g * U
    elif kind == "saturating":
        def g_of_u(U):
            return np.sum(0.5 * c_g * U * U + sat * np.logaddexp(U, -U) - sat * np.log(2.0),
                          axis=-1)

        def g_grad(U):
            return c_g * U + sat * np.tanh(U)
    else:
        raise ConfigurationError(f"unknown control-energy kind {kind!r}")
    return g_of_u, g_grad


def _build(name, description, n_modes, lambda_shift, frac_alpha, frac_beta,
           *, b_profile, gamma_kind, c_g=1.0, sat=0.25, boundary_only=False,
           breakpoints=()):
    model = build_model(n_modes, lambda_shift, frac_alpha, frac_beta)
    lifts = neumann_lift(model)
    if boundary_only:
        op = make_control_operator(model, lifts, b_matrix=None)
        op_lin = make_control_operator(model, lifts, b_matrix=np.eye(n_modes))
    else:
        if b_profile == "one":
            b_matrix = np.eye(n_modes)  # multiplication by 1 is the identity here
        else:
            b_matrix = assemble_multiplication_operator(model, b_profile, breakpoints)
        op = make_control_operator(model, lifts, b_matrix=b_matrix)
        op_lin = op
    g_matrix = np.eye(n_modes)  # noise weight g == 1 in every built-in scenario

    x_ref = _tracking_target(n_modes)
    g0 = -0.5 * x_ref
    running_offset, l0, l0_x, h, h_x = _quadratic_costs(x_ref, g0)
    g_of_u, g_grad = _control_energy(gamma_kind, c_g, sat)
    lip = c_g + (sat if gamma_kind == "saturating" else 0.0)
    growth = max(1.0, c_g) + float(np.linalg.norm(x_ref)) + \
        (sat if gamma_kind == "saturating" else 0.0) + 0.5
    return Scenario(
        name=name,
        description=description,
        model=model,
        lifts=lifts,
        op=op,
        op_lin=op_lin,
        g_matrix=g_matrix,
        boundary_noise=True,
        l0=l0, l0_x=l0_x, h=h, h_x=h_x,
        g_of_u=g_of_u, g_grad=g_grad,
        gamma_kind=gamma_kind, c_g=c_g, sat=sat if gamma_kind == "saturating" else 0.0,
        c1_running=1.0,
        c1_terminal=1.0,
        c_gamma=1.0 / lip,
        lip_gamma=1.0 / c_g,
        growth=growth,
        running_offset=running_offset,
        terminal_offset=g0,
        x0=_initial_state(n_modes),
        quadratic=(gamma_kind == "quadratic"),
        breakpoints=tuple(breakpoints),
    )


@dataclass(frozen=True)
class RegistryEntry:
    name: str
    builder: Callable
    description: str
    tags: tuple


def registry():
    """The built-in scenarios, in a fixed order."""
    entries = [
        RegistryEntry(
            "lq_benchmark",
            lambda **kw: _build("lq_benchmark",
                                "quadratic costs, b == 1, g == 1; exact Riccati oracle",
                                kw.pop("n_modes", 16), kw.pop("lambda_shift", 1.0),
                                kw.pop("frac_alpha", 0.6), kw.pop("frac_beta", 0.75),
                                b_profile="one",
                                gamma_kind=kw.pop("gamma_kind", "quadratic"), **kw),
            "quadratic costs, b == 1, g == 1; exact Riccati oracle",
            ("riccati-oracle", "bridge-equivalence", "certificate"),
        ),
        RegistryEntry(
            "neumann_heat_default",
            lambda **kw: _build("neumann_heat_default",
                                "tracking costs, b = indicator(pi/4, 3pi/4), g == 1",
                                kw.pop("n_modes", 16), kw.pop("lambda_shift", 1.0),
                                kw.pop("frac_alpha", 0.6), kw.pop("frac_beta", 0.75),
                                b_profile=indicator_profile(np.pi / 4, 3 * np.pi / 4),
                                breakpoints=(np.pi / 4, 3 * np.pi / 4),
                                gamma_kind=kw.pop("gamma_kind", "quadratic"), **kw),
            "tracking costs, b = indicator(pi/4, 3pi/4), g == 1",
            ("riccati-oracle", "certificate"),
        ),
        RegistryEntry(
            "nonlinear_gamma",
            lambda **kw: _build("nonlinear_gamma",
                                "saturating control-energy gradient u + 0.25 tanh(u)",
                                kw.pop("n_modes", 16), kw.pop("lambda_shift", 1.0),
                                kw.pop("frac_alpha", 0.6), kw.pop("frac_beta", 0.75),
                                b_profile=indicator_profile(np.pi / 4, 3 * np.pi / 4),
                                breakpoints=(np.pi / 4, 3 * np.pi / 4),
                                gamma_kind=kw.pop("gamma_kind", "saturating"), **kw),
            "saturating control-energy gradient u + 0.25 tanh(u)",
            ("bridge-nonlinear", "certificate"),
        ),
        RegistryEntry(
            "boundary_only",
            lambda **kw: _build("boundary_only",
                                "no distributed control; auxiliary linear stage on [E + I]",
                                kw.pop("n_modes", 16), kw.pop("lambda_shift", 1.0),
                                kw.pop("frac_alpha", 0.6), kw.pop("frac_beta", 0.75),
                                b_profile=None, boundary_only=True,
                                gamma_kind=kw.pop("gamma_kind", "quadratic"), **kw),
            "no distributed control; auxiliary linear stage on [E + I]",
            ("bridge-equivalence", "boundary-variant"),
        ),
    ]
    return {e.name: e for e in entries}


def build_scenario(name, **kwargs):
    """Instantiate a registered scenario; raises with the known names."""
    entries = registry()
    if name not in entries:
        raise ConfigurationError(
            f"unknown scenario {name!r}; available: {', '.join(entries)}")
    return entries[name].builder(**kwargs)
