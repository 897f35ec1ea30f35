"""Spectral solver suite for boundary-controlled stochastic heat equations."""

from .bridge import (
    BridgeConfig,
    bridge_solve,
    direct_quadratic_solution,
    fbsde_residual,
    homotopy_coefficients,
)
from .config import RunConfig, parse_config
from .control import (
    Scenario,
    cost_J,
    duality_identity_check,
    gamma_map,
    hamiltonian,
    validate_assumptions,
    variational_inequality_check,
)
from .errors import (
    BridgeFailure,
    ConfigurationError,
    PicardDivergence,
    RiccatiSolveError,
    SimulationBlowup,
)
from .forward import NoiseEnsemble, PathEnsemble, TimeGrid, sample_noise, simulate_forward
from .riccati import (
    AffineTerm,
    FBSDESolution,
    RiccatiSolution,
    assemble_linear_fbsde,
    riccati_rk4,
    solve_affine_term,
    solve_riccati,
    weighted_regularity_profile,
)
from .scenarios import build_scenario, registry
from .spectral import (
    LiftCoefficients,
    SpectralModel,
    apply_fractional_power,
    apply_semigroup,
    build_model,
    hs_bound_profile,
    neumann_lift,
)

__version__ = "0.1.0"
