"""kinslab: a slab kinetic solver with certified-decay diagnostics.

Pieces: velocity grids and the discrete Maxwellian, relaxation-form
collision operators, Maxwell wall reflection, a Neumann field solver,
a Strang-split transport stepper, modified-entropy decay accounting,
a parameter-sensitivity hierarchy, and Karhunen-Loeve input models.
"""

__version__ = "0.1.0"

from .boundary import build_mesh, make_bc
from .collision import CrossSectionSpec, assemble_kernel, spectral_gap
from .config import (build_problem, default_config, initial_state,
                     load_config, resolve_config, solver_config)
from .diagnostics import (ConstantsLedger, choose_eta, entropy_H,
                          entropy_series, fit_decay, populate_ledger)
from .errors import (AssumptionError, CompatibilityError, ConfigError,
                     NumericalError)
from .kl import CovarianceKernel, KLBasis, nystrom_eig, sample_paths, truncate
from .poisson import build_potential, poincare_constant, solve_poisson_neumann
from .solver import (KineticState, Problem, RunResult, SolverConfig,
                     dense_generator, decay_rate_oracle, equilibrium, run)
from .uq import fd_oracle, recursion_G, run_hierarchy, verify_recursion_lemma
from .velocity import VelocityGrid, build_grid, maxwellian

__all__ = [
    "__version__",
    "AssumptionError", "CompatibilityError", "ConfigError", "NumericalError",
    "VelocityGrid", "build_grid", "maxwellian",
    "CrossSectionSpec", "assemble_kernel", "spectral_gap",
    "build_mesh", "make_bc",
    "build_potential", "poincare_constant", "solve_poisson_neumann",
    "KineticState", "Problem", "RunResult", "SolverConfig",
    "dense_generator", "decay_rate_oracle", "equilibrium", "run",
    "ConstantsLedger", "choose_eta", "entropy_H", "entropy_series",
    "fit_decay", "populate_ledger",
    "fd_oracle", "recursion_G", "run_hierarchy", "verify_recursion_lemma",
    "CovarianceKernel", "KLBasis", "nystrom_eig", "sample_paths", "truncate",
    "build_problem", "default_config", "initial_state", "load_config",
    "resolve_config", "solver_config",
]
