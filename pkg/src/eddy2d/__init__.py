"""Finite-element studies of 2-D time-harmonic eddy currents driven by a
pair of thin inductors, against their point-source limit."""

__version__ = "0.1.0"

from .mesh import (Mesh, MeshError, MeshDiagnostics, Region, FAR, validate,
                   refine_uniform, locate, interpolate, read_mesh, write_mesh)
from .geometry import Disk, DomainSpec, GeometryError, build_domain
from .fem import (MaterialParams, GaugeMode, GaugeError, SolverError,
                  ProblemKind, EPSILON_PROBLEM, LIMIT_PROBLEM,
                  adjoint_epsilon, adjoint_limit, Field, SolveReport,
                  assemble, apply_gauge, default_gauges, solve,
                  assemble_thin_source, assemble_dirac_load,
                  assemble_weighted_source, sesquilinear_apply,
                  read_field, write_field)
from .analysis import (Ball, NormKind, NormSpec, norm, field_error,
                       region_average, branch_constants, BranchConstants,
                       current_density, total_current, recover_magnetic_field,
                       analytic_limit_solution, truncated_limit_solution,
                       weight_rho)
from .harness import (SweepConfig, MeshConvergenceConfig, TruncationConfig,
                      AdjointConfig, InvariantConfig, Report, RateFit,
                      fit_rate, fit_rate_with_discard, run_epsilon_sweep,
                      run_mesh_convergence, run_truncation_study,
                      run_adjoint_check, run_invariant_suite, psi_recipe)

__all__ = [n for n in dir() if not n.startswith("_")]
