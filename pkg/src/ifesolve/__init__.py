"""Nonconforming immersed finite elements for anisotropic elliptic interface problems.

Typical use::

    from ifesolve import RunConfig, convergence_study
    study = convergence_study(RunConfig(problem="example1", beta_plus=1000.0, M=(16, 32, 64)))
    print(study.to_markdown())
"""

from .assembly import LinearSystem, assemble_std_stiffness, assemble_system, build_dof_map
from .errors import (AssumptionViolation, DegenerateCut, FactorizationFailure, IFEError, InnerSolveStagnation,
                     MappingFailure, MissingExactSolution, NoConvergence, SingularLifting)
from .geometry import LevelSetProblem, analyze, classify_elements
from .harness import (ConvergenceRow, DiscreteField, RunConfig, compute_errors, convergence_study,
                      interpolant_field, solve_problem)
from .mesh import Mesh, MeshHierarchy, build_uniform_mesh_2d, build_uniform_mesh_3d, refine_uniform
from .problems import available_problems, get_problem
from .solvers import PcgReport, PreconditionerB, SmootherR, estimate_cond2, pcg, solve_pcg

__version__ = "0.1.0"

__all__ = [
    "LinearSystem",
    "assemble_std_stiffness",
    "assemble_system",
    "build_dof_map",
    "AssumptionViolation",
    "DegenerateCut",
    "FactorizationFailure",
    "IFEError",
    "InnerSolveStagnation",
    "MappingFailure",
    "MissingExactSolution",
    "NoConvergence",
    "SingularLifting",
    "LevelSetProblem",
    "analyze",
    "classify_elements",
    "ConvergenceRow",
    "DiscreteField",
    "RunConfig",
    "compute_errors",
    "convergence_study",
    "interpolant_field",
    "solve_problem",
    "Mesh",
    "MeshHierarchy",
    "build_uniform_mesh_2d",
    "build_uniform_mesh_3d",
    "refine_uniform",
    "available_problems",
    "get_problem",
    "PcgReport",
    "PreconditionerB",
    "SmootherR",
    "estimate_cond2",
    "pcg",
    "solve_pcg",
]
