"""Exception types raised by the solver pipeline."""


class IFEError(Exception):
    """Base class for all solver errors."""


class AssumptionViolation(IFEError):
    """The interface crosses an element in a way the method cannot handle.

    Usually the mesh is too coarse relative to the interface curvature.
    """


class DegenerateCut(IFEError):
    """The level set vanishes identically on a mesh face."""


class MappingFailure(IFEError):
    """No interface point was found along the normal from a point of S_T."""


class SingularLifting(IFEError):
    """The local Gram matrix of a lifting problem is numerically singular."""


class FactorizationFailure(IFEError):
    """A matrix expected to be SPD could not be factorized."""


class InnerSolveStagnation(IFEError):
    """The inner solve with the standard stiffness matrix hit its iteration cap."""


class NoConvergence(IFEError):
    """PCG reached its iteration limit.

    The best iterate and its report are attached.
    """

    def __init__(self, message, x=None, report=None):
        super().__init__(message)
        self.x = x
        self.report = report


class MissingExactSolution(IFEError):
    """Error norms were requested for a problem without an exact solution."""
