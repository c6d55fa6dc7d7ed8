"""Exception hierarchy shared by the simulator modules."""


class SurfChnsError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(SurfChnsError):
    """Invalid run parameters or configuration file content."""


class GeometryError(SurfChnsError):
    """Degenerate or otherwise unusable surface geometry."""

    def __init__(self, message, face=None):
        super().__init__(message)
        self.face = face


class MeshQualityError(GeometryError):
    """Triangle quality dropped below the configured threshold."""


class PhysicsError(SurfChnsError):
    """A constitutive or compatibility requirement is violated."""


class ContractError(SurfChnsError):
    """An operation received input outside its documented contract."""


class SolverError(SurfChnsError):
    """A linear or nonlinear solve failed to reach its tolerance."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class StepError(SurfChnsError):
    """A time step could not be completed."""
