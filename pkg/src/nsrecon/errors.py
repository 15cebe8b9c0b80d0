"""Exception types shared across the package.

The CLI maps these onto process exit codes: validation problems exit with 2,
numerical failures with 3.
"""


class NSReconError(Exception):
    """Base class for all package errors; carries the raising module's tag."""

    def __init__(self, message, module="nsrecon"):
        super().__init__(message)
        self.module = module

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ConfigurationError(NSReconError, ValueError):
    """Invalid parameters or inconsistent inputs."""


class DomainError(NSReconError, ValueError):
    """Argument outside the domain of an operation."""


class ShapeError(NSReconError, ValueError):
    """Array shapes do not match the grid or the basis."""


class SolverError(NSReconError, RuntimeError):
    """A linear solve or time integration failed."""

    def __init__(self, message, module="nsrecon", residual=None):
        super().__init__(message, module)
        self.residual = residual
