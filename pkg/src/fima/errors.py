"""Exception types shared across the package."""


class FimaError(Exception):
    """Base class for package-specific failures."""


class ConfigError(FimaError, ValueError):
    """A solver configuration violates its validity constraints."""


class ModuleError(FimaError):
    """A plug-in module produced unusable (non-finite) output."""


class ModuleSkipped(FimaError):
    """Recoverable module failure; the solver falls back for the iteration."""


class SolverError(FimaError):
    """An internal solver step failed."""


class EstimationError(SolverError):
    """Lipschitz-constant estimation did not converge."""


class SubproblemError(SolverError):
    """An inner subproblem (e.g. conjugate gradient) did not converge."""
