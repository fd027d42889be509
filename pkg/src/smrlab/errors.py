"""Exception hierarchy shared by all modules."""


class SmrlabError(Exception):
    """Base class for package errors."""


class ConfigurationError(SmrlabError, ValueError):
    """Invalid parameters or configuration values."""


class GeometryError(SmrlabError):
    """Degenerate or inconsistent mesh geometry."""


class DomainError(SmrlabError, ValueError):
    """Argument outside the admissible mathematical domain."""


class UnsupportedInputError(SmrlabError, TypeError):
    """Input combination the routine does not handle (e.g. non-nested spaces)."""


class CapacityError(SmrlabError):
    """Problem size above the dense-path limit, or missing eigen data."""


class PoleError(SmrlabError, ArithmeticError):
    """Symbol or shift evaluated at (or too close to) a spectral point."""


class UsageError(SmrlabError):
    """API misuse, e.g. mixing trajectories from different levels."""
