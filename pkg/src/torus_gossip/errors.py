"""Exception taxonomy shared across the package.

CLI exit-code mapping: ConfigError -> 1, ResourceLimitError -> 2, check-mode
threshold failure -> 3; any other error exits 1.
"""


class SimulationError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(SimulationError):
    """Invalid or inconsistent configuration (bad field, missing file, exhausted seed budget)."""


class GeometryError(SimulationError):
    """Geometric precondition violated (dimension mismatch, wrap-radius guard)."""


class ConvergenceError(SimulationError):
    """An iterative solver failed to reach tolerance or broke a shape invariant."""


class ResourceLimitError(SimulationError):
    """A hard safety cap (population size, array-size guard) was exceeded."""


class FormatError(SimulationError):
    """A serialized artifact (snapshot, cache table) is malformed or corrupt."""
