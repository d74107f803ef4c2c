"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field when known."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ParameterWindowError(ValueError):
    """A parameter lies outside its (open) admissible window."""


class GeometryError(ValueError):
    """A cylinder leaves the domain or is below the grid resolution floor."""


class NumericError(RuntimeError):
    """An iteration hit its cap; carries the last residual and the trace."""

    def __init__(self, message, residual=float("nan"), trace=None):
        self.residual = residual
        self.trace = list(trace or [])
        super().__init__(f"{message} (residual={residual:.3e})")


class ContractError(RuntimeError):
    """A mathematical contract was broken, e.g. a line search found no decrease."""


class TrajectoryFormatError(ValueError):
    """A trajectory file is truncated, corrupt or of an unknown version."""
