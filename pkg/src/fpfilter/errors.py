"""Exception types raised by the filters and the scenario harness."""


class FilterError(RuntimeError):
    """Base class for numerical failures during a filter run."""


class DivergenceError(FilterError):
    """A state or particle became non-finite."""

    def __init__(self, message, step=None, particle=None):
        self.step = step
        self.particle = particle
        where = []
        if step is not None:
            where.append(f"step {step}")
        if particle is not None:
            where.append(f"particle {particle}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class FilterCollapseError(FilterError):
    """All importance weights vanished (or overflowed) in a weighted ensemble."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class GridTooSmallError(FilterError):
    """Posterior mass reached the boundary of the oracle grid."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid scenario configuration."""
