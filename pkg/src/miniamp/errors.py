"""Exception types shared by the inference engines and the harness."""


class DomainError(ValueError):
    """An input lies outside the domain of a scalar function."""


class DivergenceError(RuntimeError):
    """An iterative engine produced non-finite state.

    ``last_state`` holds the last finite iterate (estimate vector or a
    state object) and ``report`` whatever partial run report was collected.
    """

    def __init__(self, message, last_state=None, report=None):
        super().__init__(message)
        self.last_state = last_state
        self.report = report


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration."""
