"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the documented domain of an operation."""


class IntegrationError(RuntimeError):
    """A particle update produced a non-finite position.

    Carries enough context to locate the offending update.
    """

    def __init__(self, message, particle=None, step=None):
        super().__init__(message)
        self.particle = particle
        self.step = step


class UnsupportedModelError(ValueError):
    """The requested operation needs model structure that is not available
    (for instance an exact reference law for a non-linear model)."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
