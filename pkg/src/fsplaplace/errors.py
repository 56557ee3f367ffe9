"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree with the model or kernel."""


class ConfigError(ValueError):
    """Invalid configuration, hyperparameter or sampler setup."""


class NumericalError(ArithmeticError):
    """A factorization or iteration could not be completed in floating point."""


class TrainingError(NumericalError):
    """Non-finite objective encountered during optimization."""

    def __init__(self, step, component, value):
        self.step = step
        self.component = component
        self.value = value
        super().__init__(f"non-finite {component} at step {step}: {value!r}")
