"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    pass
