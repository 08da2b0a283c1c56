class ConfigError(ValueError):
    """Invalid configuration or violated problem invariant."""


class NumericalError(RuntimeError):
    """Solver blow-up, scheme violation or diverged iteration."""
