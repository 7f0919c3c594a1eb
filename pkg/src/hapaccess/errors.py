class ConfigError(ValueError):
    """Invalid scenario or module parameter."""


class DimensionError(ValueError):
    """Inconsistent array shapes between pipeline stages."""


class SynthesisError(DimensionError):
    """Cooperation sets do not match the channel set being synthesized."""
