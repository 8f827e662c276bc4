class DomainError(ValueError):
    """Input violates a geometric or shape precondition."""


class ConfigError(ValueError):
    """Run or model configuration is inconsistent."""


class ProtocolError(RuntimeError):
    """Transmitter and receiver disagree on the symbol layout."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
