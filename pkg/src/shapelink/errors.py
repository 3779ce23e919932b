"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Inconsistent or invalid run/frame configuration."""


class DegenerateConstellationError(ValueError):
    """Constellation with zero average energy."""


class AlistParseError(ValueError):
    """Malformed alist text; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EncodingSetupError(ValueError):
    """Parity-check matrix cannot be brought to systematic form."""


class EqualizerError(ValueError):
    """LMMSE equalizer undefined for the given inputs."""


class SaturationError(ArithmeticError):
    """Target rate not reachable inside the SNR search bracket."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""
