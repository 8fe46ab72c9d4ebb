"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """An argument is outside the range an operation accepts."""


class FitError(RuntimeError):
    """Prior fitting could not produce parameters."""


class DegeneratePosteriorError(ArithmeticError):
    """Every posterior weight vanished inside the truncation window."""

    def __init__(self, f_hat, message=None):
        self.f_hat = f_hat
        super().__init__(message or f"posterior is degenerate at f_hat={f_hat!r}: "
                         "the truncation window holds no prior mass")


class DegenerateSampleError(RuntimeError):
    """Synthetic frequency draws summed to zero on every retry."""


class ParseError(ValueError):
    """Malformed transaction input."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
