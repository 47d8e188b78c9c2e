class RmqError(Exception):
    """Base class for every error raised by the rmq package."""


class InvalidGridError(RmqError, ValueError):
    pass


class DistributionError(RmqError, ValueError):
    pass


class ModelDomainError(RmqError, ValueError):
    pass


class MissingMomentError(RmqError):
    pass


class ConfigError(RmqError, ValueError):
    pass


class OracleError(RmqError, ValueError):
    pass


class NumericalFailure(RmqError):
    """A run produced values the recursion cannot continue from."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NegativeCodewordError(NumericalFailure):
    def __init__(self, step, codeword):
        self.codeword = codeword
        self.suggestion = "rerun with --boundary absorbing or --boundary reflecting"
        super().__init__(
            f"step {step}: codeword {codeword:.6g} left the positive state domain; "
            f"{self.suggestion}",
            step=step,
        )
