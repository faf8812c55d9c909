"""Exception types shared across the package."""


class KolmodensError(Exception):
    """Base class for library errors."""


class EvaluationError(KolmodensError):
    """A user-supplied evaluator produced a non-finite or malformed value."""


class QuadratureError(KolmodensError):
    """A quadrature encountered a non-finite integrand sample."""


class CalibrationError(KolmodensError):
    """No admissible constants were found on the candidate ladders."""


class ConfigError(KolmodensError):
    """Invalid experiment configuration; message lists field-level problems."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
