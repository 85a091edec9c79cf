"""Exception types shared across the package."""


class TcsdeError(Exception):
    """Base class for package-specific failures."""


class IntegrabilityError(TcsdeError):
    """Adaptive refinement of a jump integral did not converge.

    Carries the partial sum accumulated before giving up.
    """

    def __init__(self, message, partial_sum):
        super().__init__(message)
        self.partial_sum = partial_sum


class HorizonError(TcsdeError):
    """The simulated subordinator did not reach the requested t-horizon."""


class BlowUpError(TcsdeError):
    """An integrated path exceeded the configured blow-up bound."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class EvaluationError(TcsdeError):
    """A coefficient or candidate function returned a non-finite value."""


class ConfigurationError(TcsdeError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class CriteriaError(TcsdeError):
    """A stability-criteria object violates a theorem precondition."""


class DomainError(TcsdeError):
    """Evaluation requested outside the admissible domain."""


class FitError(TcsdeError):
    """Decay fitting received data it cannot log-linearize."""
