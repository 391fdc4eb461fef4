"""Exception hierarchy shared by all modules."""


class InfoPrivacyError(Exception):
    """Base class for every error raised by this package."""


class DomainError(InfoPrivacyError, ValueError):
    """A dual point lies outside the domain of the conjugate loss."""


class LengthMismatch(InfoPrivacyError, ValueError):
    pass


class UnsupportedKernel(InfoPrivacyError, ValueError):
    """The requested operation needs the count kernel factorization."""


class InfeasibleProjection(InfoPrivacyError, RuntimeError):
    pass


class BarrierViolation(InfoPrivacyError, RuntimeError):
    """The privacy constraint slack is not strictly positive."""


class SupportTooLarge(InfoPrivacyError, ValueError):
    pass


class SupportMismatch(InfoPrivacyError, ValueError):
    """Class-conditional message distributions have different supports."""


class BudgetTooLarge(InfoPrivacyError, ValueError):
    pass


class InfeasibleCorrelation(InfoPrivacyError, ValueError):
    pass


class SchemaError(InfoPrivacyError, ValueError):
    pass


class EmptyAfterFiltering(InfoPrivacyError, ValueError):
    pass
