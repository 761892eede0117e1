"""Exception types shared across the package."""


class MixsepError(Exception):
    """Base class for errors raised by this package."""


class InputError(MixsepError, ValueError):
    """Caller passed inconsistent or out-of-contract inputs."""


class DataError(MixsepError):
    """A corpus, manifest, or audio file is unusable."""


class NumericError(MixsepError, ArithmeticError):
    """A computation produced non-finite values (e.g. a diverged loss)."""


class EnumerationBudgetError(InputError):
    """An assignment enumeration would exceed the configured budget."""
