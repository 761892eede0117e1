"""Unsupervised sound separation by remixing mixtures of mixtures.

The package trains a small time-domain separation network without isolated
reference sources: pairs of mixtures are summed into a mixture of mixtures,
the model proposes more outputs than there were mixtures, and the loss picks
the best assignment of outputs back to the two inputs. Supervised and
permutation-invariant training are supported through the same machinery,
along with the scale-invariant metrics used to compare them.
"""

__version__ = "0.1.0"

from .errors import (
    DataError,
    EnumerationBudgetError,
    InputError,
    MixsepError,
    NumericError,
)

__all__ = [
    "MixsepError",
    "InputError",
    "DataError",
    "NumericError",
    "EnumerationBudgetError",
    "__version__",
]
