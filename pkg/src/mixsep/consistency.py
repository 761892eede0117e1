"""Mixture-consistency projection.

Mask-based separation does not guarantee that the separated sources add back
up to the input mixture. This projection restores that property in closed
form: the residual between the mixture and the current sum is split evenly
across the M estimates, which is the minimum-distance correction under an
equal-sum constraint. The same arithmetic runs on numpy arrays here and on
autodiff tensors inside the model, where its gradient falls out of the
primitive ops.
"""

import numpy as np

from .errors import InputError
from .signal import SourceSet


def project_array(raw, mixture):
    """Project (M, T) raw estimates onto the sum-to-mixture subspace."""
    raw = np.asarray(raw, dtype=np.float64)
    mixture = np.asarray(mixture, dtype=np.float64)
    if raw.ndim != 2:
        raise InputError(f"estimates must be (M, T), got {raw.shape}")
    if mixture.shape != (raw.shape[1],):
        raise InputError(
            f"mixture length {mixture.shape} does not match estimates "
            f"{raw.shape}"
        )
    residual = mixture - raw.sum(axis=0)
    return raw + residual / raw.shape[0]


def mixture_consistency_project(raw_estimates, mixture):
    """Correct a SourceSet so its members sum exactly to `mixture`."""
    if raw_estimates.length != len(mixture):
        raise InputError(
            f"estimate length {raw_estimates.length} != mixture length "
            f"{len(mixture)}"
        )
    if raw_estimates.sample_rate != mixture.sample_rate:
        raise InputError("sample rates differ")
    projected = project_array(raw_estimates.as_array(), mixture.samples)
    return SourceSet.from_array(projected, mixture.sample_rate)
