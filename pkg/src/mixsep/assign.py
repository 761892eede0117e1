"""Assignment search: permutation and mixing-matrix losses.

Supervised training matches each model output to one reference source with a
permutation (best match found by a linear-assignment solve on the pairwise
loss matrix). Unsupervised training matches sums of outputs to reference
mixtures with a binary mixing matrix whose columns are one-hot; that search
couples outputs through the sums, so it enumerates every valid matrix
exhaustively in a canonical order.

Both searches return the winning matrix alongside the loss so a training
step can rebuild the chosen combination on autodiff tensors and take
gradients with the discrete choice held fixed.
"""

import dataclasses
import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EnumerationBudgetError, InputError
from .signal import (
    SourceSet,
    Waveform,
    mix,
    neg_thresholded_snr,
    zero_energy,
    zero_source_loss,
)

ENUMERATION_BUDGET = 10**6

# Keeps candidate remix batches around a few MB during enumeration.
_CHUNK = 2048


@dataclasses.dataclass(frozen=True)
class MixingMatrix:
    """Binary (K, M) matrix assigning each estimated source to one mixture."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InputError(f"mixing matrix must be 2-D, got {arr.shape}")
        if not np.isin(arr, (0, 1)).all() or not (arr.sum(axis=0) == 1).all():
            raise InputError("mixing matrix columns must be one-hot")
        object.__setattr__(self, "entries", arr)

    @property
    def num_mixtures(self):
        return self.entries.shape[0]

    @property
    def num_estimates(self):
        return self.entries.shape[1]

    @property
    def assignments(self):
        """Per-estimate mixture index, the base-K digit view of the matrix."""
        return tuple(int(i) for i in self.entries.argmax(axis=0))

    @classmethod
    def from_assignments(cls, rows, num_mixtures):
        arr = np.zeros((num_mixtures, len(rows)), dtype=np.int64)
        for col, row in enumerate(rows):
            arr[row, col] = 1
        return cls(arr)

    def remix(self, estimates):
        """Apply the matrix to an (M, T) array, giving (K, T) remixes."""
        return self.entries.astype(np.float64) @ np.asarray(estimates)


@dataclasses.dataclass(frozen=True)
class PermutationMatrix:
    """Binary (M, M) matrix with one-hot rows and columns."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.int64)
        ok = (
            arr.ndim == 2
            and arr.shape[0] == arr.shape[1]
            and np.isin(arr, (0, 1)).all()
            and (arr.sum(axis=0) == 1).all()
            and (arr.sum(axis=1) == 1).all()
        )
        if not ok:
            raise InputError("permutation matrix must be square doubly one-hot")
        object.__setattr__(self, "entries", arr)

    @property
    def permutation(self):
        """sigma such that reference m is matched with estimate sigma[m]."""
        return tuple(int(i) for i in self.entries.argmax(axis=1))

    @classmethod
    def from_permutation(cls, sigma):
        arr = np.zeros((len(sigma), len(sigma)), dtype=np.int64)
        for m, j in enumerate(sigma):
            arr[m, j] = 1
        return cls(arr)


@dataclasses.dataclass(frozen=True)
class AssignmentConstraint:
    """Restriction on which mixtures each estimated source may join.

    `allowed[j]` lists the permitted mixture rows for source j. Sources named
    together in an `exclusive_groups` entry must land on pairwise different
    mixtures; this expresses constraints like "exactly one of the two
    residual outputs joins the foreground mixture", which a per-source mask
    alone cannot.
    """

    allowed: tuple
    exclusive_groups: tuple = ()

    def __post_init__(self):
        allowed = tuple(tuple(sorted(set(a))) for a in self.allowed)
        if not allowed:
            raise InputError("constraint must cover at least one source")
        for j, options in enumerate(allowed):
            if not options:
                raise InputError(f"source {j} permits no mixture")
            if any(i < 0 for i in options):
                raise InputError("mixture indices must be non-negative")
        groups = tuple(tuple(sorted(set(g))) for g in self.exclusive_groups)
        for g in groups:
            if len(g) < 2:
                raise InputError("exclusive groups need at least two sources")
            if any(j < 0 or j >= len(allowed) for j in g):
                raise InputError("exclusive group names an unknown source")
        object.__setattr__(self, "allowed", allowed)
        object.__setattr__(self, "exclusive_groups", groups)


def enhancement_constraint(num_estimates, num_mixtures=2):
    """The constrained remixing used for on-device enhancement training.

    Output 1 (index 0) is pinned to mixture 1; the remaining outputs may go
    to either mixture but must not all collapse onto one, enforced pairwise
    for the standard three-output case.
    """
    if num_estimates < 2:
        raise InputError("enhancement constraint needs at least 2 outputs")
    allowed = ((0,),) + tuple(
        tuple(range(num_mixtures)) for _ in range(num_estimates - 1)
    )
    groups = (tuple(range(1, num_estimates)),) if num_estimates > 2 else ()
    return AssignmentConstraint(allowed=allowed, exclusive_groups=groups)


@dataclasses.dataclass(frozen=True)
class BatchSpec:
    """Batch composition for semi-supervised training."""

    supervised_fraction: float = 0.0
    zero_probability: float = 0.0
    mixtures_per_mom: int = 2

    def __post_init__(self):
        if not 0.0 <= self.supervised_fraction <= 1.0:
            raise InputError("supervised_fraction must be in [0, 1]")
        if not 0.0 <= self.zero_probability <= 1.0:
            raise InputError("zero_probability must be in [0, 1]")
        if self.mixtures_per_mom < 2:
            raise InputError("a mixture of mixtures needs at least 2 inputs")


def _assignment_rows(num_mixtures, num_estimates, constraint, budget):
    """Valid assignments as an (nA, M) int array in canonical base-K order."""
    if num_mixtures < 1 or num_estimates < 1:
        raise InputError("need at least one mixture and one estimate")
    if constraint is None:
        options = [range(num_mixtures)] * num_estimates
        count = num_mixtures**num_estimates
    else:
        if len(constraint.allowed) != num_estimates:
            raise InputError(
                f"constraint covers {len(constraint.allowed)} sources, "
                f"need {num_estimates}"
            )
        options = []
        count = 1
        for j, perm in enumerate(constraint.allowed):
            if any(i >= num_mixtures for i in perm):
                raise InputError(
                    f"source {j} permits mixture index >= K={num_mixtures}"
                )
            options.append(perm)
            count *= len(perm)
    if count > budget:
        raise EnumerationBudgetError(
            f"{count} candidate matrices exceed the enumeration budget "
            f"{budget}; constrain the assignment or reduce M"
        )
    rows = np.array(list(itertools.product(*options)), dtype=np.int64)
    if constraint is not None and constraint.exclusive_groups:
        keep = np.ones(len(rows), dtype=bool)
        for group in constraint.exclusive_groups:
            for a, b in itertools.combinations(group, 2):
                keep &= rows[:, a] != rows[:, b]
        rows = rows[keep]
    if len(rows) == 0:
        raise InputError("constraint admits no valid mixing matrix")
    return rows


def enumerate_mixing_matrices(
    num_mixtures, num_estimates, constraint=None, budget=ENUMERATION_BUDGET
):
    """All valid mixing matrices, ascending by base-K digit order."""
    rows = _assignment_rows(num_mixtures, num_estimates, constraint, budget)
    return [MixingMatrix.from_assignments(r, num_mixtures) for r in rows]


def _pairwise_remix_losses(X, R, tau, snr_max):
    """Loss of each remix row against its mixture, matching the scalar op.

    X is (K, T); R is (nA, K, T) of candidate remixes. Follows the same
    branch structure as neg_thresholded_snr so selected losses are equal
    bit for bit.
    """
    ref_power = np.sum(np.square(X), axis=-1)
    err_power = np.sum(np.square(X[None, :, :] - R), axis=-1)
    with np.errstate(divide="ignore"):
        vals = 10.0 * np.log10(err_power + tau * ref_power[None, :])
    vals = vals - 10.0 * np.log10(ref_power)[None, :]
    vals = np.maximum(vals, -snr_max)
    return np.where(err_power == 0.0, -snr_max, vals)


def mixit_loss(mixtures, estimates, cfg, constraint=None, candidates=None):
    """Minimum over mixing matrices of the summed remix loss.

    Returns (loss_db, best MixingMatrix); ties go to the earliest matrix in
    canonical order. `candidates` overrides enumeration with an explicit
    matrix list (used, for example, to restrict to permutation matrices).
    """
    X = mixtures.as_array()
    S = estimates.as_array()
    K, M = X.shape[0], S.shape[0]
    if X.shape[1] != S.shape[1]:
        raise InputError(
            f"mixture length {X.shape[1]} != estimate length {S.shape[1]}"
        )
    for i in range(K):
        if zero_energy(X[i]):
            raise InputError(f"mixture {i} has zero energy")

    if candidates is None:
        rows = _assignment_rows(K, M, constraint, ENUMERATION_BUDGET)
    else:
        if not candidates:
            raise InputError("candidate matrix list is empty")
        for c in candidates:
            if c.num_mixtures != K or c.num_estimates != M:
                raise InputError(
                    f"candidate shape {c.entries.shape} does not match "
                    f"(K={K}, M={M})"
                )
        rows = np.stack([np.asarray(c.assignments) for c in candidates])

    best_val = np.inf
    best_row = None
    onehot = np.eye(K, dtype=np.float64)
    for start in range(0, len(rows), _CHUNK):
        chunk = rows[start : start + _CHUNK]
        A = onehot[chunk].transpose(0, 2, 1)  # (n, K, M)
        R = A @ S
        totals = _pairwise_remix_losses(X, R, cfg.tau, cfg.snr_max).sum(axis=1)
        i = int(np.argmin(totals))
        if totals[i] < best_val:
            best_val = float(totals[i])
            best_row = chunk[i]
    return best_val, MixingMatrix.from_assignments(best_row, K)


def pit_pairwise_losses(references, estimates, cfg,
                        zero_source_handling="error", mixture=None):
    """(M, M) matrix of per-pair losses: rows are references, columns estimates.

    Zero-energy reference rows either raise (default) or are scored with the
    silent-slot loss thresholded by `mixture` (the summed references when not
    given), so inactive slots prefer the lowest-power estimate.
    """
    if zero_source_handling not in ("error", "zero_loss"):
        raise InputError(
            f"unknown zero_source_handling {zero_source_handling!r}"
        )
    refs = references.as_array()
    ests = estimates.as_array()
    M = refs.shape[0]
    if ests.shape[0] != M:
        raise InputError(
            f"PIT needs equal counts, got {M} references and {ests.shape[0]} "
            "estimates"
        )
    if zero_source_handling == "zero_loss":
        x = mixture if mixture is not None else mix(references)
    cost = np.empty((M, M), dtype=np.float64)
    for m in range(M):
        if zero_energy(refs[m]):
            if zero_source_handling == "error":
                raise InputError(
                    f"reference {m} has zero energy; enable zero_source_handling"
                )
            for j in range(M):
                cost[m, j] = zero_source_loss(ests[j], x, cfg)
        else:
            for j in range(M):
                cost[m, j] = neg_thresholded_snr(refs[m], ests[j], cfg)
    return cost


def pit_loss(references, estimates, cfg, zero_source_handling="error",
             mixture=None):
    """Minimum over permutations of the summed per-pair loss.

    Returns (loss_db, best PermutationMatrix). The search runs as an optimal
    linear-assignment solve on the pairwise loss matrix, which is exact
    because the objective decomposes over pairs.
    """
    cost = pit_pairwise_losses(
        references, estimates, cfg, zero_source_handling, mixture
    )
    rows, cols = linear_sum_assignment(cost)
    loss = float(cost[rows, cols].sum())
    sigma = [0] * cost.shape[0]
    for m, j in zip(rows, cols):
        sigma[m] = int(j)
    return loss, PermutationMatrix.from_permutation(sigma)


def pit_loss_exhaustive(references, estimates, cfg,
                        zero_source_handling="error", mixture=None):
    """Factorial-time PIT used as the assignment solver's test oracle."""
    cost = pit_pairwise_losses(
        references, estimates, cfg, zero_source_handling, mixture
    )
    M = cost.shape[0]
    best = None
    best_sigma = None
    for sigma in itertools.permutations(range(M)):
        total = float(cost[np.arange(M), sigma].sum())
        if best is None or total < best:
            best = total
            best_sigma = sigma
    return best, PermutationMatrix.from_permutation(best_sigma)


def semi_supervised_loss(examples, estimates, spec, cfg):
    """Mean loss over a batch mixing supervised and unsupervised scoring.

    The first round(p * B) examples are scored with PIT against their
    reference sources (padded with silent slots to the estimate count, with
    the silent-slot loss enabled); the rest are scored with MixIT against
    their component mixtures. Examples provide `.references` (a SourceSet or
    None) and `.mixtures` (a SourceSet); `estimates` is a parallel list of
    SourceSets.
    """
    if not examples:
        raise InputError("empty batch")
    if len(examples) != len(estimates):
        raise InputError(
            f"{len(examples)} examples but {len(estimates)} estimate sets"
        )
    num_supervised = int(round(spec.supervised_fraction * len(examples)))
    total = 0.0
    for idx, (example, est) in enumerate(zip(examples, estimates)):
        if idx < num_supervised:
            refs = example.references
            if refs is None:
                raise InputError(
                    f"example {idx} is scored supervised but has no references"
                )
            refs = pad_references(refs, len(est))
            loss, _ = pit_loss(
                refs, est, cfg, zero_source_handling="zero_loss",
                mixture=mix(example.mixtures),
            )
        else:
            loss, _ = mixit_loss(example.mixtures, est, cfg)
        total += loss
    return total / len(examples)


def pad_references(references, num_slots):
    """Zero-pad a reference SourceSet up to the model output count."""
    if len(references) > num_slots:
        raise InputError(
            f"{len(references)} references exceed {num_slots} output slots"
        )
    if len(references) == num_slots:
        return references
    silent = Waveform(
        np.zeros(references.length, dtype=np.float64), references.sample_rate
    )
    return SourceSet(references.sources + (silent,) * (num_slots - len(references)))
