"""Separation quality metrics and the statistics used to compare runs.

All separation metrics build on scale-invariant SNR. Improvement metrics
subtract the mixture's own score so a model that passes its input through
unchanged lands at 0 dB. Alignment between references and estimates is
always resolved by an optimal assignment, never by slot order.
"""

import dataclasses
import json
import math
import pathlib

import numpy as np
from scipy.optimize import linear_sum_assignment

from .assign import enumerate_mixing_matrices, mixit_loss
from .errors import DataError, InputError
from .signal import LossConfig, si_snr, zero_energy


def si_snri(reference, estimate, mixture):
    """Scale-invariant SNR improvement of an estimate over the raw mixture."""
    return si_snr(reference, estimate) - si_snr(reference, mixture)


def _pairwise_si_snr(refs, ests):
    """(N, M) table of si_snr(ref_n, est_m); rows must be nonzero."""
    table = np.empty((len(refs), len(ests)), dtype=np.float64)
    for n, ref in enumerate(refs):
        for m, est in enumerate(ests):
            table[n, m] = si_snr(ref, est)
    return table


def msi(references, estimates, mixture):
    """Multi-source SI-SNR improvement under the best output alignment.

    References are zero-padded to the estimate count and assigned to
    estimates so the total SI-SNR over real references is maximal; silent
    pad slots take whatever estimates remain. The mean improvement covers
    the real references only.
    """
    num_refs = len(references)
    num_ests = len(estimates)
    if num_ests < num_refs:
        raise InputError(
            f"{num_refs} references need at least as many estimates, "
            f"got {num_ests}"
        )
    for n, ref in enumerate(references.sources):
        if zero_energy(ref):
            raise InputError(f"reference {n} has zero energy")
    # Zero-padding the references appears here as all-zero cost rows: the
    # silent slots absorb leftover estimates without affecting the solve.
    cost = np.zeros((num_ests, num_ests), dtype=np.float64)
    table = _pairwise_si_snr(references.sources, estimates.sources)
    cost[:num_refs, :] = -table
    rows, cols = linear_sum_assignment(cost)
    assigned = {int(r): int(c) for r, c in zip(rows, cols)}
    base = [si_snr(ref, mixture) for ref in references.sources]
    improvements = [
        table[n, assigned[n]] - base[n] for n in range(num_refs)
    ]
    return float(np.mean(improvements))


def ss(reference, estimates):
    """Absolute SI-SNR of the best-matching estimate for a single source."""
    return max(si_snr(reference, est) for est in estimates.sources)


def momi(mixtures, estimates, mom, selection="loss", cfg=None,
         rel_tolerance=1e-5):
    """Mixture reconstruction improvement for unsupervised evaluation.

    Estimates are remixed by the best mixing matrix and each remix is scored
    against its component mixture; the improvement over scoring the summed
    input is averaged across mixtures. Needs no source references. The
    matrix is chosen by the training objective by default; pass
    selection="si_snr" to maximize total SI-SNR instead.
    """
    if selection not in ("loss", "si_snr"):
        raise InputError(f"unknown selection {selection!r}")
    X = mixtures.as_array()
    total = X.sum(axis=0)
    scale = max(1.0, float(np.max(np.abs(total))))
    if total.shape != mom.samples.shape or not np.allclose(
        total, mom.samples, atol=rel_tolerance * scale
    ):
        raise InputError("mom does not match the sum of the mixtures")

    if selection == "loss":
        _, matrix = mixit_loss(mixtures, estimates, cfg or LossConfig())
    else:
        best_total = -math.inf
        matrix = None
        S = estimates.as_array()
        for cand in enumerate_mixing_matrices(len(mixtures), len(estimates)):
            remix = cand.remix(S)
            score = sum(
                si_snr(X[i], remix[i]) for i in range(len(mixtures))
            )
            if score > best_total:
                best_total = score
                matrix = cand
    remix = matrix.remix(estimates.as_array())
    deltas = [
        si_snr(X[i], remix[i]) - si_snr(X[i], mom.samples)
        for i in range(len(mixtures))
    ]
    return float(np.mean(deltas))


def normalized_within_condition_std(scores, formula_literal=False,
                                    pooling="all_cells"):
    """Spread of scores after removing per-example offsets.

    `scores` is an (examples, conditions) table; every cell must be present
    and finite. Each example's mean across conditions is subtracted and the
    global mean added back, removing between-example level differences, and
    the population standard deviation of the normalized table is returned.

    The default pools over all cells, so consistent between-condition
    effects still contribute spread. pooling="per_condition" instead pools
    the variance taken inside each condition, which reports pure
    within-condition error (a table whose conditions differ only by
    constant offsets collapses to zero). `formula_literal` removes
    per-condition means instead of per-example means.
    """
    if pooling not in ("all_cells", "per_condition"):
        raise InputError(f"unknown pooling {pooling!r}")
    table = np.asarray(scores, dtype=np.float64)
    if table.ndim != 2 or table.size == 0:
        raise InputError("scores must be a non-empty 2-D table")
    if not np.all(np.isfinite(table)):
        raise InputError("scores table has missing or non-finite cells")
    grand = table.mean()
    if formula_literal:
        centered = table - table.mean(axis=0, keepdims=True) + grand
    else:
        centered = table - table.mean(axis=1, keepdims=True) + grand
    if pooling == "per_condition":
        return float(np.sqrt(centered.var(axis=0).mean()))
    return float(np.std(centered))


@dataclasses.dataclass(frozen=True)
class CorrelationResult:
    pearson: float
    spearman: float
    defined: bool


def _fractional_ranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(xs, ys):
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    return float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))


def correlation(xs, ys):
    """Pearson on values and Spearman on tie-averaged fractional ranks.

    Zero variance in either input leaves both coefficients undefined; the
    result is flagged rather than raising, so callers can report it.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InputError("correlation needs two equal-length 1-D sequences")
    if len(xs) < 3:
        raise InputError("correlation needs at least 3 points")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        return CorrelationResult(math.nan, math.nan, defined=False)
    pearson = _pearson(xs, ys)
    spearman = _pearson(_fractional_ranks(xs), _fractional_ranks(ys))
    return CorrelationResult(pearson, spearman, defined=True)


@dataclasses.dataclass(frozen=True)
class EvalRecord:
    """One metric value for one example; undefined entries stay flagged."""

    example_id: str
    metric: str
    value_db: float
    defined: bool = True


@dataclasses.dataclass
class EvalReport:
    records: list = dataclasses.field(default_factory=list)

    def add(self, example_id, metric, value_db, defined=True):
        self.records.append(
            EvalRecord(example_id, metric, float(value_db), defined)
        )

    def metrics(self):
        return sorted({r.metric for r in self.records})

    def mean(self, metric):
        """Mean over defined values; None when nothing is defined."""
        values = [
            r.value_db for r in self.records
            if r.metric == metric and r.defined
        ]
        return float(np.mean(values)) if values else None

    def counts(self, metric):
        defined = sum(
            1 for r in self.records if r.metric == metric and r.defined
        )
        total = sum(1 for r in self.records if r.metric == metric)
        return defined, total - defined

    def summary(self):
        out = {}
        for metric in self.metrics():
            defined, undefined = self.counts(metric)
            out[metric] = {
                "mean_db": self.mean(metric),
                "defined": defined,
                "undefined": undefined,
            }
        return out

    def save(self, path):
        path = pathlib.Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                value = r.value_db if math.isfinite(r.value_db) else None
                fh.write(
                    json.dumps(
                        {
                            "example_id": r.example_id,
                            "metric": r.metric,
                            "value_db": value,
                            "defined": r.defined,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
            fh.write(
                json.dumps({"summary": self.summary()}, sort_keys=True) + "\n"
            )

    @classmethod
    def load(cls, path):
        path = pathlib.Path(path)
        report = cls()
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"{path}: cannot read report: {exc}") from exc
        for line in lines:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "summary" in obj:
                continue
            value = obj["value_db"]
            report.add(
                obj["example_id"],
                obj["metric"],
                math.nan if value is None else value,
                obj["defined"],
            )
        return report
