"""Waveform containers and the signal-level losses and fidelity measures.

Losses here are plain float64 functions of numpy data; the training loop
rebuilds the same expressions on autodiff tensors once an assignment has
been chosen. Loss values are in dB and lower is better; SI-SNR is in dB and
higher is better.
"""

import dataclasses

import numpy as np

from .errors import InputError

# A waveform whose mean power falls below this (relative to nominal
# peak-normalized unit scale) is classified as an inactive source.
ZERO_POWER_REL = 1e-12

SI_SNR_CAP_DB = 60.0


@dataclasses.dataclass(frozen=True)
class Waveform:
    """A single-channel signal: sample array plus its rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise InputError(f"waveform must be 1-D and non-empty, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("waveform contains NaN or Inf samples")
        if self.sample_rate <= 0:
            raise InputError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclasses.dataclass(frozen=True)
class SourceSet:
    """An ordered list of equal-length, equal-rate waveforms.

    Entries may be all-zero: a reference set keeps silent slots so that
    counts line up when a model separates more outputs than active sources.
    """

    sources: tuple

    def __post_init__(self):
        sources = tuple(self.sources)
        if len(sources) < 1:
            raise InputError("a source set needs at least one waveform")
        first = sources[0]
        for w in sources[1:]:
            _check_combinable(first, w)
        object.__setattr__(self, "sources", sources)

    def __len__(self):
        return len(self.sources)

    @property
    def sample_rate(self):
        return self.sources[0].sample_rate

    @property
    def length(self):
        return len(self.sources[0])

    def as_array(self):
        """Stack into an (M, T) float64 array."""
        return np.stack([w.samples for w in self.sources]).astype(np.float64)

    @classmethod
    def from_array(cls, arr, sample_rate):
        arr = np.atleast_2d(np.asarray(arr))
        return cls(tuple(Waveform(row, sample_rate) for row in arr))


@dataclasses.dataclass(frozen=True)
class LossConfig:
    """Threshold configuration for the SNR losses.

    `snr_max` is the only stored field; the clamp weight tau is derived from
    it so the two can never disagree.
    """

    snr_max: float = 30.0

    def __post_init__(self):
        if self.snr_max <= 0:
            raise InputError(f"snr_max must be positive, got {self.snr_max}")

    @property
    def tau(self):
        return 10.0 ** (-self.snr_max / 10.0)


def _check_combinable(a, b):
    if len(a) != len(b):
        raise InputError(f"waveform lengths differ: {len(a)} vs {len(b)}")
    if a.sample_rate != b.sample_rate:
        raise InputError(
            f"sample rates differ: {a.sample_rate} vs {b.sample_rate}"
        )


def _samples(w):
    arr = w.samples if isinstance(w, Waveform) else np.asarray(w)
    return arr.astype(np.float64, copy=False)


def zero_energy(w, rel=ZERO_POWER_REL):
    """True if the waveform's mean power marks it as an inactive source."""
    s = _samples(w)
    return float(np.mean(np.square(s))) < rel


def mix(source_set):
    """Sum a SourceSet into the mixture waveform."""
    total = source_set.as_array().sum(axis=0)
    return Waveform(total, source_set.sample_rate)


def neg_thresholded_snr(y, y_hat, cfg):
    """Negative SNR of `y_hat` against reference `y`, floored at -snr_max.

    Value: 10*log10(||y - y_hat||^2 + tau*||y||^2) - 10*log10(||y||^2).
    The tau term keeps the log argument positive and clamps the reward for
    already-well-separated pairs, so gradients concentrate on hard examples.
    """
    ys = _samples(y)
    es = _samples(y_hat)
    if ys.shape != es.shape:
        raise InputError(f"length mismatch: {ys.shape} vs {es.shape}")
    ref_power = float(np.sum(np.square(ys)))
    if zero_energy(ys):
        raise InputError(
            "reference has zero energy; score it with zero_source_loss"
        )
    err_power = float(np.sum(np.square(ys - es)))
    if err_power == 0.0:
        # The formula reduces to 10*log10(tau) identically; evaluate that
        # directly so perfect reconstruction hits the floor exactly.
        return -cfg.snr_max
    val = 10.0 * np.log10(err_power + cfg.tau * ref_power) - 10.0 * np.log10(
        ref_power
    )
    return max(float(val), -cfg.snr_max)


def zero_source_loss(y_hat, x, cfg):
    """Loss for an estimate that should be silent, thresholded by the mixture.

    Value: 10*log10(||y_hat||^2 + tau*||x||^2). Once the estimate's power
    falls snr_max below the mixture's the value saturates, so silence is not
    rewarded without bound.
    """
    es = _samples(y_hat)
    xs = _samples(x)
    if es.shape != xs.shape:
        raise InputError(f"length mismatch: {es.shape} vs {xs.shape}")
    mix_power = float(np.sum(np.square(xs)))
    if zero_energy(xs):
        raise InputError("mixture has zero energy")
    est_power = float(np.sum(np.square(es)))
    return float(10.0 * np.log10(est_power + cfg.tau * mix_power))


def si_snr(y, y_hat, cap_db=SI_SNR_CAP_DB):
    """Scale-invariant SNR of `y_hat` against `y`, in dB, clamped to ±cap.

    The reference is rescaled by alpha = <y, y_hat>/||y||^2 before the
    residual is measured, so any nonzero scaling of a perfect estimate still
    scores at the cap.
    """
    ys = _samples(y)
    es = _samples(y_hat)
    if ys.shape != es.shape:
        raise InputError(f"length mismatch: {ys.shape} vs {es.shape}")
    ref_power = float(np.sum(np.square(ys)))
    if zero_energy(ys):
        raise InputError("SI-SNR reference has zero energy")
    if zero_energy(es):
        return -cap_db
    alpha = float(np.dot(ys, es)) / ref_power
    target = alpha * ys
    target_power = float(np.sum(np.square(target)))
    if target_power == 0.0:
        return -cap_db
    resid_power = float(np.sum(np.square(target - es)))
    if resid_power <= 1e-12 * target_power:
        return cap_db
    val = 10.0 * np.log10(target_power / resid_power)
    return float(min(max(val, -cap_db), cap_db))
