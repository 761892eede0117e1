"""Training example construction: toy sources, corpora, and MoM assembly.

The toy synthesizer stands in for licensed speech corpora. It produces three
source families that occupy distinguishable time-frequency structure, so a
small model can separate them: harmonic tones (low band), amplitude-modulated
band-passed noise (high band), and sparse decaying transients. Supervised
examples keep their reference sources; unsupervised training sees only
mixtures, summed pairwise into mixtures of mixtures (MoMs).
"""

import dataclasses
import json
import pathlib

import numpy as np

from .assign import AssignmentConstraint, enhancement_constraint
from .errors import DataError, InputError
from .signal import SourceSet, Waveform, mix, zero_energy
from .wavio import read_wav

# Default per-family frequency bands (Hz). Tonal harmonics stay under 1 kHz
# while the noise band starts above it, so the two families are spectrally
# disjoint at an 8 kHz rate.
TONAL_BAND = (150.0, 900.0)
NOISE_BAND = (1500.0, 3500.0)
LEVEL_RANGE_DB = (-5.0, 5.0)

SOURCE_KINDS = ("tonal", "modulated_noise", "transient")


@dataclasses.dataclass(frozen=True)
class TrainExample:
    """One training item: a mixture, with references when supervised."""

    mixture: Waveform
    references: SourceSet = None
    true_source_count: int = None

    def __post_init__(self):
        if self.references is not None:
            summed = mix(self.references)
            if not np.array_equal(summed.samples, self.mixture.samples):
                raise InputError(
                    "supervised references must sum to the mixture exactly; "
                    "build examples with TrainExample.supervised"
                )
            count = self.true_source_count
            if count is None:
                count = sum(
                    0 if zero_energy(w) else 1 for w in self.references.sources
                )
                object.__setattr__(self, "true_source_count", count)
            if count > len(self.references):
                raise InputError(
                    f"true_source_count {count} exceeds "
                    f"{len(self.references)} reference slots"
                )

    @property
    def is_supervised(self):
        return self.references is not None

    @property
    def mixtures(self):
        """This example's mixture as a one-element SourceSet, so single
        examples and MoMs can be scored through the same loss interface."""
        return SourceSet((self.mixture,))

    @classmethod
    def supervised(cls, references, true_source_count=None):
        return cls(
            mixture=mix(references),
            references=references,
            true_source_count=true_source_count,
        )

    @classmethod
    def unsupervised(cls, mixture):
        return cls(mixture=mixture)


@dataclasses.dataclass(frozen=True)
class MoMExample:
    """K component mixtures and their sum, the model's training input."""

    component_mixtures: tuple
    mom: Waveform
    constraint: AssignmentConstraint = None

    def __post_init__(self):
        components = tuple(self.component_mixtures)
        if len(components) < 2:
            raise InputError("a MoM needs at least 2 component mixtures")
        total = components[0].mixture.samples
        for c in components[1:]:
            total = total + c.mixture.samples
        if not np.array_equal(total, self.mom.samples):
            raise InputError("mom must equal the component-mixture sum exactly")
        object.__setattr__(self, "component_mixtures", components)

    @property
    def mixtures(self):
        """Component mixtures as a SourceSet (loss-side reference signals)."""
        return SourceSet(tuple(c.mixture for c in self.component_mixtures))

    @property
    def references(self):
        """Pooled true sources across components, or None if any is blind."""
        if any(not c.is_supervised for c in self.component_mixtures):
            return None
        sources = []
        for c in self.component_mixtures:
            sources.extend(c.references.sources)
        return SourceSet(tuple(sources))

    @classmethod
    def from_components(cls, components, constraint=None):
        total = components[0].mixture.samples
        for c in components[1:]:
            total = total + c.mixture.samples
        mom = Waveform(total, components[0].mixture.sample_rate)
        return cls(tuple(components), mom, constraint)


@dataclasses.dataclass(frozen=True)
class ManifestRecord:
    path: str
    split: str
    refs: tuple = ()
    duration_s: float = 0.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise DataError(f"{self.path}: duration must be positive")
        object.__setattr__(self, "refs", tuple(self.refs))


@dataclasses.dataclass
class CorpusManifest:
    """Record list plus the directory paths are resolved against."""

    records: list
    root: pathlib.Path

    def __len__(self):
        return len(self.records)

    def split(self, tag):
        return [r for r in self.records if r.split == tag]

    @classmethod
    def load(cls, path):
        path = pathlib.Path(path)
        records = []
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"{path}: cannot read manifest: {exc}") from exc
        for n, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(
                    ManifestRecord(
                        path=obj["path"],
                        split=obj.get("split", "generic"),
                        refs=tuple(obj.get("refs") or ()),
                        duration_s=float(obj["duration_s"]),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{n}: bad manifest line: {exc}") from exc
        return cls(records, path.parent)

    def save(self, path):
        path = pathlib.Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                obj = {
                    "path": r.path,
                    "split": r.split,
                    "refs": list(r.refs),
                    "duration_s": r.duration_s,
                }
                fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _band_edges(kind, band):
    if band is not None:
        return band
    if kind == "tonal":
        return TONAL_BAND
    if kind == "modulated_noise":
        return NOISE_BAND
    return (50.0, 3800.0)


def _bandpass_noise(rng, length, rate, lo, hi):
    spectrum = np.fft.rfft(rng.standard_normal(length))
    freqs = np.fft.rfftfreq(length, d=1.0 / rate)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spectrum, n=length)


def _synth_one(kind, rng, length, rate, band):
    lo, hi = _band_edges(kind, band)
    t = np.arange(length) / rate
    if kind == "tonal":
        # Harmonics are capped inside the band so two tonal families with
        # disjoint bands stay spectrally disjoint.
        f0 = rng.uniform(lo, min(hi, lo * 2))
        parts = np.zeros(length)
        for h in range(1, 4):
            if h * f0 > hi:
                break
            amp = rng.uniform(0.3, 1.0) / h
            phase = rng.uniform(0, 2 * np.pi)
            parts += amp * np.sin(2 * np.pi * h * f0 * t + phase)
        env_rate = rng.uniform(0.5, 2.0)
        env = 0.6 + 0.4 * np.sin(2 * np.pi * env_rate * t + rng.uniform(0, 2 * np.pi))
        signal = parts * env
    elif kind == "modulated_noise":
        carrier = _bandpass_noise(rng, length, rate, lo, hi)
        mod_rate = rng.uniform(1.0, 4.0)
        env = 0.55 + 0.45 * np.sin(
            2 * np.pi * mod_rate * t + rng.uniform(0, 2 * np.pi)
        )
        signal = carrier * env
    elif kind == "transient":
        signal = np.zeros(length)
        n_events = max(1, int(rng.integers(2, 6) * length / rate))
        for _ in range(n_events):
            start = int(rng.integers(0, max(1, length - 8)))
            decay_s = rng.uniform(0.005, 0.03)
            span = min(length - start, max(8, int(5 * decay_s * rate)))
            kernel = np.exp(-np.arange(span) / (decay_s * rate))
            signal[start : start + span] += (
                rng.uniform(0.4, 1.0) * rng.choice((-1.0, 1.0)) * kernel
            )
    else:
        raise InputError(f"unknown source kind {kind!r}")

    peak = np.max(np.abs(signal))
    if peak == 0.0:
        signal[0] = 1.0
        peak = 1.0
    level_db = rng.uniform(*LEVEL_RANGE_DB)
    return signal / peak * 10.0 ** (level_db / 20.0)


def synth_toy_sources(kind, count, duration_s, sample_rate, seed, band=None):
    """Synthesize `count` deterministic sources of one family."""
    if count < 1 or duration_s <= 0:
        raise InputError("count and duration must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    length = int(round(duration_s * sample_rate))
    return [
        Waveform(_synth_one(kind, rng, length, sample_rate, band), sample_rate)
        for _ in range(count)
    ]


class EpochSampler:
    """Draw-without-replacement over a fixed pool, reshuffled per epoch.

    Within one epoch no index repeats. A draw that would cross the epoch
    boundary discards the tail and starts a fresh shuffled epoch, so the
    items of a single draw are always distinct.
    """

    def __init__(self, items, seed):
        if not items:
            raise InputError("sampler pool is empty")
        self._items = list(items)
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._order = []
        self._pos = 0
        self.epoch = -1
        self._reshuffle()

    def _reshuffle(self):
        self._order = self._rng.permutation(len(self._items))
        self._pos = 0
        self.epoch += 1

    def __len__(self):
        return len(self._items)

    def draw(self, n):
        if n > len(self._items):
            raise InputError(
                f"cannot draw {n} distinct items from a pool of {len(self._items)}"
            )
        if self._pos + n > len(self._order):
            self._reshuffle()
        picked = self._order[self._pos : self._pos + n]
        self._pos += n
        return [self._items[i] for i in picked]


def zeroed_like(example):
    """A silent stand-in preserving an example's shape and supervision."""
    silent = Waveform(
        np.zeros(len(example.mixture), dtype=np.float64),
        example.mixture.sample_rate,
    )
    refs = None
    if example.is_supervised:
        refs = SourceSet((silent,) * len(example.references))
    return TrainExample(mixture=silent, references=refs, true_source_count=0)


def make_mom(sampler, spec, rng, constraint=None):
    """Assemble one MoM by drawing K mixtures without replacement.

    With probability `spec.zero_probability`, one supervised component is
    replaced by silence (mixture and references), degrading the MoM to a
    single surviving mixture; the survivor is not rescaled.
    """
    components = sampler.draw(spec.mixtures_per_mom)
    if spec.zero_probability > 0:
        supervised = [i for i, c in enumerate(components) if c.is_supervised]
        if supervised and rng.random() < spec.zero_probability:
            victim = supervised[rng.integers(0, len(supervised))]
            components[victim] = zeroed_like(components[victim])
    return MoMExample.from_components(components, constraint=constraint)


@dataclasses.dataclass
class TaggedPool:
    """A sampler labeled with its manifest split tag."""

    split: str
    sampler: EpochSampler


def make_enhancement_pair(speech_noise_pool, noise_pool, num_estimates=3):
    """One constrained MoM: foreground mixture plus a background-only one.

    The attached constraint pins model output 1 to the foreground mixture
    and splits the remaining `num_estimates - 1` outputs across the two
    mixtures without letting them collapse onto one.
    """
    if speech_noise_pool.split != "speech_plus_noise":
        raise DataError(
            f"first pool must be split speech_plus_noise, got "
            f"{speech_noise_pool.split!r}"
        )
    if noise_pool.split != "noise_only":
        raise DataError(
            f"second pool must be split noise_only, got {noise_pool.split!r}"
        )
    x1 = speech_noise_pool.sampler.draw(1)[0]
    x2 = noise_pool.sampler.draw(1)[0]
    return MoMExample.from_components(
        (x1, x2), constraint=enhancement_constraint(num_estimates)
    )


def dynamic_remix(source_sampler, num_sources):
    """A fresh supervised mixture from newly drawn pool sources."""
    drawn = source_sampler.draw(num_sources)
    return TrainExample.supervised(SourceSet(tuple(drawn)))


def crop_waveform(w, length, rng):
    """Fixed-length crop at a seeded offset (identity if already short)."""
    if len(w) <= length:
        return w
    start = int(rng.integers(0, len(w) - length + 1))
    return Waveform(w.samples[start : start + length], w.sample_rate)


def _pick_kinds(num_sources, rng):
    """Source families for one mixture: separable classes first.

    Two-source mixtures always pair a tonal source with modulated noise so
    their spectra are disjoint; extra sources cycle through the families;
    single-source mixtures alternate randomly between the two main ones.
    """
    if num_sources == 1:
        return [SOURCE_KINDS[int(rng.integers(0, 2))]]
    return [SOURCE_KINDS[i % len(SOURCE_KINDS)] for i in range(num_sources)]


def build_toy_corpus(out_dir, num_mixtures, sources_range, duration_s,
                     sample_rate, seed, split="generic", with_refs=True):
    """Synthesize a WAV corpus plus manifest; returns the manifest.

    `sources_range` is an inclusive (lo, hi) count per mixture. The split
    tags speech_plus_noise (tonal plus noise, two sources) and noise_only
    (one noise source) override the count range to their fixed recipes.
    """
    from .wavio import write_wav

    lo, hi = sources_range
    if lo < 1 or hi < lo:
        raise InputError(f"bad sources_range {sources_range}")
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for idx in range(num_mixtures):
        if split == "speech_plus_noise":
            kinds = ["tonal", "modulated_noise"]
        elif split == "noise_only":
            kinds = ["modulated_noise"]
        else:
            count = int(rng.integers(lo, hi + 1))
            kinds = _pick_kinds(count, rng)
        sources = []
        for kind in kinds:
            sub_seed = int(rng.integers(0, 2**63 - 1))
            sources.append(
                synth_toy_sources(kind, 1, duration_s, sample_rate, sub_seed)[0]
            )
        example = TrainExample.supervised(SourceSet(tuple(sources)))
        stem = f"{split}_{idx:05d}"
        ref_names = []
        for k, ref in enumerate(example.references.sources):
            name = f"{stem}_ref{k}.wav"
            write_wav(out_dir / name, ref)
            ref_names.append(name)
        mix_name = f"{stem}_mix.wav"
        write_wav(out_dir / mix_name, example.mixture)
        records.append(
            ManifestRecord(
                path=mix_name,
                split=split,
                refs=tuple(ref_names) if with_refs else (),
                duration_s=duration_s,
            )
        )
    manifest = CorpusManifest(records, out_dir)
    manifest.save(out_dir / f"{split}_manifest.jsonl")
    return manifest


def load_examples(manifest, sample_rate, clip_s=None, seed=0,
                  require_refs=False):
    """Materialize manifest records as TrainExamples.

    Supervised mixtures are rebuilt as the exact sum of their loaded
    references (the file codec rounds independently, the invariant must hold
    bitwise); the stored mixture file is validated against that sum. When
    `clip_s` is set every example is cropped to that length at a seeded
    offset, references and mixture in lockstep.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for record in manifest.records:
        mix_path = manifest.root / record.path
        mixture = read_wav(mix_path, expect_rate=sample_rate)
        if record.refs:
            refs = [
                read_wav(manifest.root / p, expect_rate=sample_rate)
                for p in record.refs
            ]
            summed = np.sum([r.samples for r in refs], axis=0)
            if summed.shape != mixture.samples.shape or not np.allclose(
                summed, mixture.samples, atol=2e-4
            ):
                raise DataError(
                    f"{mix_path}: stored mixture does not match the sum of "
                    "its references"
                )
            example = TrainExample.supervised(SourceSet(tuple(refs)))
        else:
            if require_refs:
                raise DataError(f"{mix_path}: record has no references")
            example = TrainExample.unsupervised(mixture)
        if clip_s is not None:
            length = int(round(clip_s * sample_rate))
            if length < len(example.mixture):
                start = int(rng.integers(0, len(example.mixture) - length + 1))
                if example.is_supervised:
                    refs = SourceSet(
                        tuple(
                            Waveform(
                                w.samples[start : start + length], sample_rate
                            )
                            for w in example.references.sources
                        )
                    )
                    example = TrainExample.supervised(
                        refs, example.true_source_count
                    )
                else:
                    example = TrainExample.unsupervised(
                        Waveform(
                            example.mixture.samples[start : start + length],
                            sample_rate,
                        )
                    )
        out.append(example)
    return out
