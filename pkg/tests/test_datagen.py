"""Tests for toy synthesis, sampling, and MoM assembly."""

import numpy as np
import pytest
import scipy.stats

from mixsep.assign import BatchSpec
from mixsep.datagen import (
    CorpusManifest,
    EpochSampler,
    ManifestRecord,
    MoMExample,
    TaggedPool,
    TrainExample,
    build_toy_corpus,
    crop_waveform,
    dynamic_remix,
    load_examples,
    make_enhancement_pair,
    make_mom,
    synth_toy_sources,
    zeroed_like,
)
from mixsep.errors import DataError, InputError
from mixsep.signal import SourceSet, Waveform, mix, zero_energy

RATE = 8000


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _supervised_pool(n, seed=0, kinds=("tonal", "modulated_noise")):
    out = []
    for i in range(n):
        ws = synth_toy_sources(kinds[i % len(kinds)], 1, 0.25, RATE, seed + i)
        out.append(TrainExample.supervised(SourceSet(tuple(ws))))
    return out


class TestSynthesis:
    def test_same_seed_is_bitwise_identical(self):
        a = synth_toy_sources("tonal", 3, 0.5, RATE, seed=41)
        b = synth_toy_sources("tonal", 3, 0.5, RATE, seed=41)
        for wa, wb in zip(a, b):
            np.testing.assert_array_equal(wa.samples, wb.samples)

    def test_different_seeds_differ(self):
        a = synth_toy_sources("tonal", 1, 0.5, RATE, seed=1)[0]
        b = synth_toy_sources("tonal", 1, 0.5, RATE, seed=2)[0]
        assert not np.array_equal(a.samples, b.samples)

    @pytest.mark.parametrize("kind", ["tonal", "modulated_noise", "transient"])
    def test_shapes_levels_and_finiteness(self, kind):
        ws = synth_toy_sources(kind, 4, 0.5, RATE, seed=11)
        for w in ws:
            assert len(w) == RATE // 2
            assert w.sample_rate == RATE
            peak = np.max(np.abs(w.samples))
            # Peak-normalized then scaled by a level in [-5, 5] dB.
            assert 10 ** (-5 / 20) - 1e-9 <= peak <= 10 ** (5 / 20) + 1e-9

    def test_disjoint_band_sources_are_nearly_uncorrelated(self):
        tonal = synth_toy_sources("tonal", 8, 0.5, RATE, seed=3)
        noise = synth_toy_sources("modulated_noise", 8, 0.5, RATE, seed=4)
        for wt, wn in zip(tonal, noise):
            a, b = wt.samples, wn.samples
            r = abs(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
            assert r < 0.1

    def test_explicit_disjoint_tonal_bands(self):
        low = synth_toy_sources("tonal", 4, 0.5, RATE, 5, band=(150.0, 450.0))
        high = synth_toy_sources("tonal", 4, 0.5, RATE, 6, band=(900.0, 2700.0))
        for wl, wh in zip(low, high):
            a, b = wl.samples, wh.samples
            r = abs(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
            assert r < 0.1

    def test_band_energy_is_confined(self):
        w = synth_toy_sources("modulated_noise", 1, 1.0, RATE, seed=8)[0]
        spectrum = np.abs(np.fft.rfft(w.samples)) ** 2
        freqs = np.fft.rfftfreq(len(w), d=1.0 / RATE)
        in_band = spectrum[(freqs >= 1400) & (freqs <= 3600)].sum()
        assert in_band / spectrum.sum() > 0.99

    def test_bad_arguments_are_rejected(self):
        with pytest.raises(InputError):
            synth_toy_sources("tonal", 0, 0.5, RATE, seed=0)
        with pytest.raises(InputError):
            synth_toy_sources("chirp", 1, 0.5, RATE, seed=0)


class TestTrainExample:
    def test_supervised_mixture_is_exact_sum(self):
        refs = SourceSet(tuple(synth_toy_sources("tonal", 3, 0.2, RATE, 9)))
        ex = TrainExample.supervised(refs)
        np.testing.assert_array_equal(ex.mixture.samples, mix(refs).samples)
        assert ex.true_source_count == 3

    def test_mismatched_mixture_is_rejected(self):
        refs = SourceSet(tuple(synth_toy_sources("tonal", 2, 0.2, RATE, 9)))
        wrong = Waveform(mix(refs).samples + 1e-9, RATE)
        with pytest.raises(InputError):
            TrainExample(mixture=wrong, references=refs)

    def test_count_cannot_exceed_slots(self):
        refs = SourceSet(tuple(synth_toy_sources("tonal", 2, 0.2, RATE, 9)))
        with pytest.raises(InputError):
            TrainExample.supervised(refs, true_source_count=3)

    def test_zeroed_like_preserves_shape(self):
        ex = _supervised_pool(1)[0]
        z = zeroed_like(ex)
        assert len(z.mixture) == len(ex.mixture)
        assert z.true_source_count == 0
        assert z.is_supervised
        assert all(zero_energy(w) for w in z.references.sources)

    def test_zero_references_do_not_count(self):
        w = synth_toy_sources("tonal", 1, 0.2, RATE, 9)[0]
        silent = Waveform(np.zeros(len(w)), RATE)
        ex = TrainExample.supervised(SourceSet((w, silent)))
        assert ex.true_source_count == 1


class TestEpochSampler:
    def test_no_repeats_within_an_epoch(self):
        items = list(range(10))
        sampler = EpochSampler(items, seed=0)
        drawn = [sampler.draw(1)[0] for _ in range(10)]
        assert sorted(drawn) == items
        assert sampler.epoch == 0

    def test_reshuffle_on_exhaustion(self):
        sampler = EpochSampler(list(range(5)), seed=0)
        sampler.draw(4)
        # One item remains; a draw of 2 starts a fresh epoch instead of
        # repeating an index inside the draw.
        pair = sampler.draw(2)
        assert sampler.epoch == 1
        assert pair[0] != pair[1]

    def test_epochs_use_different_orders(self):
        sampler = EpochSampler(list(range(20)), seed=1)
        first = [sampler.draw(1)[0] for _ in range(20)]
        second = [sampler.draw(1)[0] for _ in range(20)]
        assert sorted(first) == sorted(second)
        assert first != second

    def test_seeded_determinism(self):
        a = EpochSampler(list(range(8)), seed=5)
        b = EpochSampler(list(range(8)), seed=5)
        assert [a.draw(2) for _ in range(8)] == [b.draw(2) for _ in range(8)]

    def test_errors(self):
        with pytest.raises(InputError):
            EpochSampler([], seed=0)
        with pytest.raises(InputError):
            EpochSampler([1, 2], seed=0).draw(3)


class TestMoM:
    def test_mom_is_exact_component_sum(self):
        pool = _supervised_pool(6)
        sampler = EpochSampler(pool, seed=2)
        spec = BatchSpec(
            supervised_fraction=0.0, zero_probability=0.0, mixtures_per_mom=3
        )
        mom = make_mom(sampler, spec, _rng(0))
        total = np.sum(
            [c.mixture.samples for c in mom.component_mixtures], axis=0
        )
        np.testing.assert_array_equal(total, mom.mom.samples)
        assert len(mom.mixtures) == 3
        assert len(mom.references) == 3

    def test_mismatched_mom_sum_is_rejected(self):
        pool = _supervised_pool(2)
        bad = Waveform(pool[0].mixture.samples * 2.0, RATE)
        with pytest.raises(InputError):
            MoMExample(tuple(pool), bad)
        with pytest.raises(InputError):
            MoMExample((pool[0],), pool[0].mixture)

    def test_references_pool_in_component_order(self):
        pool = _supervised_pool(2)
        mom = MoMExample.from_components(tuple(pool))
        expected = pool[0].references.sources + pool[1].references.sources
        assert mom.references.sources == expected

    def test_blind_component_hides_references(self):
        sup = _supervised_pool(1)[0]
        blind = TrainExample.unsupervised(sup.mixture)
        mom = MoMExample.from_components((sup, blind))
        assert mom.references is None

    def test_zeroing_frequency_matches_probability(self):
        # Over many draws the fraction of MoMs with a silenced component
        # tracks zero_probability closely.
        pool = _supervised_pool(8)
        sampler = EpochSampler(pool, seed=3)
        spec = BatchSpec(
            supervised_fraction=0.0, zero_probability=0.2, mixtures_per_mom=2
        )
        rng = _rng(17)
        hits = 0
        trials = 10_000
        for _ in range(trials):
            mom = make_mom(sampler, spec, rng)
            hits += any(
                zero_energy(c.mixture) for c in mom.component_mixtures
            )
        assert abs(hits / trials - 0.2) < 0.01

    def test_zeroed_component_keeps_sum_exact(self):
        pool = _supervised_pool(4)
        sampler = EpochSampler(pool, seed=4)
        spec = BatchSpec(
            supervised_fraction=0.0, zero_probability=1.0, mixtures_per_mom=2
        )
        mom = make_mom(sampler, spec, _rng(0))
        zeros = [zero_energy(c.mixture) for c in mom.component_mixtures]
        assert sum(zeros) == 1
        survivor = mom.component_mixtures[zeros.index(False)]
        np.testing.assert_array_equal(
            mom.mom.samples, survivor.mixture.samples
        )


class TestEnhancementPair:
    def _pools(self):
        fg = []
        for i in range(4):
            tonal = synth_toy_sources("tonal", 1, 0.25, RATE, 100 + i)[0]
            noise = synth_toy_sources(
                "modulated_noise", 1, 0.25, RATE, 200 + i
            )[0]
            fg.append(TrainExample.supervised(SourceSet((tonal, noise))))
        bg = _supervised_pool(4, seed=300, kinds=("modulated_noise",))
        return (
            TaggedPool("speech_plus_noise", EpochSampler(fg, seed=0)),
            TaggedPool("noise_only", EpochSampler(bg, seed=1)),
        )

    def test_pair_carries_the_pinned_constraint(self):
        fg, bg = self._pools()
        mom = make_enhancement_pair(fg, bg)
        assert len(mom.component_mixtures) == 2
        assert mom.constraint is not None
        assert mom.constraint.allowed[0] == (0,)
        assert mom.constraint.exclusive_groups == ((1, 2),)

    def test_swapped_roles_are_rejected(self):
        fg, bg = self._pools()
        with pytest.raises(DataError):
            make_enhancement_pair(bg, fg)


class TestDynamicRemix:
    def test_remix_is_supervised_and_exact(self):
        sources = synth_toy_sources("tonal", 6, 0.2, RATE, 12)
        sampler = EpochSampler(sources, seed=0)
        ex = dynamic_remix(sampler, 2)
        assert ex.is_supervised and ex.true_source_count == 2
        np.testing.assert_array_equal(
            ex.mixture.samples, mix(ex.references).samples
        )

    def test_successive_draws_share_no_source_within_epoch(self):
        sources = synth_toy_sources("tonal", 6, 0.2, RATE, 12)
        sampler = EpochSampler(sources, seed=0)
        a = dynamic_remix(sampler, 2)
        b = dynamic_remix(sampler, 2)
        c = dynamic_remix(sampler, 2)
        seen = []
        for ex in (a, b, c):
            seen.extend(id(w) for w in ex.references.sources)
        assert len(set(seen)) == 6

    def test_pair_draws_are_uniform(self):
        # Chi-square goodness of fit over the 15 unordered pairs from a
        # 6-source pool.
        sources = synth_toy_sources("tonal", 6, 0.2, RATE, 12)
        index = {id(w): i for i, w in enumerate(sources)}
        sampler = EpochSampler(sources, seed=9)
        counts = {}
        trials = 3000
        for _ in range(trials):
            ex = dynamic_remix(sampler, 2)
            key = tuple(sorted(index[id(w)] for w in ex.references.sources))
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 15
        observed = np.array(list(counts.values()))
        stat = ((observed - trials / 15) ** 2 / (trials / 15)).sum()
        assert scipy.stats.chi2.sf(stat, df=14) > 0.01


class TestManifestAndLoading:
    def test_manifest_roundtrip(self, tmp_path):
        records = [
            ManifestRecord("a.wav", "generic", ("r0.wav", "r1.wav"), 1.0),
            ManifestRecord("b.wav", "noise_only", (), 0.5),
        ]
        manifest = CorpusManifest(records, tmp_path)
        manifest.save(tmp_path / "m.jsonl")
        loaded = CorpusManifest.load(tmp_path / "m.jsonl")
        assert loaded.records == records
        assert loaded.root == tmp_path

    def test_bad_manifest_lines_raise(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"path": "a.wav"}\n')
        with pytest.raises(DataError):
            CorpusManifest.load(path)
        with pytest.raises(DataError):
            CorpusManifest.load(tmp_path / "missing.jsonl")
        with pytest.raises(DataError):
            ManifestRecord("a.wav", "generic", (), 0.0)

    def test_corpus_build_and_reload(self, tmp_path):
        manifest = build_toy_corpus(
            tmp_path, 6, (1, 2), 0.25, RATE, seed=21
        )
        assert len(manifest) == 6
        reloaded = CorpusManifest.load(tmp_path / "generic_manifest.jsonl")
        examples = load_examples(reloaded, RATE)
        assert len(examples) == 6
        for ex in examples:
            assert ex.is_supervised
            # The loader rebuilds the mixture from the decoded references,
            # keeping the sum invariant exact after codec rounding.
            np.testing.assert_array_equal(
                ex.mixture.samples, mix(ex.references).samples
            )

    def test_build_is_deterministic(self, tmp_path):
        m1 = build_toy_corpus(tmp_path / "a", 3, (2, 2), 0.25, RATE, seed=5)
        m2 = build_toy_corpus(tmp_path / "b", 3, (2, 2), 0.25, RATE, seed=5)
        e1 = load_examples(m1, RATE)
        e2 = load_examples(m2, RATE)
        for a, b in zip(e1, e2):
            np.testing.assert_array_equal(a.mixture.samples, b.mixture.samples)

    def test_refs_free_manifest(self, tmp_path):
        manifest = build_toy_corpus(
            tmp_path, 3, (2, 2), 0.25, RATE, seed=7, with_refs=False
        )
        examples = load_examples(manifest, RATE)
        assert all(not ex.is_supervised for ex in examples)
        with pytest.raises(DataError):
            load_examples(manifest, RATE, require_refs=True)

    def test_wrong_rate_is_rejected(self, tmp_path):
        manifest = build_toy_corpus(tmp_path, 1, (1, 1), 0.25, RATE, seed=7)
        with pytest.raises(DataError):
            load_examples(manifest, 16000)

    def test_corrupted_mixture_is_detected(self, tmp_path):
        from mixsep.wavio import write_wav

        manifest = build_toy_corpus(tmp_path, 1, (2, 2), 0.25, RATE, seed=7)
        record = manifest.records[0]
        bad = Waveform(np.ones(int(0.25 * RATE)) * 0.5, RATE)
        write_wav(tmp_path / record.path, bad)
        with pytest.raises(DataError):
            load_examples(manifest, RATE)

    def test_clipping_is_seeded_and_aligned(self, tmp_path):
        manifest = build_toy_corpus(tmp_path, 2, (2, 2), 0.5, RATE, seed=9)
        a = load_examples(manifest, RATE, clip_s=0.25, seed=4)
        b = load_examples(manifest, RATE, clip_s=0.25, seed=4)
        for ea, eb in zip(a, b):
            assert len(ea.mixture) == RATE // 4
            np.testing.assert_array_equal(
                ea.mixture.samples, eb.mixture.samples
            )
            np.testing.assert_array_equal(
                ea.mixture.samples, mix(ea.references).samples
            )

    def test_crop_waveform(self):
        w = synth_toy_sources("tonal", 1, 0.5, RATE, 3)[0]
        cropped = crop_waveform(w, 1000, _rng(0))
        assert len(cropped) == 1000
        assert len(crop_waveform(cropped, 4000, _rng(0))) == 1000
