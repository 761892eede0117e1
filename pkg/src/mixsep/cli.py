"""Command-line entry point for reproducible separation experiments.

Five subcommands cover the full loop: `synth-data` builds a toy WAV corpus
with a manifest, `train` fits the separator, `separate` runs a checkpoint
over one file, `evaluate` scores a checkpoint against a manifest, and
`analyze` aggregates evaluation reports. Every command writes its fully
resolved settings to `run_config.json` in the output directory so a run can
be reproduced bit-exactly from the artifacts alone.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

import argparse
import dataclasses
import json
import pathlib
import sys

import numpy as np

from .checkpoint import load_store
from .datagen import (
    CorpusManifest,
    EpochSampler,
    TaggedPool,
    build_toy_corpus,
    load_examples,
)
from .errors import DataError, InputError, NumericError
from .metrics import EvalReport, correlation, momi, msi, normalized_within_condition_std, ss
from .model import ModelConfig, desk_config, init_parameters, separate
from .signal import SourceSet, Waveform
from .training import (
    EnhancementBatches,
    MixedBatches,
    TrainingConfig,
    train,
)
from .wavio import read_wav, write_wav

METRIC_NAMES = ("sisnri", "msi", "ss", "momi")


def _parse_sources_range(text):
    """Parse an inclusive 'lo:hi' source-count range."""
    parts = text.split(":")
    try:
        lo, hi = (int(p) for p in parts)
    except ValueError:
        raise InputError(
            f"expected --sources-per-mixture as lo:hi, got {text!r}"
        ) from None
    if lo < 1 or hi < lo:
        raise InputError(f"bad source count range {text!r}")
    return lo, hi


def _parse_metrics(text):
    names = tuple(m.strip() for m in text.split(",") if m.strip())
    if not names:
        raise InputError("empty metric list")
    unknown = [m for m in names if m not in METRIC_NAMES]
    if unknown:
        raise InputError(
            f"unknown metrics {unknown}; choose from {list(METRIC_NAMES)}"
        )
    return names


def _model_config(args):
    if args.model == "desk":
        return dataclasses.replace(
            desk_config(args.num_outputs), sample_rate=args.sample_rate
        )
    return ModelConfig(
        num_outputs=args.num_outputs,
        basis_size=8,
        kernel_size=4,
        num_blocks=2,
        bottleneck_channels=8,
        conv_channels=16,
        depthwise_kernel=3,
        dilation_period=4,
        skip_residual_edges=(),
        sample_rate=args.sample_rate,
    )


def _write_run_config(out_dir, command, settings):
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "settings": settings}
    with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _single_split_tag(manifest, path):
    tags = {r.split for r in manifest.records}
    if len(tags) != 1:
        raise DataError(f"{path}: expected one split tag, found {sorted(tags)}")
    return tags.pop()


def cmd_synth_data(args):
    sources_range = _parse_sources_range(args.sources_per_mixture)
    manifest = build_toy_corpus(
        args.out,
        args.num_mixtures,
        sources_range,
        args.duration_s,
        args.sample_rate,
        args.seed,
        split=args.split,
        with_refs=not args.no_refs,
    )
    _write_run_config(args.out, "synth-data", {
        "out": str(args.out),
        "num_mixtures": args.num_mixtures,
        "sources_per_mixture": list(sources_range),
        "duration_s": args.duration_s,
        "sample_rate": args.sample_rate,
        "seed": args.seed,
        "split": args.split,
        "with_refs": not args.no_refs,
    })
    print(
        f"wrote {len(manifest)} mixtures ({args.split}) to {args.out}"
    )
    return 0


def cmd_train(args):
    model_cfg = _model_config(args)
    config = TrainingConfig(
        mode=args.mode,
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        snr_max=args.snr_max,
        supervised_fraction=args.supervised_frac,
        zero_probability=args.p0,
        mixtures_per_mom=args.mixtures_per_mom,
        use_zero_loss=not args.no_zero_loss,
        seed=args.seed,
        eval_every=args.eval_every,
        log_every=args.log_every,
    )
    needs_refs = config.supervised_fraction > 0
    manifest = CorpusManifest.load(args.manifest)
    examples = load_examples(
        manifest,
        args.sample_rate,
        clip_s=args.clip_s,
        seed=args.seed,
        require_refs=needs_refs,
    )
    val_examples = None
    if args.val_manifest:
        val_examples = load_examples(
            CorpusManifest.load(args.val_manifest),
            args.sample_rate,
            require_refs=True,
        )

    if args.noise_manifest:
        noise_manifest = CorpusManifest.load(args.noise_manifest)
        noise_examples = load_examples(
            noise_manifest, args.sample_rate, clip_s=args.clip_s,
            seed=args.seed + 1,
        )
        batches = EnhancementBatches(
            TaggedPool(
                _single_split_tag(manifest, args.manifest),
                EpochSampler(examples, args.seed),
            ),
            TaggedPool(
                _single_split_tag(noise_manifest, args.noise_manifest),
                EpochSampler(noise_examples, args.seed + 1),
            ),
            config,
            num_estimates=model_cfg.num_outputs,
        )
    else:
        batches = MixedBatches(examples, config)

    _write_run_config(args.out, "train", {
        "manifest": str(args.manifest),
        "val_manifest": str(args.val_manifest) if args.val_manifest else None,
        "noise_manifest": (
            str(args.noise_manifest) if args.noise_manifest else None
        ),
        "out": str(args.out),
        "clip_s": args.clip_s,
        "sample_rate": args.sample_rate,
        "model": dataclasses.asdict(model_cfg),
        "training": dataclasses.asdict(config),
    })

    store = init_parameters(model_cfg, args.seed)
    result = train(store, batches, config, args.out, val_examples=val_examples)
    last_loss = result.history[-1]["loss_db"]
    print(f"trained {config.steps} steps; final loss {last_loss:.2f} dB")
    if val_examples is not None:
        print(
            f"best checkpoint: step {result.best_step} "
            f"(validation {result.best_metric:.2f} dB) at {result.best_path}"
        )
    print(f"final checkpoint: {result.final_path}")
    return 0


def cmd_separate(args):
    store, _, _ = load_store(args.checkpoint)
    wave = read_wav(args.input, expect_rate=store.config.sample_rate)
    estimates = separate(store, wave)
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = pathlib.Path(args.input).stem
    paths = []
    for i, source in enumerate(estimates.sources, start=1):
        path = out_dir / f"{stem}_source{i}.wav"
        write_wav(path, source)
        paths.append(path)
    _write_run_config(args.out, "separate", {
        "checkpoint": str(args.checkpoint),
        "input": str(args.input),
        "out": str(args.out),
    })
    print(f"wrote {len(paths)} sources for {args.input}:")
    for path in paths:
        print(f"  {path}")
    return 0


def _identity_estimates(mixture, num_outputs):
    """Baseline 'model': the mixture in slot 1, silence elsewhere."""
    silent = Waveform(np.zeros_like(mixture.samples), mixture.sample_rate)
    return SourceSet((mixture,) + (silent,) * (num_outputs - 1))


def cmd_evaluate(args):
    metric_names = _parse_metrics(args.metrics)
    if args.identity:
        store = None
        rate = args.sample_rate

        def run_model(mixture):
            return _identity_estimates(mixture, args.num_outputs)
    else:
        if not args.checkpoint:
            raise InputError("evaluate needs --checkpoint or --identity")
        store, _, _ = load_store(args.checkpoint)
        rate = store.config.sample_rate

        def run_model(mixture):
            return separate(store, mixture)

    manifest = CorpusManifest.load(args.manifest)
    needs_refs = bool({"sisnri", "msi"} & set(metric_names))
    examples = load_examples(manifest, rate, require_refs=needs_refs)
    ids = [
        pathlib.Path(r.path).stem.removesuffix("_mix")
        for r in manifest.records
    ]

    report = EvalReport()
    per_example = [m for m in metric_names if m != "momi"]
    if per_example:
        for ex_id, example in zip(ids, examples):
            estimates = run_model(example.mixture)
            for metric in per_example:
                if metric in ("sisnri", "msi"):
                    # With refs padded to the output count, the optimally
                    # assigned improvement is the plain SI-SNRi whenever
                    # every reference is real, so both names share one value.
                    value = msi(example.references, estimates,
                                example.mixture)
                    report.add(ex_id, metric, value)
                elif metric == "ss":
                    single = (
                        example.references is not None
                        and example.true_source_count == 1
                    )
                    if single:
                        value = ss(example.references.sources[0], estimates)
                        report.add(ex_id, "ss", value)
                    else:
                        report.add(ex_id, "ss", float("nan"), defined=False)

    if "momi" in metric_names:
        for k in range(0, len(examples) - 1, 2):
            a, b = examples[k], examples[k + 1]
            if len(a.mixture) != len(b.mixture):
                raise DataError(
                    f"cannot pair {ids[k]} with {ids[k + 1]}: lengths differ"
                )
            mom = Waveform(
                a.mixture.samples + b.mixture.samples, rate
            )
            estimates = run_model(mom)
            value = momi(
                SourceSet((a.mixture, b.mixture)), estimates, mom
            )
            report.add(f"{ids[k]}+{ids[k + 1]}", "momi", value)
        if len(examples) % 2:
            print(f"note: odd record count, {ids[-1]} left unpaired")

    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.jsonl"
    report.save(report_path)
    _write_run_config(args.out, "evaluate", {
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "identity": args.identity,
        "manifest": str(args.manifest),
        "metrics": list(metric_names),
        "num_outputs": args.num_outputs,
        "sample_rate": rate,
        "out": str(args.out),
    })
    for metric in report.metrics():
        mean = report.mean(metric)
        defined, undefined = report.counts(metric)
        shown = "undefined" if mean is None else f"{mean:.2f} dB"
        print(
            f"{metric}: mean {shown} "
            f"({defined} defined, {undefined} undefined)"
        )
    print(f"report: {report_path}")
    return 0


def _score_table(reports, names, metric):
    """Rows = example ids, columns = reports, for one metric.

    Ids must agree across all reports; rows undefined anywhere are dropped
    (they carry no number to pool).
    """
    per_report = []
    for name, report in zip(names, reports):
        values = {}
        for r in report.records:
            if r.metric == metric:
                if r.example_id in values:
                    raise DataError(
                        f"{name}: duplicate {metric} entry for "
                        f"{r.example_id}"
                    )
                values[r.example_id] = r
        per_report.append(values)
    id_sets = [set(v) for v in per_report]
    if any(s != id_sets[0] for s in id_sets[1:]):
        raise DataError(
            f"score table for {metric!r} is incomplete: reports cover "
            "different example ids"
        )
    rows = []
    for ex_id in sorted(id_sets[0]):
        cells = [v[ex_id] for v in per_report]
        if all(c.defined for c in cells):
            rows.append([c.value_db for c in cells])
    return np.array(rows, dtype=np.float64)


def cmd_analyze(args):
    if not args.reports:
        raise InputError("analyze needs at least one report")
    names = [str(p) for p in args.reports]
    reports = [EvalReport.load(p) for p in args.reports]
    shared = set(reports[0].metrics())
    for report in reports[1:]:
        shared &= set(report.metrics())
    if not shared:
        raise DataError("reports share no metrics")

    analysis = {"conditions": names, "metrics": {}, "correlations": {}}
    for metric in sorted(shared):
        table = _score_table(reports, names, metric)
        entry = {
            "examples_used": int(table.shape[0]) if table.size else 0,
            "per_condition_mean": [r.mean(metric) for r in reports],
        }
        if table.size:
            entry["normalized_std"] = normalized_within_condition_std(table)
        else:
            entry["normalized_std"] = None
        analysis["metrics"][metric] = entry

    ordered = sorted(shared)
    for i, a in enumerate(ordered):
        for b in ordered[i:]:
            xs, ys = [], []
            for report in reports:
                ma, mb = report.mean(a), report.mean(b)
                if ma is not None and mb is not None:
                    xs.append(ma)
                    ys.append(mb)
            key = f"{a}_vs_{b}"
            if len(xs) >= 3:
                result = correlation(xs, ys)
                analysis["correlations"][key] = {
                    "pearson": result.pearson,
                    "spearman": result.spearman,
                    "defined": result.defined,
                    "points": len(xs),
                }
            else:
                analysis["correlations"][key] = {
                    "pearson": None,
                    "spearman": None,
                    "defined": False,
                    "points": len(xs),
                }

    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "analysis.json"

    def _clean(obj):
        if isinstance(obj, dict):
            return {k: _clean(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [_clean(v) for v in obj]
        if isinstance(obj, float) and not np.isfinite(obj):
            return None
        return obj

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(analysis), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_config(args.out, "analyze", {
        "reports": names,
        "out": str(args.out),
    })
    for metric in sorted(shared):
        entry = analysis["metrics"][metric]
        print(
            f"{metric}: normalized std {entry['normalized_std']} over "
            f"{entry['examples_used']} examples x {len(reports)} conditions"
        )
    for key, cor in sorted(analysis["correlations"].items()):
        if cor["defined"]:
            print(
                f"{key}: pearson {cor['pearson']:.3f} "
                f"spearman {cor['spearman']:.3f} ({cor['points']} points)"
            )
    print(f"analysis: {path}")
    return 0


def _add_common_model_flags(sub):
    sub.add_argument("--model", choices=("desk", "tiny"), default="desk",
                     help="architecture size preset")
    sub.add_argument("--num-outputs", type=int, default=4,
                     help="separated source slots M")
    sub.add_argument("--sample-rate", type=int, default=8000)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mixsep",
        description="Sound separation trained on mixtures of mixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="synthesize a toy WAV corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--num-mixtures", type=int, required=True)
    p.add_argument("--sources-per-mixture", default="1:2",
                   help="inclusive lo:hi source count per mixture")
    p.add_argument("--duration-s", type=float, default=0.5)
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="generic",
                   help="manifest split tag; speech_plus_noise and "
                        "noise_only select fixed recipes")
    p.add_argument("--no-refs", action="store_true",
                   help="omit reference paths from the manifest")
    p.set_defaults(handler=cmd_synth_data)

    p = sub.add_parser("train", help="train a separator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--noise-manifest",
                   help="background-only manifest; switches to constrained "
                        "enhancement pairing")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", required=True,
                   choices=("supervised", "unsupervised", "semi"))
    p.add_argument("--supervised-frac", type=float, default=None)
    p.add_argument("--p0", type=float, default=0.0,
                   help="probability of zeroing one supervised mixture "
                        "inside a mixture of mixtures")
    p.add_argument("--snr-max", type=float, default=30.0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--mixtures-per-mom", type=int, default=2)
    p.add_argument("--no-zero-loss", action="store_true",
                   help="drop the silent-slot loss term")
    p.add_argument("--clip-s", type=float, default=None,
                   help="crop training examples to this many seconds")
    p.add_argument("--seed", type=int, default=0)
    _add_common_model_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("separate", help="run a checkpoint on one WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_separate)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--identity", action="store_true",
                   help="score the pass-through baseline instead of a "
                        "checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--metrics", default="msi",
                   help=f"comma-separated subset of {','.join(METRIC_NAMES)}")
    p.add_argument("--out", required=True)
    p.add_argument("--num-outputs", type=int, default=2,
                   help="slots for the identity baseline")
    p.add_argument("--sample-rate", type=int, default=8000,
                   help="expected rate for the identity baseline")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("analyze", help="aggregate evaluation reports")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_analyze)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.handler(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
