"""Differentiable losses and the optimization loop for the separator.

The assignment searches (which permutation, which mixing matrix) run on
detached values; the differentiable graph is then built only for the winning
assignment. This keeps the backward pass free of discrete branching while
optimizing exactly the searched objective.
"""

import dataclasses
import json
import math
import pathlib
import time

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .assign import BatchSpec, mixit_loss, pad_references, pit_loss
from .checkpoint import save_store
from .datagen import EpochSampler, make_enhancement_pair, make_mom
from .errors import InputError, NumericError
from .metrics import msi
from .model import forward, separate
from .optim import Adam
from .signal import (
    LossConfig,
    SourceSet,
    mix,
    neg_thresholded_snr,
    zero_energy,
)

MODES = ("supervised", "unsupervised", "semi")


def graph_neg_thresholded_snr(reference, estimate, cfg):
    """Soft-thresholded negative SNR as a differentiable graph node.

    `reference` is a constant sample array; `estimate` is a (T,) tensor.
    The threshold term keeps the value within snr_max of the floor, so the
    hard clamp of the detached version is unnecessary here (its gradient
    would be zero at the floor anyway).
    """
    ref = np.asarray(reference, dtype=np.float64)
    ref_power = float(np.dot(ref, ref))
    if ref_power == 0.0:
        raise InputError("reference has zero energy; use the silent-slot loss")
    err = ad.square(estimate - ref.astype(estimate.data.dtype)).sum()
    scaled = err * (1.0 / ref_power) + cfg.tau
    return ad.log10(scaled) * 10.0


def graph_zero_source_loss(estimate, mixture, cfg):
    """Silent-slot loss: push an estimate toward zero, thresholded by the
    mixture power so it saturates snr_max below the mixture level."""
    x = np.asarray(mixture, dtype=np.float64)
    mix_power = float(np.dot(x, x))
    if mix_power == 0.0:
        raise InputError("threshold mixture has zero energy")
    err = ad.square(estimate).sum()
    return ad.log10(err + cfg.tau * mix_power) * 10.0


def _detached_sources(estimates, sample_rate):
    return SourceSet.from_array(
        np.asarray(estimates.data, dtype=np.float64), sample_rate
    )


def graph_pit_loss(references, estimates, cfg, mixture, use_zero_loss=True):
    """Best-permutation supervised loss on the graph.

    References are zero-padded to the estimate count. With `use_zero_loss`
    the silent slots are scored by the silent-slot loss (thresholded by
    `mixture`); without it they are dropped from both the assignment and
    the loss, leaving the unmatched outputs unconstrained.
    """
    num_ests = estimates.data.shape[0]
    rate = references.sample_rate
    ests_np = _detached_sources(estimates, rate)
    if use_zero_loss:
        padded = pad_references(references, num_ests)
        _, perm = pit_loss(
            padded, ests_np, cfg, zero_source_handling="zero_loss",
            mixture=mixture,
        )
        sigma = perm.permutation
        total = None
        for m, ref in enumerate(padded.sources):
            est = estimates[sigma[m]]
            if zero_energy(ref):
                term = graph_zero_source_loss(est, mixture.samples, cfg)
            else:
                term = graph_neg_thresholded_snr(ref.samples, est, cfg)
            total = term if total is None else total + term
        return total
    live = [ref for ref in references.sources if not zero_energy(ref)]
    if not live:
        raise InputError("no nonzero references to score")
    if len(live) > num_ests:
        raise InputError(
            f"{len(live)} references exceed {num_ests} estimates"
        )
    cost = np.empty((len(live), num_ests), dtype=np.float64)
    for n, ref in enumerate(live):
        for j in range(num_ests):
            cost[n, j] = neg_thresholded_snr(
                ref, ests_np.sources[j], cfg
            )
    rows, cols = linear_sum_assignment(cost)
    total = None
    for n, j in zip(rows, cols):
        term = graph_neg_thresholded_snr(
            live[int(n)].samples, estimates[int(j)], cfg
        )
        total = term if total is None else total + term
    return total


def graph_mixit_loss(mixtures, estimates, cfg, constraint=None):
    """Best-mixing-matrix unsupervised loss on the graph.

    The matrix search runs detached via the same enumeration as the scalar
    loss; the graph then sums each mixture's assigned estimates and scores
    the remix. Returns (loss tensor, chosen matrix).
    """
    rate = mixtures.sample_rate
    ests_np = _detached_sources(estimates, rate)
    _, matrix = mixit_loss(mixtures, ests_np, cfg, constraint=constraint)
    assignments = matrix.assignments
    total = None
    for i, x in enumerate(mixtures.sources):
        picked = [j for j, a in enumerate(assignments) if a == i]
        if picked:
            remix = estimates[picked[0]]
            for j in picked[1:]:
                remix = remix + estimates[j]
            term = graph_neg_thresholded_snr(x.samples, remix, cfg)
        else:
            # No estimate routed here: the remix is exactly zero and the
            # term is a constant with no gradient.
            ref_power = float(np.dot(x.samples, x.samples))
            term = ad.Tensor(
                np.asarray(
                    10.0 * math.log10(ref_power + cfg.tau * ref_power)
                    - 10.0 * math.log10(ref_power),
                    dtype=estimates.data.dtype,
                )
            )
        total = term if total is None else total + term
    return total, matrix


def graph_example_loss(example, estimates, cfg, supervised, use_zero_loss=True):
    """Loss for one batch item: PIT when scored supervised, MixIT otherwise."""
    if supervised:
        refs = example.references
        if refs is None:
            raise InputError("supervised scoring needs references")
        return graph_pit_loss(
            refs, estimates, cfg, mixture=mix(example.mixtures),
            use_zero_loss=use_zero_loss,
        )
    loss, _ = graph_mixit_loss(
        example.mixtures, estimates, cfg,
        constraint=getattr(example, "constraint", None),
    )
    return loss


@dataclasses.dataclass(frozen=True)
class TrainingConfig:
    """Resolved hyperparameters of one training run."""

    mode: str = "supervised"
    steps: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-3
    snr_max: float = 30.0
    supervised_fraction: float = None
    zero_probability: float = 0.0
    mixtures_per_mom: int = 2
    supervised_moms: bool = False
    use_zero_loss: bool = True
    seed: int = 0
    eval_every: int = 500
    log_every: int = 50

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise InputError("steps and batch_size must be positive")
        fraction = self.supervised_fraction
        if self.mode == "supervised":
            fraction = 1.0
        elif self.mode == "unsupervised":
            fraction = 0.0
        elif fraction is None:
            fraction = 0.5
        if not 0.0 <= fraction <= 1.0:
            raise InputError("supervised_fraction must be in [0, 1]")
        object.__setattr__(self, "supervised_fraction", float(fraction))
        if self.zero_probability > 0.0:
            # Zeroing is defined on supervised MoMs: one component mixture
            # and its references are silenced, degrading the example to a
            # single supervised mixture.
            object.__setattr__(self, "supervised_moms", True)

    @property
    def loss_config(self):
        return LossConfig(snr_max=self.snr_max)

    @property
    def batch_spec(self):
        return BatchSpec(
            supervised_fraction=self.supervised_fraction,
            zero_probability=self.zero_probability,
            mixtures_per_mom=self.mixtures_per_mom,
        )

    @property
    def num_supervised(self):
        return int(round(self.supervised_fraction * self.batch_size))


class MixedBatches:
    """Standard batch source: supervised items first, then unlabeled MoMs.

    Supervised slots draw single examples, or whole MoMs when
    `supervised_moms` is set (the only place zeroing can strike, since only
    references can absorb a silenced component). MixIT slots always build
    un-zeroed MoMs: a silent mixture cannot be a remix target.
    """

    def __init__(self, examples, config):
        self.config = config
        self.sampler = EpochSampler(examples, config.seed)
        self.rng = np.random.Generator(np.random.PCG64(config.seed + 1))
        if config.num_supervised > 0 and not all(
            ex.is_supervised for ex in examples
        ):
            raise InputError(
                "supervised scoring requested on a corpus without references"
            )

    def next_batch(self):
        config = self.config
        supervised_spec = config.batch_spec
        blind_spec = BatchSpec(
            supervised_fraction=config.supervised_fraction,
            zero_probability=0.0,
            mixtures_per_mom=config.mixtures_per_mom,
        )
        items = []
        for _ in range(config.num_supervised):
            if config.supervised_moms:
                items.append(
                    make_mom(self.sampler, supervised_spec, self.rng)
                )
            else:
                items.append(self.sampler.draw(1)[0])
        for _ in range(config.batch_size - config.num_supervised):
            items.append(make_mom(self.sampler, blind_spec, self.rng))
        return items


class EnhancementBatches:
    """Constrained MoM pairs from tagged foreground/background pools."""

    def __init__(self, speech_noise_pool, noise_pool, config,
                 num_estimates=3):
        self.config = config
        self.fg = speech_noise_pool
        self.bg = noise_pool
        self.num_estimates = num_estimates
        if config.num_supervised > 0:
            raise InputError("enhancement batches are unsupervised only")

    def next_batch(self):
        return [
            make_enhancement_pair(self.fg, self.bg, self.num_estimates)
            for _ in range(self.config.batch_size)
        ]


@dataclasses.dataclass
class TrainResult:
    history: list
    best_step: int
    best_metric: float
    best_path: pathlib.Path
    final_path: pathlib.Path


def validate(store, val_examples):
    """Mean MSi over a labeled validation set."""
    scores = []
    for ex in val_examples:
        if ex.references is None:
            raise InputError("validation examples need references")
        mixture = mix(ex.mixtures)
        estimates = separate(store, mixture)
        scores.append(msi(ex.references, estimates, mixture))
    return float(np.mean(scores))


def _batch_loss(store, batch, config):
    """Forward the whole batch and average per-item losses on the graph."""
    inputs = np.stack(
        [mix(item.mixtures).samples for item in batch], axis=0
    )
    estimates = forward(store, inputs)
    if not np.all(np.isfinite(estimates.data)):
        raise NumericError("model produced non-finite estimates; diverged")
    cfg = config.loss_config
    total = None
    for idx, item in enumerate(batch):
        term = graph_example_loss(
            item, estimates[idx], cfg,
            supervised=idx < config.num_supervised,
            use_zero_loss=config.use_zero_loss,
        )
        total = term if total is None else total + term
    return total * (1.0 / len(batch))


def train(store, batches, config, out_dir, val_examples=None):
    """Optimize the store in place; returns paths and the logged history.

    Logs one JSONL record per `log_every` steps (and at every validation)
    with the step, training loss, current validation metric, and wall time.
    The best-validation checkpoint and the final state are both saved.
    A non-finite loss aborts with a numeric error, never a silent skip.
    """
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optimizer = Adam(
        {name: t for name, t in store.items()}, lr=config.learning_rate
    )
    history = []
    best_metric = -math.inf
    best_step = -1
    best_path = out_dir / "best.ckpt"
    final_path = out_dir / "final.ckpt"
    log_path = out_dir / "train_log.jsonl"
    start = time.monotonic()

    def checkpoint_meta(step, metric):
        return {
            "step": step,
            "val_metric": metric,
            "mode": config.mode,
            "seed": config.seed,
        }

    with open(log_path, "w", encoding="utf-8") as log:
        for step in range(1, config.steps + 1):
            batch = batches.next_batch()
            loss = _batch_loss(store, batch, config)
            loss_db = float(loss.data)
            if not math.isfinite(loss_db):
                raise NumericError(
                    f"non-finite training loss {loss_db} at step {step}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            val_metric = None
            is_eval = (
                val_examples is not None
                and (step % config.eval_every == 0 or step == config.steps)
            )
            if is_eval:
                val_metric = validate(store, val_examples)
                if val_metric > best_metric:
                    best_metric = val_metric
                    best_step = step
                    save_store(
                        best_path, store, optimizer,
                        metadata=checkpoint_meta(step, val_metric),
                    )
            if step % config.log_every == 0 or is_eval or step == 1:
                record = {
                    "step": step,
                    "loss_db": loss_db,
                    "val_metric": val_metric,
                    "wall_s": round(time.monotonic() - start, 3),
                }
                log.write(json.dumps(record, sort_keys=True) + "\n")
                log.flush()
                history.append(record)

    save_store(
        final_path, store, optimizer,
        metadata=checkpoint_meta(config.steps, best_metric),
    )
    if best_step < 0:
        # No validation ran; the final state doubles as the best one.
        save_store(
            best_path, store, optimizer,
            metadata=checkpoint_meta(config.steps, None),
        )
        best_step = config.steps
        best_metric = math.nan
    return TrainResult(history, best_step, best_metric, best_path, final_path)
