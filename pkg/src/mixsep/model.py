"""Mask-based time-domain separation network.

The waveform is framed into overlapping windows and projected onto a learned
analysis basis; a stack of residual blocks with dilated depthwise
convolutions turns the coefficients into M sigmoid masks; masked
coefficients are resynthesized with a learned synthesis basis and
overlap-add; a final mixture-consistency correction makes the M outputs sum
exactly to the input.

Residual blocks follow the improved time-domain convolutional network
recipe: instance normalization instead of global layer norm, extra
"skip-residual" paths that add a dense transform of an earlier block's
output into a later block's input, and a scalar scale after each dense
stage, with the post-block scale of block i initialized to 0.9^i so early
blocks dominate at the start of training.
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from .errors import InputError
from .signal import SourceSet


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    `skip_residual_edges` lists (from_block, to_block) pairs; the implicit
    previous-block connection is always present and not listed. Dilation of
    block i is 2^(i mod dilation_period).
    """

    num_outputs: int = 4
    basis_size: int = 64
    kernel_size: int = 16
    num_blocks: int = 8
    bottleneck_channels: int = 64
    conv_channels: int = 128
    depthwise_kernel: int = 3
    dilation_period: int = 4
    skip_residual_edges: tuple = ((0, 4),)
    sample_rate: int = 8000

    def __post_init__(self):
        positive = (
            self.num_outputs, self.basis_size, self.kernel_size,
            self.num_blocks, self.bottleneck_channels, self.conv_channels,
            self.depthwise_kernel, self.dilation_period, self.sample_rate,
        )
        if any(v < 1 for v in positive):
            raise InputError("all model dimensions must be positive")
        if self.kernel_size % 2 != 0:
            raise InputError(
                f"kernel_size must be even (stride is half), got {self.kernel_size}"
            )
        if self.depthwise_kernel % 2 != 1:
            raise InputError("depthwise kernel must be odd for centered taps")
        edges = tuple(tuple(e) for e in self.skip_residual_edges)
        for a, b in edges:
            if not (0 <= a < b < self.num_blocks):
                raise InputError(
                    f"skip edge {(a, b)} is not strictly forward within "
                    f"{self.num_blocks} blocks"
                )
        object.__setattr__(self, "skip_residual_edges", edges)

    @property
    def hop(self):
        return self.kernel_size // 2

    def dilation(self, block):
        return 2 ** (block % self.dilation_period)


def desk_config(num_outputs=4):
    """Default configuration sized to train on a single CPU core."""
    return ModelConfig(num_outputs=num_outputs)


def reference_config(sample_rate=16000, num_outputs=4):
    """The full-scale configuration from the original recipe."""
    return ModelConfig(
        num_outputs=num_outputs,
        basis_size=256,
        kernel_size=40 if sample_rate == 16000 else 20,
        num_blocks=32,
        bottleneck_channels=256,
        conv_channels=512,
        depthwise_kernel=3,
        dilation_period=8,
        skip_residual_edges=(
            (0, 8), (0, 16), (0, 24), (8, 16), (8, 24), (16, 24),
        ),
        sample_rate=sample_rate,
    )


@dataclasses.dataclass
class ParameterStore:
    """Named parameter tensors plus the config that shaped them."""

    config: ModelConfig
    tensors: dict

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    def num_parameters(self):
        return sum(t.data.size for t in self.tensors.values())

    def as_arrays(self):
        return {name: t.data for name, t in self.tensors.items()}

    def astype(self, dtype):
        """Copy of the store with every tensor cast to `dtype`."""
        cast = {
            name: ad.Tensor(t.data.astype(dtype), requires_grad=True)
            for name, t in self.tensors.items()
        }
        return ParameterStore(self.config, cast)


def init_parameters(config, seed, dtype=np.float32):
    """Deterministic parameter store for `config` from an integer seed.

    Weights draw from uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)); biases and
    normalization shifts start at zero, normalization scales at one, PReLU
    slopes at 0.25, and the post-block scale of block i at 0.9^i.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors = {}

    def weight(name, shape, fan_in):
        bound = np.sqrt(1.0 / fan_in)
        tensors[name] = ad.Tensor(
            rng.uniform(-bound, bound, size=shape).astype(dtype),
            requires_grad=True,
        )

    def const(name, value, shape=()):
        tensors[name] = ad.Tensor(
            np.full(shape, value, dtype=dtype), requires_grad=True
        )

    N, L = config.basis_size, config.kernel_size
    B, C = config.bottleneck_channels, config.conv_channels
    k, M = config.depthwise_kernel, config.num_outputs

    weight("encoder.basis", (L, N), fan_in=L)
    weight("initial_dense.weight", (N, B), fan_in=N)
    const("initial_dense.bias", 0.0, (B,))
    for i in range(config.num_blocks):
        weight(f"block{i}.dense1.weight", (B, C), fan_in=B)
        const(f"block{i}.dense1.bias", 0.0, (C,))
        const(f"block{i}.scale1", 1.0)
        const(f"block{i}.prelu1", 0.25, (C,))
        const(f"block{i}.norm1.gamma", 1.0, (C,))
        const(f"block{i}.norm1.beta", 0.0, (C,))
        weight(f"block{i}.depthwise", (k, C), fan_in=k)
        const(f"block{i}.prelu2", 0.25, (C,))
        const(f"block{i}.norm2.gamma", 1.0, (C,))
        const(f"block{i}.norm2.beta", 0.0, (C,))
        weight(f"block{i}.dense2.weight", (C, B), fan_in=C)
        const(f"block{i}.dense2.bias", 0.0, (B,))
        const(f"block{i}.scale2", 0.9**i)
    for a, b in config.skip_residual_edges:
        weight(f"skip.{a}to{b}.weight", (B, B), fan_in=B)
        const(f"skip.{a}to{b}.bias", 0.0, (B,))
    weight("final_dense.weight", (B, B), fan_in=B)
    const("final_dense.bias", 0.0, (B,))
    weight("mask_dense.weight", (B, M * N), fan_in=B)
    const("mask_dense.bias", 0.0, (M * N,))
    weight("decoder.basis", (N, L), fan_in=N)

    return ParameterStore(config, tensors)


def _dense(x, store, prefix):
    return ad.matmul(x, store[f"{prefix}.weight"]) + store[f"{prefix}.bias"]


def pad_length(config, length):
    """Padded length: a whole number of hops and at least two frames."""
    if length < config.kernel_size:
        raise InputError(
            f"input length {length} shorter than analysis window "
            f"{config.kernel_size}"
        )
    hop = config.hop
    padded = length + (-(length - config.kernel_size)) % hop
    return max(padded, config.kernel_size + hop)


def forward(store, mixtures, trace=None):
    """Separate a (batch, T) array into a (batch, M, T) estimate tensor.

    The input is a constant: gradients flow to parameters only. When `trace`
    is a list, structural events (dilations, skip edges) are appended to it
    so tests can assert the wiring of the built graph.
    """
    cfg = store.config
    x = np.atleast_2d(np.asarray(mixtures))
    if x.ndim != 2:
        raise InputError(f"expected (batch, T) input, got {x.shape}")
    batch, length = x.shape
    dtype = store["encoder.basis"].data.dtype
    padded = pad_length(cfg, length)
    if padded > length:
        x = np.pad(x, ((0, 0), (0, padded - length)), mode="reflect")
    x = ad.Tensor(np.ascontiguousarray(x.astype(dtype)))

    coeffs = ad.conv1d_encode(x, store["encoder.basis"], cfg.hop)
    h = _dense(ad.relu(coeffs), store, "initial_dense")

    outputs = {}
    prev = h
    for i in range(cfg.num_blocks):
        inp = prev
        for a, b in cfg.skip_residual_edges:
            if b == i:
                inp = inp + _dense(outputs[a], store, f"skip.{a}to{b}")
                if trace is not None:
                    trace.append(("skip", a, b))
        d = _dense(inp, store, f"block{i}.dense1") * store[f"block{i}.scale1"]
        d = ad.prelu(d, store[f"block{i}.prelu1"])
        d = ad.instance_norm(
            d, store[f"block{i}.norm1.gamma"], store[f"block{i}.norm1.beta"]
        )
        dilation = cfg.dilation(i)
        if trace is not None:
            trace.append(("depthwise", i, dilation))
        d = ad.depthwise(d, store[f"block{i}.depthwise"], dilation)
        d = ad.prelu(d, store[f"block{i}.prelu2"])
        d = ad.instance_norm(
            d, store[f"block{i}.norm2.gamma"], store[f"block{i}.norm2.beta"]
        )
        d = _dense(d, store, f"block{i}.dense2") * store[f"block{i}.scale2"]
        prev = inp + d
        outputs[i] = prev

    final = _dense(prev, store, "final_dense")
    masks = ad.sigmoid(_dense(final, store, "mask_dense"))
    F = masks.data.shape[1]
    masks = masks.reshape(batch, F, cfg.num_outputs, cfg.basis_size)
    masked = masks * coeffs.reshape(batch, F, 1, cfg.basis_size)

    stacked = ad.moveaxis(masked, 2, 1).reshape(
        batch * cfg.num_outputs, F, cfg.basis_size
    )
    decoded = ad.conv1d_decode(stacked, store["decoder.basis"], cfg.hop, padded)
    raw = decoded.reshape(batch, cfg.num_outputs, padded)[:, :, :length]

    # In-graph mixture consistency: spread the reconstruction residual
    # evenly so the M outputs sum exactly to the input.
    x_orig = ad.Tensor(np.ascontiguousarray(mixtures, dtype=dtype).reshape(
        batch, 1, length
    ))
    residual = x_orig - raw.sum(axis=1, keepdims=True)
    return raw + residual * (1.0 / cfg.num_outputs)


def separate(store, mixture):
    """Split one Waveform into a SourceSet of the model's M outputs."""
    if mixture.sample_rate != store.config.sample_rate:
        raise InputError(
            f"mixture rate {mixture.sample_rate} != model rate "
            f"{store.config.sample_rate}"
        )
    with ad.no_grad():
        est = forward(store, mixture.samples[None, :])
    return SourceSet.from_array(est.data[0], mixture.sample_rate)


def normalize_instance(activations, gamma, beta):
    """Frame-axis normalization with trainable per-channel scale and shift."""
    return ad.instance_norm(activations, gamma, beta)
