"""Checkpoint format tests, including an independent binary parse."""

import json
import struct

import numpy as np
import pytest

from mixsep import autodiff as ad
from mixsep.checkpoint import (
    load_checkpoint,
    load_store,
    save_checkpoint,
    save_store,
)
from mixsep.errors import DataError
from mixsep.model import ModelConfig, init_parameters
from mixsep.optim import Adam

TINY = ModelConfig(
    num_outputs=2,
    basis_size=8,
    kernel_size=4,
    num_blocks=2,
    bottleneck_channels=8,
    conv_channels=16,
    skip_residual_edges=((0, 1),),
)


def test_store_roundtrip_is_bitwise(tmp_path):
    store = init_parameters(TINY, seed=1)
    path = tmp_path / "model.ckpt"
    save_store(path, store, metadata={"step": 7, "val_metric": 1.25})
    loaded, extras, meta = load_store(path)
    assert extras == {}
    assert meta == {"step": 7, "val_metric": 1.25}
    assert loaded.config == store.config
    assert loaded.names() == store.names()
    for name, tensor in store.items():
        # Shape asserted separately: array_equal broadcasts () against (1,).
        assert loaded[name].data.shape == tensor.data.shape
        np.testing.assert_array_equal(loaded[name].data, tensor.data)


def test_optimizer_state_resumes_identically(tmp_path):
    def fresh():
        store = init_parameters(TINY, seed=2)
        return store, Adam({n: t for n, t in store.items()}, lr=0.01)

    def fake_grads(store, salt):
        rng = np.random.Generator(np.random.PCG64(salt))
        for name in sorted(store.names()):
            store[name].grad = rng.standard_normal(
                store[name].data.shape
            ).astype(np.float32)

    store_a, opt_a = fresh()
    for step in range(6):
        fake_grads(store_a, step)
        opt_a.step()

    store_b, opt_b = fresh()
    for step in range(3):
        fake_grads(store_b, step)
        opt_b.step()
    path = tmp_path / "half.ckpt"
    save_store(path, store_b, optimizer=opt_b)
    restored, extras, meta = load_store(path)
    opt_c = Adam({n: t for n, t in restored.items()}, lr=0.01)
    opt_c.load_state_tensors(extras, meta["adam_step"])
    assert opt_c.step_count == 3
    for step in range(3, 6):
        fake_grads(restored, step)
        opt_c.step()

    for name, tensor in store_a.items():
        np.testing.assert_array_equal(restored[name].data, tensor.data)


def test_binary_layout_parses_without_the_library(tmp_path):
    arrays = {
        "alpha": np.arange(6, dtype=np.float32).reshape(2, 3),
        "beta": np.float32(2.5).reshape(()),
    }
    path = tmp_path / "layout.ckpt"
    save_checkpoint(path, TINY, arrays, metadata={"note": "x"})

    blob = path.read_bytes()
    assert blob[:8] == b"MIXITCKP"
    (header_len,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    assert header["format_version"] == 1
    assert header["metadata"] == {"note": "x"}
    assert header["config"]["basis_size"] == TINY.basis_size

    data = blob[12 + header_len :]
    offsets = [e["offset"] for e in header["tensors"]]
    assert offsets == sorted(offsets)
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = 1
        for dim in shape:
            count *= dim
        start = entry["offset"]
        values = struct.unpack(f"<{count}f", data[start : start + 4 * count])
        want = arrays[entry["name"]].reshape(-1)
        np.testing.assert_array_equal(np.array(values, np.float32), want)
    total = sum(
        4 * int(np.prod(e["shape"])) if e["shape"] else 4
        for e in header["tensors"]
    )
    assert len(data) == total


def test_scalar_tensor_roundtrip(tmp_path):
    path = tmp_path / "scalar.ckpt"
    save_checkpoint(path, TINY, {"s": np.float32(0.81).reshape(())})
    _, tensors, _ = load_checkpoint(path)
    assert tensors["s"].shape == ()
    assert tensors["s"] == np.float32(0.81)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "trunc.ckpt"
    path.write_bytes(b"MIXITCKP\x10")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_corrupt_header_rejected(tmp_path):
    garbage = b"{]not json"
    path = tmp_path / "corrupt.ckpt"
    path.write_bytes(b"MIXITCKP" + struct.pack("<I", len(garbage)) + garbage)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_unknown_version_rejected(tmp_path):
    store = init_parameters(TINY, seed=0)
    path = tmp_path / "vers.ckpt"
    save_store(path, store)
    blob = bytearray(path.read_bytes())
    (header_len,) = struct.unpack("<I", bytes(blob[8:12]))
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    header["format_version"] = 99
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    rewritten = (
        bytes(blob[:8])
        + struct.pack("<I", len(encoded))
        + encoded
        + bytes(blob[12 + header_len :])
    )
    path.write_bytes(rewritten)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    store = init_parameters(TINY, seed=0)
    path = tmp_path / "short.ckpt"
    save_store(path, store)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 17])
    with pytest.raises(DataError):
        load_checkpoint(path)
