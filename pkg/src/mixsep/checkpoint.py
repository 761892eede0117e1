"""Checkpoint file format.

Layout: an 8-byte magic, a 4-byte little-endian header length, a JSON
header, then raw little-endian float32 tensor data packed in directory
order. The header carries the format version, the model configuration, a
free-form metadata dict (training step, best validation metric, and the
like), and the tensor directory with name, shape, and byte offset of every
entry. Parameter tensors use their natural names; optimizer moments ride
along under an "adam." prefix.
"""

import dataclasses
import json
import struct

import numpy as np

from . import autodiff as ad
from .errors import DataError
from .model import ModelConfig, ParameterStore

MAGIC = b"MIXITCKP"
FORMAT_VERSION = 1


def save_checkpoint(path, config, tensors, metadata=None):
    """Write named arrays plus config to `path` in directory order."""
    directory = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        # asarray, not ascontiguousarray: the latter promotes 0-d scale
        # scalars to shape (1,), which must survive the roundtrip as ().
        data = np.asarray(arr, dtype="<f4")
        directory.append(
            {"name": name, "shape": list(data.shape), "offset": offset}
        )
        blob = data.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(config),
        "metadata": metadata or {},
        "tensors": directory,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint, returning (config, tensors dict, metadata dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a checkpoint file (bad magic)")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise DataError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<I", raw_len)
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: unreadable header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported format version "
                f"{header.get('format_version')!r}"
            )
        payload = fh.read()

    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise DataError(
                f"{path}: tensor {entry['name']!r} extends past end of file"
            )
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float32)

    cfg_dict = dict(header["config"])
    cfg_dict["skip_residual_edges"] = tuple(
        tuple(e) for e in cfg_dict.get("skip_residual_edges", ())
    )
    config = ModelConfig(**cfg_dict)
    return config, tensors, header.get("metadata", {})


def save_store(path, store, optimizer=None, metadata=None):
    """Checkpoint a ParameterStore, optionally with its Adam state."""
    tensors = dict(store.as_arrays())
    meta = dict(metadata or {})
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
        meta["adam_step"] = optimizer.step_count
    save_checkpoint(path, store.config, tensors, meta)


def load_store(path, dtype=np.float32):
    """Rebuild a ParameterStore (and any extra tensors) from a checkpoint.

    Returns (store, extras, metadata) where extras holds non-parameter
    entries such as optimizer moments, keyed by their stored names.
    """
    config, tensors, metadata = load_checkpoint(path)
    params = {}
    extras = {}
    for name, arr in tensors.items():
        if name.startswith("adam."):
            extras[name] = arr
        else:
            params[name] = ad.Tensor(arr.astype(dtype), requires_grad=True)
    store = ParameterStore(config, params)
    return store, extras, metadata
