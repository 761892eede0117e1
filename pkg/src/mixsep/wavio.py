"""Mono WAV file reading and writing.

Supports PCM 16-bit and IEEE float32, the two encodings the toolkit emits
and consumes. Samples are exchanged as float64 in [-1, 1] nominal range;
PCM data is scaled by 2^15 on both paths.
"""

import numpy as np
from scipy.io import wavfile

from .errors import DataError
from .signal import Waveform

_PCM_SCALE = 32768.0


def read_wav(path, expect_rate=None):
    """Load a mono WAV file as a Waveform."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, FileNotFoundError, OSError) as exc:
        raise DataError(f"{path}: cannot read WAV: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    elif data.dtype == np.float64:
        samples = data
    else:
        raise DataError(
            f"{path}: unsupported sample format {data.dtype}; use PCM16 or "
            "float32"
        )
    if expect_rate is not None and rate != expect_rate:
        raise DataError(
            f"{path}: sample rate {rate} does not match expected {expect_rate}"
        )
    return Waveform(samples, int(rate))


def write_wav(path, waveform, encoding="float32"):
    """Write a Waveform to disk as mono PCM16 or float32."""
    if encoding == "float32":
        wavfile.write(path, waveform.sample_rate,
                      waveform.samples.astype(np.float32))
    elif encoding == "pcm16":
        clipped = np.clip(waveform.samples, -1.0, 32767.0 / _PCM_SCALE)
        wavfile.write(path, waveform.sample_rate,
                      np.round(clipped * _PCM_SCALE).astype(np.int16))
    else:
        raise DataError(f"unsupported encoding {encoding!r}")
