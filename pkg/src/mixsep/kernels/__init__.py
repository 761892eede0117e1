"""Hot array kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``mixsep.kernels._accel``, built from Cython) is
preferred when it imported cleanly. Set ``MIXSEP_KERNELS=numpy`` or
``MIXSEP_KERNELS=cython`` to force a backend; ``auto`` (the default) picks
the extension when available. ``BACKEND`` records which one is active.

Both backends implement the same five functions with identical semantics:

``frame(x, length, hop)``
    Slice ``(B, T)`` signals into ``(B, F, length)`` windows.
``overlap_add(frames, hop, out_len)``
    Inverse of ``frame`` up to window summation; requires ``length % hop == 0``.
``depthwise_forward(x, w, dilation)``
    Per-channel dilated convolution of ``(B, F, C)`` with taps ``(k, C)``,
    zero padded so the frame count is preserved.
``depthwise_grad_input(dy, w, dilation)``
    Gradient of ``depthwise_forward`` with respect to ``x``.
``depthwise_grad_weight(dy, x, dilation, k)``
    Gradient of ``depthwise_forward`` with respect to ``w``.
"""

import os

from . import _numpy

_choice = os.environ.get("MIXSEP_KERNELS", "auto").lower()
if _choice not in ("auto", "numpy", "cython"):
    raise ValueError(
        f"MIXSEP_KERNELS must be auto, numpy, or cython, got {_choice!r}"
    )

_impl = None
if _choice in ("auto", "cython"):
    try:
        from . import _accel as _impl
    except ImportError:
        if _choice == "cython":
            raise ImportError(
                "MIXSEP_KERNELS=cython but the compiled extension is not "
                "available; reinstall with a working C toolchain or use "
                "MIXSEP_KERNELS=numpy"
            )

if _impl is None:
    _impl = _numpy
    BACKEND = "numpy"
else:
    BACKEND = "cython"

frame = _impl.frame
overlap_add = _impl.overlap_add
depthwise_forward = _impl.depthwise_forward
depthwise_grad_input = _impl.depthwise_grad_input
depthwise_grad_weight = _impl.depthwise_grad_weight

__all__ = [
    "BACKEND",
    "frame",
    "overlap_add",
    "depthwise_forward",
    "depthwise_grad_input",
    "depthwise_grad_weight",
]
