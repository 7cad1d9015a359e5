"""Kernel backend selection.

Three modes, chosen at import via SATFP_KERNELS:
  - "numpy":  pure NumPy/BLAS implementations (always available);
  - "cython": the compiled extension for every call (raises if not built);
  - unset:    "hybrid" when the extension is built, else "numpy". Hybrid
    routes each convolution by shape: direct compiled loops win on
    small-channel or long-signal layers, BLAS (im2col + GEMM) wins on
    channel-heavy short layers. Pooling always uses the extension.

Run benchmarks/bench_kernels.py to see the per-shape numbers on your machine.
"""

import os

from . import numpy_backend

try:
    from . import _cykernels
except ImportError:
    _cykernels = None

_forced = os.environ.get("SATFP_KERNELS", "").lower()
if _forced not in ("", "numpy", "cython"):
    raise ImportError(f"SATFP_KERNELS must be 'numpy' or 'cython', got {_forced!r}")
if _forced == "cython" and _cykernels is None:
    raise ImportError("SATFP_KERNELS=cython but the compiled extension is not installed")

if _forced == "numpy" or _cykernels is None:
    BACKEND = "numpy"
elif _forced == "cython":
    BACKEND = "cython"
else:
    BACKEND = "hybrid"


def _direct_conv_wins(c_in: int, c_out: int, length: int) -> bool:
    # Measured crossover: direct loops beat im2col+GEMM when the channel
    # product is small or the length axis is long enough to vectorize over.
    return c_in * c_out <= 64 or length >= 256


if BACKEND == "numpy":
    conv1d_forward = numpy_backend.conv1d_forward
    conv1d_backward_input = numpy_backend.conv1d_backward_input
    conv1d_backward_weights = numpy_backend.conv1d_backward_weights
    maxpool1d_forward = numpy_backend.maxpool1d_forward
    maxpool1d_backward = numpy_backend.maxpool1d_backward
elif BACKEND == "cython":
    conv1d_forward = _cykernels.conv1d_forward
    conv1d_backward_input = _cykernels.conv1d_backward_input
    conv1d_backward_weights = _cykernels.conv1d_backward_weights
    maxpool1d_forward = _cykernels.maxpool1d_forward
    maxpool1d_backward = _cykernels.maxpool1d_backward
else:

    def conv1d_forward(x, w, b):
        if _direct_conv_wins(w.shape[1], w.shape[0], x.shape[2]):
            return _cykernels.conv1d_forward(x, w, b)
        return numpy_backend.conv1d_forward(x, w, b)

    def conv1d_backward_input(grad, w):
        if _direct_conv_wins(w.shape[1], w.shape[0], grad.shape[2]):
            return _cykernels.conv1d_backward_input(grad, w)
        return numpy_backend.conv1d_backward_input(grad, w)

    def conv1d_backward_weights(grad, x, k):
        if _direct_conv_wins(x.shape[1], grad.shape[1], x.shape[2]):
            return _cykernels.conv1d_backward_weights(grad, x, k)
        return numpy_backend.conv1d_backward_weights(grad, x, k)

    maxpool1d_forward = _cykernels.maxpool1d_forward
    maxpool1d_backward = _cykernels.maxpool1d_backward


def available_backends():
    """Name -> module map of importable kernel backends."""
    out = {"numpy": numpy_backend}
    if _cykernels is not None:
        out["cython"] = _cykernels
    return out
