"""NumPy reference implementations of the hot training kernels.

Shapes follow the conv-net convention: activations (N, C, L), conv weights
(C_out, C_in, K) with odd K and same padding, pooling by an integer factor
that divides L.
"""

from __future__ import annotations

import numpy as np


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    return np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (N, Ci, L, K)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    win = _windows(x, w.shape[2])
    y = np.tensordot(win, w, axes=[(1, 3), (1, 2)])  # (N, L, Co)
    y += b
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def conv1d_backward_input(grad: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Same-padding transpose of a stride-1 conv: conv with the in/out-swapped,
    # tap-reversed kernel.
    w_t = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))
    zero_bias = np.zeros(w_t.shape[0], dtype=grad.dtype)
    return conv1d_forward(grad, w_t, zero_bias)


def conv1d_backward_weights(grad: np.ndarray, x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    win = _windows(x, k)
    dw = np.tensordot(grad, win, axes=[(0, 2), (0, 2)])  # (Co, Ci, K)
    db = grad.sum(axis=(0, 2))
    return np.ascontiguousarray(dw), db


def maxpool1d_forward(x: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    n, c, length = x.shape
    r = x.reshape(n, c, length // p, p)
    idx = r.argmax(axis=3)
    y = np.take_along_axis(r, idx[..., None], axis=3)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.int64)


def maxpool1d_backward(grad: np.ndarray, idx: np.ndarray, p: int) -> np.ndarray:
    n, c, lout = grad.shape
    dx = np.zeros((n, c, lout, p), dtype=grad.dtype)
    np.put_along_axis(dx, idx[..., None], grad[..., None], axis=3)
    return dx.reshape(n, c, lout * p)
