"""Dense tensor unfolding, folding and mode products.

Tensors are plain float64 ``numpy.ndarray`` objects in C (row-major) order.
The mode-``k`` unfolding moves axis ``k`` to the front and flattens the
remaining axes in their original order with the rightmost index varying
fastest, i.e. ``np.moveaxis(t, k, 0).reshape(d_k, -1)``.
"""

import numpy as np

from .errors import ShapeError


def as_tensor(t):
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim < 1:
        raise ShapeError("tensor must have order >= 1")
    if 0 in arr.shape:
        raise ShapeError(f"every extent must be >= 1, got shape {arr.shape}")
    return arr


def _check_mode(mode, order):
    if not isinstance(mode, (int, np.integer)) or not 0 <= mode < order:
        raise IndexError(f"mode {mode} out of range for order-{order} tensor")


def unfold(t, mode):
    """Mode-``mode`` unfolding: shape ``(d_mode, prod(other extents))``."""
    t = as_tensor(t)
    _check_mode(mode, t.ndim)
    return np.ascontiguousarray(np.moveaxis(t, mode, 0)).reshape(t.shape[mode], -1)


def fold(m, mode, shape):
    """Inverse of :func:`unfold` for a tensor of the given ``shape``."""
    shape = tuple(int(d) for d in shape)
    m = np.asarray(m, dtype=np.float64)
    _check_mode(mode, len(shape))
    rest = shape[:mode] + shape[mode + 1:]
    if m.ndim != 2 or m.shape[0] != shape[mode] or m.shape[1] != int(np.prod(rest, dtype=np.int64)):
        raise ShapeError(f"matrix of shape {m.shape} cannot fold into {shape} at mode {mode}")
    return np.moveaxis(m.reshape((shape[mode],) + rest), 0, mode).copy()


def mode_product(t, m, mode):
    """Multiply tensor ``t`` by matrix ``m`` along ``mode``.

    The result has extent ``m.shape[0]`` at ``mode`` and equals
    ``fold(m @ unfold(t, mode), mode, new_shape)``.
    """
    t = as_tensor(t)
    m = np.asarray(m, dtype=np.float64)
    _check_mode(mode, t.ndim)
    if m.ndim != 2 or m.shape[1] != t.shape[mode]:
        raise ShapeError(
            f"matrix of shape {m.shape} does not match extent {t.shape[mode]} at mode {mode}"
        )
    new_shape = t.shape[:mode] + (m.shape[0],) + t.shape[mode + 1:]
    return fold(m @ unfold(t, mode), mode, new_shape)


def multi_mode_product(t, matrices, transpose=False):
    """Apply ``matrices[k]`` (or its transpose) along every mode ``k`` in turn."""
    t = as_tensor(t)
    if len(matrices) != t.ndim:
        raise ShapeError(f"need {t.ndim} matrices, got {len(matrices)}")
    for k, m in enumerate(matrices):
        t = mode_product(t, m.T if transpose else m, k)
    return t
