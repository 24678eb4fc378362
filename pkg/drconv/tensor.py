"""Rank-4 tensor primitives.

Every array in drconv is a dense ``numpy`` array laid out ``[n][h][w][c]``
(channels innermost) in 64-bit floating point. The helpers below enforce that
discipline: shapes are compared structurally and nothing ever broadcasts.
"""
import contextvars
from contextlib import contextmanager
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import NonFiniteError, ShapeError, SizeError

DTYPE = np.float64

_MAX_ELEMENTS = np.iinfo(np.intp).max // np.dtype(DTYPE).itemsize

_multiply_counter = contextvars.ContextVar("multiply_counter", default=None)


class MultiplyCounter:
    """Running total of scalar multiplies issued through :func:`matmul`."""

    def __init__(self):
        self.total = 0


@contextmanager
def count_multiplies():
    """Count the multiplies performed by forward-pass matrix products.

    >>> with count_multiplies() as counter:
    ...     _ = matmul(np.ones((2, 3)), np.ones((3, 4)))
    >>> counter.total
    24
    """
    counter = MultiplyCounter()
    token = _multiply_counter.set(counter)
    try:
        yield counter
    finally:
        _multiply_counter.reset(token)


def matmul(a, b):
    """``a @ b`` for 2-d operands, reported to an active multiply counter."""
    counter = _multiply_counter.get()
    if counter is not None:
        counter.total += a.shape[0] * a.shape[1] * b.shape[1]
    return a @ b


class Shape4(NamedTuple):
    n: int
    h: int
    w: int
    c: int

    @property
    def size(self):
        return self.n * self.h * self.w * self.c


def _check_shape(shape):
    shape = Shape4(*(int(d) for d in shape))
    if any(d < 1 for d in shape):
        raise SizeError(f"all dimensions must be >= 1, got {tuple(shape)}")
    if shape.size > _MAX_ELEMENTS:
        raise SizeError(f"shape {tuple(shape)} overflows the addressable size")
    return shape


def shape_of(a):
    return Shape4(*a.shape)


def as_tensor4(a, name="tensor"):
    """Return ``a`` as a validated float64 rank-4 array."""
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 [n, h, w, c], got shape {a.shape}")
    _check_shape(a.shape)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} holds non-finite values")
    return a


def require_same_shape(a, b, what="operands"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def zeros(shape):
    shape = _check_shape(shape)
    try:
        return np.zeros(tuple(shape), dtype=DTYPE)
    except MemoryError as exc:
        raise SizeError(f"cannot allocate shape {tuple(shape)}") from exc


def sigmoid(a):
    # split by sign so exp never overflows
    a = np.asarray(a, dtype=DTYPE)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def elementwise(op, a, b: Optional[Union[np.ndarray, float]] = None):
    """Apply ``add``, ``sub``, ``mul``, ``sigmoid`` or ``scale``.

    Binary ops take a second tensor of identical shape; ``scale`` and ``mul``
    also accept a Python scalar for ``b``.
    """
    a = as_tensor4(a)
    if op == "sigmoid":
        return sigmoid(a)
    if b is None:
        raise ShapeError(f"{op!r} needs a second operand")
    if np.isscalar(b):
        if op not in ("scale", "mul"):
            raise ShapeError(f"{op!r} does not accept a scalar operand")
        return a * DTYPE(b)
    if op == "scale":
        raise ShapeError("'scale' takes a scalar operand")
    b = as_tensor4(b)
    require_same_shape(a, b)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def argmax_c(a):
    """Per-pixel channel argmax as an ``[n, h, w]`` int64 map.

    Ties resolve to the smallest channel index.
    """
    return np.argmax(a, axis=3).astype(np.int64)


def reduce(op, a, axis="channel"):
    """Reduce over channels or over the spatial plane.

    ``sum``/``mean`` keep rank 4 (the reduced axes become size 1);
    ``argmax_c`` returns an index map and only reduces channels.
    """
    a = as_tensor4(a)
    if op == "argmax_c":
        if axis != "channel":
            raise ShapeError("argmax_c reduces over channels only")
        return argmax_c(a)
    axes = {"channel": (3,), "spatial": (1, 2)}.get(axis)
    if axes is None:
        raise ValueError(f"unknown axis {axis!r}")
    if op == "sum":
        return a.sum(axis=axes, keepdims=True)
    if op == "mean":
        return a.mean(axis=axes, keepdims=True)
    raise ValueError(f"unknown reduction {op!r}")


def pad_zero(a, pad_h, pad_w):
    if pad_h < 0 or pad_w < 0:
        raise SizeError(f"padding must be >= 0, got ({pad_h}, {pad_w})")
    return np.pad(a, ((0, 0), (pad_h, pad_h), (pad_w, pad_w), (0, 0)), mode="constant")


def pad_circular(a, pad_h, pad_w):
    if pad_h < 0 or pad_w < 0:
        raise SizeError(f"padding must be >= 0, got ({pad_h}, {pad_w})")
    return np.pad(a, ((0, 0), (pad_h, pad_h), (pad_w, pad_w), (0, 0)), mode="wrap")


def circular_shift(a, dy, dx):
    """Rotate spatial indices: ``out[:, (i + dy) % h, (j + dx) % w] = a[:, i, j]``.

    Works on rank-4 tensors and on ``[n, h, w]`` index maps alike.
    """
    return np.roll(a, shift=(dy, dx), axis=(1, 2))
