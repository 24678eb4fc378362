"""Reference convolutions: standard, local (one filter per pixel) and
region-shared (one filter per guided-mask region).

All three share the same tap arithmetic. The input is unfolded into columns
ordered ``(i, j, c)`` so that a filter ``W[o, c, i, j]`` becomes one row of a
``[out_channels, k*k*in_channels]`` matrix, and every output pixel is a dot
product between its column and the row of the filter it uses. Each sample is
projected separately, so results never depend on what else is in the batch.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import param

from .errors import ConfigError, ContextError, MaskIndexError, ShapeError, SizeError
from .tensor import DTYPE, as_tensor4, matmul, pad_circular, pad_zero

PADDING_MODES = ["same_zero", "valid", "circular"]


class ConvSpec(param.Parameterized):
    """Geometry of a square, odd-sized convolution."""

    k = param.Integer(default=1, bounds=(1, None), doc="Kernel size (odd).")

    stride = param.Integer(default=1, bounds=(1, None))

    padding = param.ObjectSelector(default="same_zero", objects=PADDING_MODES)

    in_channels = param.Integer(default=1, bounds=(1, None))

    out_channels = param.Integer(default=1, bounds=(1, None))

    _fields = ("k", "stride", "padding", "in_channels", "out_channels")

    def __init__(self, **params):
        try:
            super().__init__(**params)
        except ValueError as exc:
            raise ConfigError("conv", str(exc)) from exc
        if self.k % 2 == 0:
            raise ConfigError("k", f"kernel size must be odd, got {self.k}")

    def values(self):
        return {f: getattr(self, f) for f in self._fields}

    def replace(self, **changes):
        return type(self)(**{**self.values(), **changes})

    @property
    def pad(self):
        return 0 if self.padding == "valid" else self.k // 2

    def output_size(self, h, w):
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        if oh < 1 or ow < 1:
            raise SizeError(f"{h}x{w} input is smaller than the {self.k}x{self.k} kernel")
        return oh, ow

    def __repr__(self):
        args = ", ".join(f"{f}={getattr(self, f)!r}" for f in self._fields)
        return f"ConvSpec({args})"


@dataclass
class StandardFilter:
    """Weights ``[out_channels, in_channels, k, k]`` and an optional bias."""

    weights: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"filter must be [O, C, k, k], got {self.weights.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=DTYPE)
            if self.bias.shape != (self.out_channels,):
                raise ShapeError(f"bias must be [{self.out_channels}], got {self.bias.shape}")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def k(self):
        return self.weights.shape[2]


@dataclass
class LocalFilterField:
    """One unshared filter per output pixel: ``[h, w, O, C, k, k]``."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if self.weights.ndim != 6:
            raise ShapeError(f"filter field must be [h, w, O, C, k, k], got {self.weights.shape}")


@dataclass
class FilterBank:
    """Per-sample region filters ``[n, m, O, C, k, k]``; entry ``t`` serves region ``t``."""

    filters: np.ndarray

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=DTYPE)
        if self.filters.ndim != 6:
            raise ShapeError(f"filter bank must be [n, m, O, C, k, k], got {self.filters.shape}")

    @classmethod
    def shared(cls, filters, n):
        """Stack the same ``[m, O, C, k, k]`` filters for ``n`` samples."""
        filters = np.asarray(filters, dtype=DTYPE)
        return cls(np.repeat(filters[None], n, axis=0))

    @property
    def n(self):
        return self.filters.shape[0]

    @property
    def m(self):
        return self.filters.shape[1]


class Context:
    """Forward-pass cache consumed by exactly one backward call."""

    _consumed = False

    def consume(self):
        if self._consumed:
            raise ContextError(f"{type(self).__name__} was already used by a backward pass")
        self._consumed = True

    def check_grad(self, dy):
        dy = np.asarray(dy, dtype=DTYPE)
        if dy.shape != self.out_shape:
            raise ContextError(f"output gradient {dy.shape} does not match forward output {self.out_shape}")
        return dy


def weight_matrix(w):
    """``[O, C, k, k]`` filter(s) to ``[O, k*k*C]`` rows in column order."""
    o = w.shape[-4]
    return np.moveaxis(w, -3, -1).reshape(w.shape[:-4] + (o, -1))


def from_weight_matrix(wmat, in_channels, k):
    o = wmat.shape[-2]
    w = wmat.reshape(wmat.shape[:-2] + (o, k, k, in_channels))
    return np.moveaxis(w, -1, -3)


def _padded(x, spec):
    p = spec.pad
    if p == 0:
        return x
    if spec.padding == "circular":
        return pad_circular(x, p, p)
    return pad_zero(x, p, p)


def im2col(x, spec):
    """Unfold ``x`` into ``[n, oh, ow, k*k*C]`` columns ordered ``(i, j, c)``."""
    n, h, w, c = x.shape
    oh, ow = spec.output_size(h, w)
    k, s = spec.k, spec.stride
    xp = _padded(x, spec)
    cols = np.empty((n, oh, ow, k, k, c), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s, :]
    return cols.reshape(n, oh, ow, k * k * c)


def col2im(dcols, x_shape, spec):
    """Adjoint of :func:`im2col`: scatter-add column gradients back onto the input."""
    n, h, w, c = x_shape
    k, s, p = spec.k, spec.stride, spec.pad
    oh, ow = dcols.shape[1:3]
    d = dcols.reshape(n, oh, ow, k, k, c)
    dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s, :] += d[:, :, :, i, j, :]
    if p == 0:
        return dxp
    if spec.padding != "circular":
        return dxp[:, p:p + h, p:p + w, :]
    folded = np.zeros((n, h, w + 2 * p, c), dtype=DTYPE)
    for r, src in enumerate((np.arange(h + 2 * p) - p) % h):
        folded[:, src] += dxp[:, r]
    dx = np.zeros((n, h, w, c), dtype=DTYPE)
    for q, src in enumerate((np.arange(w + 2 * p) - p) % w):
        dx[:, :, src] += folded[:, :, q]
    return dx


def _check_input(x, spec):
    x = as_tensor4(x, "x")
    if x.shape[3] != spec.in_channels:
        raise ShapeError(f"x has {x.shape[3]} channels, spec expects {spec.in_channels}")
    return x


def _check_filter_geometry(shape, spec, what):
    o, c, k = shape[-4], shape[-3], shape[-1]
    if (o, c, k) != (spec.out_channels, spec.in_channels, spec.k):
        raise ShapeError(
            f"{what} is [{o}, {c}, {k}, {k}], spec expects "
            f"[{spec.out_channels}, {spec.in_channels}, {spec.k}, {spec.k}]")


def check_mask(mask, shape, m):
    mask = np.asarray(mask)
    if mask.shape != tuple(shape):
        raise ShapeError(f"mask shape {mask.shape} does not match output map {tuple(shape)}")
    if not np.issubdtype(mask.dtype, np.integer):
        raise ShapeError(f"mask must hold integers, got {mask.dtype}")
    if mask.size and (mask.min() < 0 or mask.max() >= m):
        raise MaskIndexError(f"mask values must lie in [0, {m - 1}], got [{mask.min()}, {mask.max()}]")
    return mask.astype(np.int64, copy=False)


class ConvContext(Context):

    def __init__(self, x_shape, cols, filt, spec, out_shape):
        self.x_shape = x_shape
        self.cols = cols
        self.filter = filt
        self.spec = spec
        self.out_shape = out_shape


def conv2d_forward(x, f, spec):
    """Standard convolution. Returns ``(y, ctx)``."""
    x = _check_input(x, spec)
    _check_filter_geometry(f.weights.shape, spec, "filter")
    cols = im2col(x, spec)
    n, oh, ow, kk = cols.shape
    wt = weight_matrix(f.weights).T
    y = np.empty((n, oh, ow, spec.out_channels), dtype=DTYPE)
    for b in range(n):
        y[b] = matmul(cols[b].reshape(-1, kk), wt).reshape(oh, ow, -1)
    if f.bias is not None:
        y += f.bias
    return y, ConvContext(x.shape, cols, f, spec, y.shape)


def conv2d_backward(ctx, dy):
    """Exact gradients ``(dx, dW, dbias)``; ``dbias`` is None for bias-free filters."""
    dy = ctx.check_grad(dy)
    ctx.consume()
    o = ctx.spec.out_channels
    kk = ctx.cols.shape[-1]
    g = dy.reshape(-1, o)
    dwmat = g.T @ ctx.cols.reshape(-1, kk)
    dcols = (g @ weight_matrix(ctx.filter.weights)).reshape(ctx.cols.shape)
    dx = col2im(dcols, ctx.x_shape, ctx.spec)
    dw = from_weight_matrix(dwmat, ctx.spec.in_channels, ctx.spec.k)
    dbias = g.sum(axis=0) if ctx.filter.bias is not None else None
    return dx, dw, dbias


class LocalConvContext(Context):

    def __init__(self, x_shape, cols, field, spec, out_shape):
        self.x_shape = x_shape
        self.cols = cols
        self.field = field
        self.spec = spec
        self.out_shape = out_shape


def local_conv_forward(x, f, spec):
    """Convolution with an unshared filter at every output pixel. Returns ``(y, ctx)``."""
    x = _check_input(x, spec)
    cols = im2col(x, spec)
    n, oh, ow, kk = cols.shape
    if f.weights.shape[:2] != (oh, ow):
        raise ShapeError(f"filter field covers {f.weights.shape[:2]}, output map is {(oh, ow)}")
    _check_filter_geometry(f.weights.shape, spec, "local filter")
    wmats = weight_matrix(f.weights).reshape(oh * ow, spec.out_channels, kk)
    y = np.empty((n, oh * ow, spec.out_channels), dtype=DTYPE)
    for b in range(n):
        flat = cols[b].reshape(-1, kk)
        for p in range(oh * ow):
            y[b, p] = matmul(flat[[p]], wmats[p].T)[0]
    y = y.reshape(n, oh, ow, -1)
    return y, LocalConvContext(x.shape, cols, f, spec, y.shape)


def local_conv_backward(ctx, dy):
    """Exact gradients ``(dx, dfield)`` of :func:`local_conv_forward`."""
    dy = ctx.check_grad(dy)
    ctx.consume()
    n, oh, ow, kk = ctx.cols.shape
    o = ctx.spec.out_channels
    wmats = weight_matrix(ctx.field.weights)
    # dW[u, v] sums over the batch only; dcols[n, u, v] uses the pixel's own filter
    dwmats = np.einsum("nuvo,nuvk->uvok", dy, ctx.cols)
    dcols = np.einsum("nuvo,uvok->nuvk", dy, wmats)
    dx = col2im(dcols, ctx.x_shape, ctx.spec)
    dfield = from_weight_matrix(dwmats.reshape(oh, ow, o, kk), ctx.spec.in_channels, ctx.spec.k)
    return dx, dfield


class RegionConvContext(Context):

    def __init__(self, x_shape, cols, bank, mask, spec, out_shape):
        self.x_shape = x_shape
        self.cols = cols
        self.bank = bank
        self.mask = mask
        self.spec = spec
        self.out_shape = out_shape


def _region_rows(mask_flat, m):
    for t in range(m):
        sel = np.flatnonzero(mask_flat == t)
        if sel.size:
            yield t, sel


def region_conv_forward(x, bank, mask, spec):
    """Region-shared convolution.

    Output pixel ``(u, v)`` of sample ``n`` is computed with
    ``bank[n, mask[n, u, v]]``. The filter's center pixel picks the region,
    so taps freely read across region borders. Returns ``(y, ctx)``.
    """
    x = _check_input(x, spec)
    _check_filter_geometry(bank.filters.shape, spec, "filter bank")
    if bank.n != x.shape[0]:
        raise ShapeError(f"filter bank holds {bank.n} samples, x holds {x.shape[0]}")
    cols = im2col(x, spec)
    n, oh, ow, kk = cols.shape
    mask = check_mask(mask, (n, oh, ow), bank.m)
    wmats = weight_matrix(bank.filters)
    y = np.empty((n, oh * ow, spec.out_channels), dtype=DTYPE)
    for b in range(n):
        flat = cols[b].reshape(-1, kk)
        for t, sel in _region_rows(mask[b].reshape(-1), bank.m):
            y[b, sel] = matmul(flat[sel], wmats[b, t].T)
    y = y.reshape(n, oh, ow, -1)
    return y, RegionConvContext(x.shape, cols, bank, mask, spec, y.shape)


def region_conv_backward(ctx, dy):
    """Gradients ``(dx, dbank)`` of :func:`region_conv_forward` for a fixed mask.

    Each region filter receives the sum of the per-pixel filter gradients over
    exactly the pixels that selected it.
    """
    dy = ctx.check_grad(dy)
    ctx.consume()
    n, oh, ow, kk = ctx.cols.shape
    o = ctx.spec.out_channels
    wmats = weight_matrix(ctx.bank.filters)
    dwmats = np.zeros_like(wmats)
    dcols = np.zeros((n, oh * ow, kk), dtype=DTYPE)
    for b in range(n):
        flat = ctx.cols[b].reshape(-1, kk)
        g = dy[b].reshape(-1, o)
        for t, sel in _region_rows(ctx.mask[b].reshape(-1), ctx.bank.m):
            dwmats[b, t] = g[sel].T @ flat[sel]
            dcols[b, sel] = g[sel] @ wmats[b, t]
    dx = col2im(dcols.reshape(ctx.cols.shape), ctx.x_shape, ctx.spec)
    dbank = FilterBank(from_weight_matrix(dwmats, ctx.spec.in_channels, ctx.spec.k))
    return dx, dbank
