"""Per-sample filter generation.

Each sample is average-pooled to a ``k x k`` grid, passed through a 1x1
convolution with sigmoid activation and then through a grouped 1x1 convolution
(one group per region, no activation). The ``m*O*C`` output channels at grid
position ``(i, j)`` are laid out region-major, then output channel, then input
channel, and become tap ``(i, j)`` of the ``m`` region filters.
"""
import math
from typing import NamedTuple

import numpy as np

from .conv import Context, FilterBank
from .errors import ConfigError, ContextError, ShapeError, SizeError
from .tensor import DTYPE, as_tensor4, matmul, sigmoid


def pool_bins(size, out):
    """``[floor(i*size/out), ceil((i+1)*size/out))`` for every output bin ``i``."""
    return [(i * size // out, -(-(i + 1) * size // out)) for i in range(out)]


def adaptive_avg_pool(x, out_h, out_w):
    x = as_tensor4(x, "x")
    n, h, w, c = x.shape
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise SizeError(f"cannot pool {h}x{w} down to {out_h}x{out_w}")
    out = np.empty((n, out_h, out_w, c), dtype=DTYPE)
    for i, (hs, he) in enumerate(pool_bins(h, out_h)):
        for j, (ws, we) in enumerate(pool_bins(w, out_w)):
            out[:, i, j, :] = x[:, hs:he, ws:we, :].mean(axis=(1, 2))
    return out


def adaptive_avg_pool_backward(d_pooled, in_shape):
    """Spread each bin's gradient uniformly over its window (overlaps accumulate)."""
    n, h, w, c = in_shape
    out_h, out_w = d_pooled.shape[1:3]
    dx = np.zeros(in_shape, dtype=DTYPE)
    for i, (hs, he) in enumerate(pool_bins(h, out_h)):
        for j, (ws, we) in enumerate(pool_bins(w, out_w)):
            dx[:, hs:he, ws:we, :] += d_pooled[:, i:i + 1, j:j + 1, :] / ((he - hs) * (we - ws))
    return dx


class GeneratorParams:
    """Weights of the two 1x1 convolutions that emit ``m`` filters of shape ``[O, C, k, k]``.

    ``w1`` is ``[hidden, C, 1, 1]`` with bias ``b1``; ``w2`` is the grouped
    ``[m*O*C, hidden/m, 1, 1]`` convolution without bias.
    """

    def __init__(self, w1, b1, w2, m, out_channels, in_channels, k):
        self.w1 = np.asarray(w1, dtype=DTYPE)
        self.b1 = np.asarray(b1, dtype=DTYPE)
        self.w2 = np.asarray(w2, dtype=DTYPE)
        self.m = m
        self.out_channels = out_channels
        self.in_channels = in_channels
        self.k = k
        hidden = self.w1.shape[0]
        if hidden % m:
            raise ConfigError("hidden", f"hidden width {hidden} is not divisible by m={m}")
        expected = {
            "w1": (hidden, in_channels, 1, 1),
            "b1": (hidden,),
            "w2": (m * out_channels * in_channels, hidden // m, 1, 1),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigError(name, f"expected shape {shape}, got {getattr(self, name).shape}")

    @classmethod
    def initialize(cls, in_channels, out_channels, k, m, hidden=None, rng=None):
        rng = np.random.default_rng(rng)
        hidden = m * in_channels if hidden is None else hidden
        if hidden < m or hidden % m:
            raise ConfigError("hidden", f"hidden width {hidden} is not a positive multiple of m={m}")
        bound1 = 1.0 / math.sqrt(in_channels)
        w1 = rng.uniform(-bound1, bound1, (hidden, in_channels, 1, 1))
        b1 = rng.uniform(-bound1, bound1, (hidden,))
        oc = out_channels * in_channels
        bound2 = 1.0 / math.sqrt(hidden // m) / math.sqrt(oc)
        w2 = rng.uniform(-bound2, bound2, (m * oc, hidden // m, 1, 1))
        return cls(w1, b1, w2, m, out_channels, in_channels, k)

    @property
    def hidden(self):
        return self.w1.shape[0]

    def arrays(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2}


class GeneratorGrads(NamedTuple):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    x: np.ndarray


def _unpack_bank(out, m, o, c, k):
    # out[n, i*k + j, t*O*C + o*C + c] -> bank[n, t, o, c, i, j]
    n = out.shape[0]
    return out.reshape(n, k, k, m, o, c).transpose(0, 3, 4, 5, 1, 2)


def _pack_bank(filters):
    n, m, o, c, k, _ = filters.shape
    return filters.transpose(0, 4, 5, 1, 2, 3).reshape(n, k * k, m * o * c)


class GeneratorContext(Context):

    def __init__(self, x_shape, pooled, hidden, params):
        self.x_shape = x_shape
        self.pooled = pooled
        self.hidden = hidden
        self.params = params
        p = params
        self.out_shape = (x_shape[0], p.m, p.out_channels, p.in_channels, p.k, p.k)


def generate_filters(x, params):
    """Emit a ``FilterBank`` per sample from that sample's features alone. Returns ``(bank, ctx)``."""
    x = as_tensor4(x, "x")
    p = params
    if x.shape[3] != p.in_channels:
        raise ShapeError(f"x has {x.shape[3]} channels, generator expects {p.in_channels}")
    n, kk = x.shape[0], p.k * p.k
    hg, oc = p.hidden // p.m, p.out_channels * p.in_channels
    pooled = adaptive_avg_pool(x, p.k, p.k).reshape(n, kk, p.in_channels)
    w1t = p.w1[:, :, 0, 0].T
    w2 = p.w2[:, :, 0, 0]
    hidden = np.empty((n, kk, p.hidden), dtype=DTYPE)
    out = np.empty((n, kk, p.m * oc), dtype=DTYPE)
    for b in range(n):
        hidden[b] = sigmoid(matmul(pooled[b], w1t) + p.b1)
        for g in range(p.m):
            out[b, :, g * oc:(g + 1) * oc] = matmul(hidden[b, :, g * hg:(g + 1) * hg], w2[g * oc:(g + 1) * oc].T)
    bank = FilterBank(_unpack_bank(out, p.m, p.out_channels, p.in_channels, p.k))
    return bank, GeneratorContext(x.shape, pooled, hidden, p)


def generator_backward(ctx, dbank):
    """Exact gradients of :func:`generate_filters` as ``GeneratorGrads(w1, b1, w2, x)``."""
    filters = dbank.filters if isinstance(dbank, FilterBank) else np.asarray(dbank, dtype=DTYPE)
    if filters.shape != ctx.out_shape:
        raise ContextError(f"bank gradient {filters.shape} does not match generated bank {ctx.out_shape}")
    ctx.consume()
    p = ctx.params
    n, kk = ctx.pooled.shape[:2]
    hg, oc = p.hidden // p.m, p.out_channels * p.in_channels
    d_out = _pack_bank(filters)
    w2 = p.w2[:, :, 0, 0]
    dw2 = np.empty_like(w2)
    d_hidden = np.empty_like(ctx.hidden)
    for g in range(p.m):
        so, sh = slice(g * oc, (g + 1) * oc), slice(g * hg, (g + 1) * hg)
        dw2[so] = d_out[:, :, so].reshape(-1, oc).T @ ctx.hidden[:, :, sh].reshape(-1, hg)
        d_hidden[:, :, sh] = d_out[:, :, so] @ w2[so]
    dz = d_hidden * ctx.hidden * (1.0 - ctx.hidden)
    dw1 = dz.reshape(-1, p.hidden).T @ ctx.pooled.reshape(-1, p.in_channels)
    db1 = dz.sum(axis=(0, 1))
    d_pooled = (dz @ p.w1[:, :, 0, 0]).reshape(n, p.k, p.k, p.in_channels)
    dx = adaptive_avg_pool_backward(d_pooled, ctx.x_shape)
    return GeneratorGrads(dw1[:, :, None, None], db1, dw2[:, :, None, None], dx)
