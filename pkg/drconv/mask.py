"""Learnable guided mask.

The forward pass assigns every output pixel to the region whose guide-feature
channel is largest (hard argmax). Argmax has no useful derivative, so the
backward pass treats the one-hot selection as if it were the softmax of the
guide feature: the gradient reaching each soft weight is the dot product of the
pixel's filter gradient with that region's filter, and it is then pushed
through the softmax Jacobian to the guide feature.
"""
import warnings
from typing import NamedTuple

import numpy as np

from .conv import (
    Context,
    ConvContext,
    FilterBank,
    check_mask,
    conv2d_backward,
    conv2d_forward,
    from_weight_matrix,
    weight_matrix,
)
from .errors import ConfigError, ContextError, DegenerateMaskWarning, ShapeError
from .tensor import DTYPE, argmax_c


def softmax_c(f):
    """Channel softmax with max-subtraction; finite for any finite input."""
    z = f - f.max(axis=3, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=3, keepdims=True)


class GuideOutput(NamedTuple):
    feature: np.ndarray
    mask: np.ndarray
    soft: np.ndarray
    conv_ctx: ConvContext


def guide_forward(x, guide, spec):
    """Guide feature ``F``, hard mask ``M = argmax_c F`` and soft assignment ``softmax_c F``."""
    m = guide.out_channels
    if spec.out_channels != m:
        raise ConfigError("guide", f"guide filter emits {m} channels, spec expects {spec.out_channels}")
    if m < 2:
        warnings.warn(f"guided mask with m={m} assigns every pixel to region 0", DegenerateMaskWarning)
    feature, conv_ctx = conv2d_forward(x, guide, spec)
    return GuideOutput(feature, argmax_c(feature), softmax_c(feature), conv_ctx)


def select_filters(bank, mask):
    """Per-pixel filter view ``[n, h, w, O, C, k, k]`` with ``out[n, u, v] = bank[n, mask[n, u, v]]``."""
    mask = np.asarray(mask)
    if mask.ndim != 3 or mask.shape[0] != bank.n:
        raise ShapeError(f"mask must be [{bank.n}, h, w], got {mask.shape}")
    mask = check_mask(mask, mask.shape, bank.m)
    return bank.filters[np.arange(bank.n)[:, None, None], mask]


class PixelFilterGradient:
    """Gradient w.r.t. the per-pixel selected filters, kept factored.

    For a convolution the gradient of pixel ``(n, u, v)``'s filter is the outer
    product of that pixel's output gradient with its input column, so only
    those two factors are stored.
    """

    def __init__(self, dy, cols, in_channels, k):
        self.dy = dy
        self.cols = cols
        self.in_channels = in_channels
        self.k = k

    @property
    def shape(self):
        return self.dy.shape[:3] + (self.dy.shape[3], self.in_channels, self.k, self.k)

    def dense(self):
        outer = self.dy[..., :, None] * self.cols[..., None, :]
        return from_weight_matrix(outer, self.in_channels, self.k)

    def dot_bank(self, bank):
        # <dW_hat[n,u,v], W_j[n]> == dy[n,u,v] . (cols[n,u,v] @ W_j[n].T)
        return np.einsum("nuvo,nuvk,njok->nuvj", self.dy, self.cols,
                         weight_matrix(bank.filters), optimize=True)


def soft_assignment_grad(d_selected, bank):
    """Gradient reaching each soft weight: ``<dW_hat[n, u, v], W_j[n]>`` for every region ``j``."""
    if isinstance(d_selected, PixelFilterGradient):
        return d_selected.dot_bank(bank)
    d_selected = np.asarray(d_selected, dtype=DTYPE)
    if d_selected.ndim != 7 or d_selected.shape[0] != bank.n or d_selected.shape[3:] != bank.filters.shape[2:]:
        raise ContextError(f"per-pixel filter gradient {d_selected.shape} does not match bank {bank.filters.shape}")
    return np.einsum("nuvocij,njocij->nuvj", d_selected, bank.filters, optimize=True)


def softmax_backward(soft, d_soft):
    """Softmax Jacobian-vector product: ``soft * (d_soft - <soft, d_soft>)`` per pixel."""
    return soft * (d_soft - (soft * d_soft).sum(axis=3, keepdims=True))


class MaskContext(Context):
    """Guide forward results plus the bank the mask selected from."""

    def __init__(self, guide, bank):
        if bank.m != guide.feature.shape[3] or bank.n != guide.feature.shape[0]:
            raise ContextError(f"bank {bank.filters.shape[:2]} does not match guide feature {guide.feature.shape}")
        self.guide = guide
        self.bank = bank
        self.out_shape = guide.feature.shape

    @property
    def soft(self):
        return self.guide.soft

    @property
    def mask(self):
        return self.guide.mask


def mask_backward(ctx, d_selected):
    """Gradient w.r.t. the guide feature ``F`` from the per-pixel filter gradient."""
    d_soft = soft_assignment_grad(d_selected, ctx.bank)
    if d_soft.shape != ctx.out_shape:
        raise ContextError(f"filter gradient covers {d_soft.shape[:3]}, mask covers {ctx.out_shape[:3]}")
    ctx.consume()
    return softmax_backward(ctx.soft, d_soft)


def guide_param_backward(ctx, d_feature):
    """Push ``dF`` through the guide convolution: ``(d_guide_weights, dx_guide)``."""
    conv_ctx = ctx.guide.conv_ctx if isinstance(ctx, MaskContext) else ctx
    dx, dw, _ = conv2d_backward(conv_ctx, d_feature)
    return dw, dx
