"""Independent correctness machinery.

Two oracles cover the DRConv backward pass:

- the *frozen-mask* oracle differentiates the hard forward numerically while
  holding the region assignment fixed; it checks the input, bank and
  generator gradients, which are exact;
- the *relaxed* oracle differentiates the softmax-weighted mixture of region
  outputs; the guide-feature and guide-weight gradients are exact for it (and
  only for it).

Naive loop implementations of every convolution and of the generator serve as
forward oracles.
"""
import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.linalg import block_diag

from .conv import ConvSpec, FilterBank, conv2d_forward, region_conv_forward
from .errors import EvaluationError
from .generator import generate_filters
from .layers import DRConvLayer, drconv_backward, drconv_forward
from .mask import softmax_c
from .tensor import DTYPE

DEFAULT_STEP = 1e-5
LAYER_TOLERANCE = 1e-4
OP_TOLERANCE = 1e-6
_EPS = 1e-12


def relative_error(analytic, numeric, eps=_EPS):
    """``max|a - n| / max(max|a|, max|n|, eps)`` over one parameter group."""
    analytic = np.asarray(analytic, dtype=DTYPE)
    numeric = np.asarray(numeric, dtype=DTYPE)
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), eps)
    return diff / scale


def finite_diff(f, theta, h=DEFAULT_STEP):
    """Central-difference gradient of scalar ``f`` at ``theta`` (any shape)."""
    theta = np.array(theta, dtype=DTYPE)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f(theta)
        flat[i] = orig - h
        minus = f(theta)
        flat[i] = orig
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise EvaluationError(f"objective is not finite around coordinate {i}")
        grad.reshape(-1)[i] = (plus - minus) / (2.0 * h)
    return grad


def _perturbing(array, fn):
    """Objective that writes its argument into ``array`` in place, evaluates ``fn`` and restores."""
    original = array.copy()

    def f(value):
        array[...] = value
        try:
            return float(fn())
        finally:
            array[...] = original
    return f


def naive_convolution(x, filter_at, spec):
    """Loop-nest convolution; ``filter_at(b, u, v)`` returns the ``[O, C, k, k]`` filter for that pixel."""
    n, h, w, c = x.shape
    oh, ow = spec.output_size(h, w)
    k, s, p = spec.k, spec.stride, spec.pad
    y = np.zeros((n, oh, ow, spec.out_channels), dtype=DTYPE)
    for b in range(n):
        for u in range(oh):
            for v in range(ow):
                weights = filter_at(b, u, v)
                for o in range(spec.out_channels):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(k):
                            for j in range(k):
                                r, q = u * s + i - p, v * s + j - p
                                if spec.padding == "circular":
                                    r, q = r % h, q % w
                                elif not (0 <= r < h and 0 <= q < w):
                                    continue
                                acc += x[b, r, q, ci] * weights[o, ci, i, j]
                    y[b, u, v, o] = acc
    return y


def naive_conv2d(x, weights, spec, bias=None):
    y = naive_convolution(x, lambda b, u, v: weights, spec)
    return y if bias is None else y + bias


def naive_local_conv(x, field, spec):
    return naive_convolution(x, lambda b, u, v: field[u, v], spec)


def naive_region_conv(x, filters, mask, spec):
    return naive_convolution(x, lambda b, u, v: filters[b, mask[b, u, v]], spec)


def naive_adaptive_pool(x, out_h, out_w):
    n, h, w, c = x.shape
    out = np.zeros((n, out_h, out_w, c), dtype=DTYPE)
    for i in range(out_h):
        hs, he = math.floor(i * h / out_h), math.ceil((i + 1) * h / out_h)
        for j in range(out_w):
            ws, we = math.floor(j * w / out_w), math.ceil((j + 1) * w / out_w)
            for b in range(n):
                for ch in range(c):
                    out[b, i, j, ch] = sum(x[b, r, q, ch] for r in range(hs, he)
                                           for q in range(ws, we)) / ((he - hs) * (we - ws))
    return out


def naive_generate_filters(x, params):
    """Generator as per-position matrix products: dense affine, sigmoid, block-diagonal affine."""
    p = params
    n = x.shape[0]
    oc = p.out_channels * p.in_channels
    pooled = naive_adaptive_pool(x, p.k, p.k)
    w1 = p.w1[:, :, 0, 0]
    w2 = block_diag(*[p.w2[g * oc:(g + 1) * oc, :, 0, 0] for g in range(p.m)])
    bank = np.zeros((n, p.m, p.out_channels, p.in_channels, p.k, p.k), dtype=DTYPE)
    for b in range(n):
        for i in range(p.k):
            for j in range(p.k):
                hidden = 1.0 / (1.0 + np.exp(-(w1 @ pooled[b, i, j] + p.b1)))
                out = w2 @ hidden
                for t in range(p.m):
                    for o in range(p.out_channels):
                        for c in range(p.in_channels):
                            bank[b, t, o, c, i, j] = out[t * oc + o * p.in_channels + c]
    return bank


def layer_bank(layer, x):
    if layer.frozen_filters is not None:
        return FilterBank.shared(layer.frozen_filters, x.shape[0])
    return generate_filters(x, layer.generator)[0]


def candidate_outputs(x, bank, spec):
    """``[n, h, w, m, O]``: the output every pixel would get under each region filter."""
    n = x.shape[0]
    outs = []
    for t in range(bank.m):
        y, _ = region_conv_forward(x, bank, np.full((n,) + spec.output_size(*x.shape[1:3]), t), spec)
        outs.append(y)
    return np.stack(outs, axis=3)


def relaxed_output(feature, candidates):
    """``sum_j softmax_c(F)_j * Y_j`` per pixel."""
    return np.einsum("nuvj,nuvjo->nuvo", softmax_c(feature), candidates)


def relaxed_forward(layer, x, logit_scale=1.0):
    """Softmax-weighted mixture of the region outputs; smooth in every parameter.

    ``logit_scale`` multiplies the guide feature before the softmax; as it
    grows the mixture approaches the hard forward.
    """
    x = np.asarray(x, dtype=DTYPE)
    feature, _ = conv2d_forward(x, layer.guide, layer.guide_spec)
    return relaxed_output(logit_scale * feature, candidate_outputs(x, layer_bank(layer, x), layer.spec))


def frozen_mask_forward(layer, x, mask):
    """Hard forward with the region assignment held at ``mask``."""
    y, _ = region_conv_forward(x, layer_bank(layer, x), mask, layer.spec)
    return y


def top_two_gap(feature):
    if feature.shape[3] < 2:
        return np.full(feature.shape[:3], np.inf)
    top = np.sort(feature, axis=3)
    return top[..., -1] - top[..., -2]


def is_tie_adjacent(feature, h=DEFAULT_STEP):
    return bool(np.any(top_two_gap(feature) < 10.0 * h))


@dataclass
class GroupResult:
    max_rel_error: float
    max_abs_error: float
    passed: bool


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    tie_adjacent: bool = False
    groups: Dict[str, GroupResult] = field(default_factory=dict)

    def add(self, name, analytic, numeric):
        rel = float(relative_error(analytic, numeric))
        abs_err = float(np.max(np.abs(np.asarray(analytic) - np.asarray(numeric)), initial=0.0))
        self.groups[name] = GroupResult(rel, abs_err, rel < self.tolerance)

    @property
    def passed(self):
        return all(g.passed for g in self.groups.values())

    def failed_groups(self):
        return [name for name, g in self.groups.items() if not g.passed]

    def to_text(self):
        lines = [f"gradcheck step={self.step:g} tolerance={self.tolerance:g} "
                 f"tie_adjacent={str(self.tie_adjacent).lower()} passed={str(self.passed).lower()}"]
        for name, g in self.groups.items():
            lines.append(f"group={name} max_rel_error={g.max_rel_error:.3e} "
                         f"max_abs_error={g.max_abs_error:.3e} passed={str(g.passed).lower()}")
        return "\n".join(lines)


def check_drconv_gradients(layer, x, tolerance=LAYER_TOLERANCE, h=DEFAULT_STEP, projection=None, rng=None):
    """Dual-oracle gradient check of one DRConv layer on input ``x``.

    The scalar objective is ``<R, y>`` for a fixed projection ``R`` (random
    unless given).
    """
    x = np.array(x, dtype=DTYPE)
    y, ctx = drconv_forward(layer, x)
    if projection is None:
        projection = np.random.default_rng(rng).standard_normal(y.shape)
    r = np.asarray(projection, dtype=DTYPE)
    guide = ctx.mask.guide
    mask = guide.mask.copy()
    bank = FilterBank(ctx.mask.bank.filters.copy())
    grads = drconv_backward(layer, ctx, r)
    report = GradCheckReport(step=h, tolerance=tolerance, tie_adjacent=is_tie_adjacent(guide.feature, h))

    def hard():
        return np.sum(r * frozen_mask_forward(layer, x, mask))

    def relaxed():
        return np.sum(r * relaxed_forward(layer, x))

    numeric_x = finite_diff(lambda xv: np.sum(r * frozen_mask_forward(layer, xv, mask)), x, h)
    report.add("x", grads.x - grads.x_guide, numeric_x)
    numeric_bank = finite_diff(
        lambda b: np.sum(r * region_conv_forward(x, FilterBank(b), mask, layer.spec)[0]), bank.filters, h)
    report.add("bank", grads.bank.filters, numeric_bank)
    if grads.generator is not None:
        for name, array in layer.generator.arrays().items():
            numeric = finite_diff(_perturbing(array, hard), array, h)
            report.add(f"generator.{name}", getattr(grads.generator, name), numeric)
    candidates = candidate_outputs(x, bank, layer.spec)
    numeric_feature = finite_diff(lambda fv: np.sum(r * relaxed_output(fv, candidates)), guide.feature, h)
    report.add("feature", grads.feature, numeric_feature)
    numeric_guide = finite_diff(_perturbing(layer.guide.weights, relaxed), layer.guide.weights, h)
    report.add("guide", grads.guide, numeric_guide)
    return report


def draw_case(rng, m, k, channels, spatial, batch=2, padding="same_zero", h=DEFAULT_STEP, max_draws=100):
    """Random ``(layer, x)`` whose guide feature has no tie-adjacent pixel."""
    spec = ConvSpec(k=k, padding=padding, in_channels=channels, out_channels=channels)
    for _ in range(max_draws):
        layer = DRConvLayer.initialize(spec, m, rng=rng)
        x = rng.standard_normal((batch, spatial, spatial, channels))
        feature, _ = conv2d_forward(x, layer.guide, layer.guide_spec)
        if not is_tie_adjacent(feature, h):
            return layer, x
    raise EvaluationError(f"no tie-free instance in {max_draws} draws")
