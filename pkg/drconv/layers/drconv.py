"""Dynamic region-aware convolution layer.

Forward: the generator emits ``m`` filters per sample, the guide convolution
and argmax split the output map into ``m`` regions, and every region is
convolved with its own filter. Backward runs three paths and sums their input
gradients: the region convolution itself, the generator (fed with the hard
per-region filter gradients) and the guide (fed through the softmax
substitute for argmax).
"""
from typing import NamedTuple, Optional

import numpy as np

from ..conv import ConvSpec, FilterBank, StandardFilter, region_conv_backward, region_conv_forward
from ..errors import ConfigError
from ..generator import GeneratorGrads, GeneratorParams, generate_filters, generator_backward
from ..mask import MaskContext, PixelFilterGradient, guide_forward, guide_param_backward, mask_backward
from .base import Layer, LayerContext, fan_in_uniform, spec_config


class DRConvGrads(NamedTuple):
    x: np.ndarray
    guide: np.ndarray
    generator: Optional[GeneratorGrads]
    bank: FilterBank
    feature: np.ndarray
    x_guide: np.ndarray


class DRConvLayer(Layer):
    """``m``-region DRConv with a ``k x k`` guide convolution sharing the main spec.

    ``frozen_filters`` (``[m, O, C, k, k]``), when set, replaces the generator
    output for every sample and stops gradient flow into the generator.
    """

    kind = "drconv"

    def __init__(self, spec, m, guide, generator, name="drconv", frozen_filters=None):
        super().__init__(name)
        if m < 1:
            raise ConfigError("m", f"region count must be >= 1, got {m}")
        if guide.k != spec.k or guide.out_channels != m or guide.in_channels != spec.in_channels:
            raise ConfigError("guide", f"guide filter {guide.weights.shape} does not fit "
                                       f"m={m}, C={spec.in_channels}, k={spec.k}")
        if guide.bias is not None:
            raise ConfigError("guide", "the guide convolution has no bias")
        if (generator.m, generator.out_channels, generator.in_channels, generator.k) != \
                (m, spec.out_channels, spec.in_channels, spec.k):
            raise ConfigError("generator", "generator geometry does not match the layer")
        self.spec = spec
        self.m = m
        self.guide = guide
        self.generator = generator
        self.guide_spec = spec.replace(out_channels=m)
        self.frozen_filters = None
        if frozen_filters is not None:
            self.freeze_generator(frozen_filters)

    @classmethod
    def initialize(cls, spec, m, hidden=None, rng=None, name="drconv"):
        rng = np.random.default_rng(rng)
        k, c = spec.k, spec.in_channels
        guide = StandardFilter(fan_in_uniform(rng, (m, c, k, k), c * k * k))
        generator = GeneratorParams.initialize(c, spec.out_channels, k, m, hidden, rng)
        return cls(spec, m, guide, generator, name)

    def freeze_generator(self, filters):
        filters = np.asarray(filters, dtype=float)
        expected = (self.m, self.spec.out_channels, self.spec.in_channels, self.spec.k, self.spec.k)
        if filters.shape != expected:
            raise ConfigError("frozen_filters", f"expected shape {expected}, got {filters.shape}")
        self.frozen_filters = filters
        self.mark_updated()

    def parameters(self):
        return {"guide": self.guide.weights, **self.generator.arrays()}

    def decay_flags(self):
        return {"guide": False, "w1": True, "b1": False, "w2": True}

    def forward(self, x):
        return drconv_forward(self, x)

    def backward(self, ctx, dy):
        grads = drconv_backward(self, ctx, dy)
        out = {"guide": grads.guide}
        if grads.generator is not None:
            out.update(w1=grads.generator.w1, b1=grads.generator.b1, w2=grads.generator.w2)
        else:
            out.update({key: np.zeros_like(value) for key, value in self.generator.arrays().items()})
        return grads.x, out

    def config(self):
        return {"kind": self.kind, **spec_config(self.spec), "m": self.m, "hidden": self.generator.hidden}

    @classmethod
    def from_config(cls, config, name):
        spec = ConvSpec(**{k: config[k] for k in ConvSpec._fields})
        m, hidden = config["m"], config["hidden"]
        c, o, k = spec.in_channels, spec.out_channels, spec.k
        guide = StandardFilter(np.zeros((m, c, k, k)))
        generator = GeneratorParams(np.zeros((hidden, c, 1, 1)), np.zeros(hidden),
                                    np.zeros((m * o * c, hidden // m, 1, 1)), m, o, c, k)
        return cls(spec, m, guide, generator, name)


def drconv_forward(layer, x):
    """Returns ``(y, ctx)``; ``ctx`` serves exactly one :func:`drconv_backward`."""
    x = np.asarray(x, dtype=float)
    if layer.frozen_filters is not None:
        bank, gen_ctx = FilterBank.shared(layer.frozen_filters, x.shape[0]), None
    else:
        bank, gen_ctx = generate_filters(x, layer.generator)
    guide = guide_forward(x, layer.guide, layer.guide_spec)
    y, region_ctx = region_conv_forward(x, bank, guide.mask, layer.spec)
    ctx = LayerContext(layer, layer.version, mask=MaskContext(guide, bank),
                       generator=gen_ctx, region=region_ctx)
    return y, ctx


def drconv_backward(layer, ctx, dy):
    dy = ctx.region.check_grad(dy)
    ctx.consume(layer)
    dx_main, dbank = region_conv_backward(ctx.region, dy)
    dx = dx_main
    gen = None
    if ctx.generator is not None:
        gen = generator_backward(ctx.generator, dbank)
        dx = dx + gen.x
    d_selected = PixelFilterGradient(np.asarray(dy, dtype=float), ctx.region.cols,
                                     layer.spec.in_channels, layer.spec.k)
    d_feature = mask_backward(ctx.mask, d_selected)
    d_guide, dx_guide = guide_param_backward(ctx.mask, d_feature)
    return DRConvGrads(dx + dx_guide, d_guide, gen, dbank, d_feature, dx_guide)
