import numpy as np

from ..conv import ConvSpec, StandardFilter, conv2d_backward, conv2d_forward
from .base import Layer, LayerContext, fan_in_uniform, spec_config


class StandardConvLayer(Layer):
    """Plain shared-filter convolution with bias; the baseline DRConv replaces."""

    kind = "standard"

    def __init__(self, spec, filt, name="conv"):
        super().__init__(name)
        self.spec = spec
        self.filter = filt

    @classmethod
    def initialize(cls, spec, rng=None, name="conv"):
        rng = np.random.default_rng(rng)
        fan_in = spec.in_channels * spec.k * spec.k
        weights = fan_in_uniform(rng, (spec.out_channels, spec.in_channels, spec.k, spec.k), fan_in)
        bias = fan_in_uniform(rng, (spec.out_channels,), fan_in)
        return cls(spec, StandardFilter(weights, bias), name)

    def parameters(self):
        params = {"weight": self.filter.weights}
        if self.filter.bias is not None:
            params["bias"] = self.filter.bias
        return params

    def decay_flags(self):
        return {key: key == "weight" for key in self.parameters()}

    def forward(self, x):
        y, conv_ctx = conv2d_forward(x, self.filter, self.spec)
        return y, LayerContext(self, self.version, conv=conv_ctx)

    def backward(self, ctx, dy):
        dy = ctx.conv.check_grad(dy)
        ctx.consume(self)
        dx, dw, dbias = conv2d_backward(ctx.conv, dy)
        grads = {"weight": dw}
        if dbias is not None:
            grads["bias"] = dbias
        return dx, grads

    def config(self):
        return {"kind": self.kind, **spec_config(self.spec), "bias": self.filter.bias is not None}

    @classmethod
    def from_config(cls, config, name):
        spec = ConvSpec(**{k: config[k] for k in ConvSpec._fields})
        o, c, k = spec.out_channels, spec.in_channels, spec.k
        bias = np.zeros(o) if config.get("bias", True) else None
        return cls(spec, StandardFilter(np.zeros((o, c, k, k)), bias), name)
