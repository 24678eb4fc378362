import numpy as np

from ..conv import ConvSpec, LocalFilterField, local_conv_backward, local_conv_forward
from .base import Layer, LayerContext, fan_in_uniform, spec_config


class LocalConvLayer(Layer):
    """One unshared filter per output pixel.

    Parameters grow with the output map, so the layer is bound to the input
    size it was built for.
    """

    kind = "local"

    def __init__(self, spec, field, input_hw, name="local"):
        super().__init__(name)
        self.spec = spec
        self.field = field
        self.input_hw = tuple(input_hw)

    @classmethod
    def initialize(cls, spec, input_hw, rng=None, name="local"):
        rng = np.random.default_rng(rng)
        oh, ow = spec.output_size(*input_hw)
        shape = (oh, ow, spec.out_channels, spec.in_channels, spec.k, spec.k)
        weights = fan_in_uniform(rng, shape, spec.in_channels * spec.k * spec.k)
        return cls(spec, LocalFilterField(weights), input_hw, name)

    def parameters(self):
        return {"weight": self.field.weights}

    def forward(self, x):
        y, conv_ctx = local_conv_forward(x, self.field, self.spec)
        return y, LayerContext(self, self.version, conv=conv_ctx)

    def backward(self, ctx, dy):
        dy = ctx.conv.check_grad(dy)
        ctx.consume(self)
        dx, dfield = local_conv_backward(ctx.conv, dy)
        return dx, {"weight": dfield}

    def config(self):
        return {"kind": self.kind, **spec_config(self.spec), "input_hw": list(self.input_hw)}

    @classmethod
    def from_config(cls, config, name):
        spec = ConvSpec(**{k: config[k] for k in ConvSpec._fields})
        oh, ow = spec.output_size(*config["input_hw"])
        shape = (oh, ow, spec.out_channels, spec.in_channels, spec.k, spec.k)
        return cls(spec, LocalFilterField(np.zeros(shape)), config["input_hw"], name)
