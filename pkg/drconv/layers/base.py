import math

import numpy as np

from ..errors import ContextError


def fan_in_uniform(rng, shape, fan_in):
    """Zero-mean uniform init with bound ``1/sqrt(fan_in)``."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class LayerContext:
    """Bundle of the caches one layer needs for its backward pass; single use."""

    def __init__(self, layer, version, **parts):
        self.layer_name = layer.name
        self.version = version
        self.__dict__.update(parts)
        self._consumed = False

    def consume(self, layer):
        if self._consumed:
            raise ContextError(f"context of layer {self.layer_name!r} was already consumed")
        if layer.name != self.layer_name:
            raise ContextError(f"context belongs to layer {self.layer_name!r}, not {layer.name!r}")
        if layer.version != self.version:
            raise ContextError(f"layer {layer.name!r} parameters changed since the forward pass")
        self._consumed = True


class Layer:
    """Common interface of the convolution layers a network can stack.

    ``parameters()`` returns the live arrays keyed by short name; optimizers
    update them in place and then call :meth:`mark_updated`, which invalidates
    every outstanding forward context.
    """

    kind = None

    def __init__(self, name):
        self.name = name
        self.version = 0

    def parameters(self):
        raise NotImplementedError

    def decay_flags(self):
        """Which parameters receive weight decay."""
        return {key: True for key in self.parameters()}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, ctx, dy):
        raise NotImplementedError

    def config(self):
        raise NotImplementedError

    def mark_updated(self):
        self.version += 1

    def load_parameters(self, arrays):
        params = self.parameters()
        for key, value in arrays.items():
            if params[key].shape != value.shape:
                raise ValueError(f"{self.name}.{key}: expected {params[key].shape}, got {value.shape}")
            params[key][...] = value
        self.mark_updated()

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, {self.config()})"


def spec_config(spec):
    return {"k": spec.k, "stride": spec.stride, "padding": spec.padding,
            "in_channels": spec.in_channels, "out_channels": spec.out_channels}


def zeros_like_params(layer):
    return {key: np.zeros_like(value) for key, value in layer.parameters().items()}
