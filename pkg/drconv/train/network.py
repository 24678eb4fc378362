"""A small configurable CNN: convolution layers with ReLU, optional 2x2
average pooling, global average pooling and a dense classifier head."""
import math
from collections import OrderedDict

import numpy as np

from ..conv import ConvSpec
from ..cost import LayerCost, count_layer_cost
from ..errors import ConfigError, LayerLookupError
from ..generator import adaptive_avg_pool, adaptive_avg_pool_backward
from ..layers import LAYER_TYPES, DRConvLayer, LocalConvLayer, StandardConvLayer
from ..tensor import DTYPE


class Dense:
    """Fully connected layer ``y = x @ W.T + b`` on ``[n, features]`` inputs."""

    kind = "dense"

    def __init__(self, weights, bias, name):
        self.weights = np.asarray(weights, dtype=DTYPE)
        self.bias = np.asarray(bias, dtype=DTYPE)
        self.name = name

    @classmethod
    def initialize(cls, n_in, n_out, rng, name):
        bound = 1.0 / math.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, (n_out, n_in)), rng.uniform(-bound, bound, n_out), name)

    def parameters(self):
        return {"weight": self.weights, "bias": self.bias}

    def decay_flags(self):
        return {"weight": True, "bias": False}

    def forward(self, x):
        return x @ self.weights.T + self.bias

    def backward(self, x, dy):
        return dy @ self.weights, {"weight": dy.T @ x, "bias": dy.sum(axis=0)}

    def cost(self):
        n_out, n_in = self.weights.shape
        return LayerCost(n_in * n_out, n_in * n_out + n_out)


def _pooled_hw(h, w):
    return max(h // 2, 1), max(w // 2, 1)


def build_layer(layer_config, c_in, c_out, input_hw, rng, name):
    lc = layer_config
    try:
        spec = ConvSpec(k=lc.k, stride=lc.stride, padding=lc.padding, in_channels=c_in, out_channels=c_out)
    except ConfigError as exc:
        raise ConfigError(f"model.layers.{name}", str(exc)) from exc
    if lc.kind == "standard":
        return StandardConvLayer.initialize(spec, rng, name)
    if lc.kind == "local":
        return LocalConvLayer.initialize(spec, input_hw, rng, name)
    return DRConvLayer.initialize(spec, lc.m, lc.hidden, rng, name)


class Network:
    """Convolution stack and classifier built from a :class:`ModelConfig`.

    Parameters are addressed as ``"<layer>.<param>"`` (``layer0.guide``,
    ``head.weight``, ...).
    """

    def __init__(self, config, layers, head, hidden_head=None):
        self.config = config
        self.layers = list(layers)
        self.head = head
        self.hidden_head = hidden_head

    @classmethod
    def build(cls, config, rng=None):
        rng = np.random.default_rng(rng)
        layers = []
        h, w = config.input_hw
        for i, (layer_config, (c_in, c_out)) in enumerate(zip(config.layers, config.channels())):
            layer = build_layer(layer_config, c_in, c_out, (h, w), rng, f"layer{i}")
            layers.append(layer)
            h, w = layer.spec.output_size(h, w)
            if i in config.pool_after:
                h, w = _pooled_hw(h, w)
        features = config.channels()[-1][1]
        hidden_head = None
        if config.head_width:
            hidden_head = Dense.initialize(features, config.head_width, rng, "hidden")
            features = config.head_width
        head = Dense.initialize(features, config.classes, rng, "head")
        return cls(config, layers, head, hidden_head)

    def _dense_layers(self):
        return [d for d in (self.hidden_head, self.head) if d is not None]

    def modules(self):
        return self.layers + self._dense_layers()

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise LayerLookupError(name, [layer.name for layer in self.layers])

    def drconv_layers(self):
        return [layer for layer in self.layers if isinstance(layer, DRConvLayer)]

    def parameters(self):
        params = OrderedDict()
        for module in self.modules():
            for key, value in module.parameters().items():
                params[f"{module.name}.{key}"] = value
        return params

    def decay_flags(self):
        flags = {}
        for module in self.modules():
            for key, value in module.decay_flags().items():
                flags[f"{module.name}.{key}"] = value
        return flags

    def mark_updated(self):
        for layer in self.layers:
            layer.mark_updated()

    def state(self):
        return OrderedDict((key, value.copy()) for key, value in self.parameters().items())

    def load_state(self, state):
        params = self.parameters()
        for key, value in state.items():
            params[key][...] = value
        self.mark_updated()

    def forward(self, x, stop_at=None):
        """Logits ``[n, classes]`` and the cache :meth:`backward` needs.

        With ``stop_at`` set to a layer name, returns that layer's forward
        context instead (used to read guided masks).
        """
        a = np.asarray(x, dtype=DTYPE)
        caches = []
        for i, layer in enumerate(self.layers):
            y, ctx = layer.forward(a)
            if layer.name == stop_at:
                return ctx
            a = np.maximum(y, 0.0)
            relu_mask = y > 0
            pooled_from = None
            if i in self.config.pool_after:
                pooled_from = a.shape
                a = adaptive_avg_pool(a, *_pooled_hw(*a.shape[1:3]))
            caches.append((ctx, relu_mask, pooled_from))
        if stop_at is not None:
            raise LayerLookupError(stop_at, [layer.name for layer in self.layers])
        features_shape = a.shape
        f = adaptive_avg_pool(a, 1, 1).reshape(a.shape[0], -1)
        dense_inputs = []
        for dense in self._dense_layers():
            dense_inputs.append(f)
            f = dense.forward(f)
            if dense is not self.head:
                f = np.maximum(f, 0.0)
        return f, (caches, features_shape, dense_inputs)

    def backward(self, cache, dlogits):
        """Gradients of every parameter, keyed like :meth:`parameters`."""
        caches, features_shape, dense_inputs = cache
        grads = OrderedDict()
        d = dlogits
        for dense, x_in in reversed(list(zip(self._dense_layers(), dense_inputs))):
            if dense is not self.head:
                d = d * (dense.forward(x_in) > 0)
            d, g = dense.backward(x_in, d)
            for key, value in g.items():
                grads[f"{dense.name}.{key}"] = value
        n, _, _, c = features_shape
        d = adaptive_avg_pool_backward(d.reshape(n, 1, 1, c), features_shape)
        for layer, (ctx, relu_mask, pooled_from) in reversed(list(zip(self.layers, caches))):
            if pooled_from is not None:
                d = adaptive_avg_pool_backward(d, pooled_from)
            d, g = layer.backward(ctx, d * relu_mask)
            for key, value in g.items():
                grads[f"{layer.name}.{key}"] = value
        return OrderedDict((key, grads[key]) for key in self.parameters())

    def predict(self, x):
        logits, _ = self.forward(x)
        return np.argmax(logits, axis=1)

    def guided_masks(self, x, name):
        """Region index map ``[n, h, w]`` of the DRConv layer ``name`` for input ``x``."""
        layer = self.layer(name)
        if not isinstance(layer, DRConvLayer):
            raise LayerLookupError(name, [layer.name for layer in self.drconv_layers()])
        return self.forward(x, stop_at=name).mask.mask

    def cost_rows(self, input_hw=None):
        """``(name, kind, LayerCost)`` per module for one sample at ``input_hw``."""
        h, w = input_hw or self.config.input_hw
        rows = []
        for i, layer in enumerate(self.layers):
            rows.append((layer.name, layer.kind, count_layer_cost(layer, (h, w))))
            h, w = layer.spec.output_size(h, w)
            if i in self.config.pool_after:
                h, w = _pooled_hw(h, w)
        for dense in self._dense_layers():
            rows.append((dense.name, dense.kind, dense.cost()))
        return rows

    @classmethod
    def from_manifest(cls, config, layer_configs):
        """Zero-initialized network with the layer geometry recorded in a checkpoint."""
        net = cls.build(config, rng=0)
        layers = []
        for layer_config, built in zip(layer_configs, net.layers):
            layer_type = LAYER_TYPES.get(layer_config.get("kind"))
            if layer_type is None:
                raise ConfigError(f"layers.{built.name}.kind", f"unknown layer kind {layer_config.get('kind')!r}")
            layers.append(layer_type.from_config(layer_config, built.name))
        net.layers = layers
        return net


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient ``(softmax - onehot) / n`` at the logits."""
    logits = np.asarray(logits, dtype=DTYPE)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -float(np.mean(log_p[np.arange(n), labels]))
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
