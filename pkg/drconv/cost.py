"""Multiply-add (MADDs) and parameter accounting per layer.

A multiply-add is one scalar multiply accumulated into a sum; activations,
pooling and bias additions are not counted. Counts are per sample. The
closed forms are (``U x V`` output map, ``C`` in, ``O`` out, ``k`` kernel,
``m`` regions, ``H`` generator hidden width):

- standard: ``U*V*O*C*k^2`` MADDs, ``O*C*k^2 (+O bias)`` params
- local: ``U*V*O*C*k^2`` MADDs, ``U*V*O*C*k^2`` params
- drconv: ``U*V*O*C*k^2 + U*V*m*C*k^2 + k^2*C*H + k^2*H*O*C`` MADDs and
  ``m*C*k^2 + C*H + H + (H/m)*m*O*C`` params (guide, first 1x1 conv with bias,
  grouped second 1x1 conv)
"""
from functools import singledispatch
from typing import NamedTuple

import numpy as np

from .layers import DRConvLayer, LocalConvLayer, StandardConvLayer
from .tensor import count_multiplies


class LayerCost(NamedTuple):
    madds: int
    params: int


@singledispatch
def count_layer_cost(layer, input_hw):
    raise TypeError(f"no cost model for {type(layer).__name__}")


@count_layer_cost.register
def _(layer: StandardConvLayer, input_hw):
    s = layer.spec
    u, v = s.output_size(*input_hw)
    taps = s.out_channels * s.in_channels * s.k * s.k
    bias = s.out_channels if layer.filter.bias is not None else 0
    return LayerCost(u * v * taps, taps + bias)


@count_layer_cost.register
def _(layer: LocalConvLayer, input_hw):
    s = layer.spec
    u, v = s.output_size(*input_hw)
    taps = s.out_channels * s.in_channels * s.k * s.k
    return LayerCost(u * v * taps, u * v * taps)


@count_layer_cost.register
def _(layer: DRConvLayer, input_hw):
    s = layer.spec
    u, v = s.output_size(*input_hw)
    c, o, kk, m = s.in_channels, s.out_channels, s.k * s.k, layer.m
    hidden = layer.generator.hidden
    madds = u * v * o * c * kk + u * v * m * c * kk
    params = m * c * kk + c * hidden + hidden + (hidden // m) * m * o * c
    if layer.frozen_filters is None:
        madds += kk * c * hidden + kk * hidden * o * c
    return LayerCost(madds, params)


def instrumented_madds(layer, input_hw, rng=None):
    """Run one forward pass on a random single sample and count the multiplies it issues."""
    rng = np.random.default_rng(rng)
    x = rng.standard_normal((1, *input_hw, layer.spec.in_channels))
    with count_multiplies() as counter:
        layer.forward(x)
    return counter.total
