import warnings

import numpy as np
import pytest

from drconv.conv import ConvSpec, StandardFilter, conv2d_forward
from drconv.errors import ConfigError, ContextError, DegenerateMaskWarning
from drconv.generator import generate_filters
from drconv.layers import DRConvLayer, drconv_backward, drconv_forward
from drconv.tensor import circular_shift


def test_forward_shapes(small_drconv, rng):
    y, ctx = drconv_forward(small_drconv, rng.standard_normal((2, 5, 5, 3)))
    assert y.shape == (2, 5, 5, 2)
    assert ctx.mask.mask.shape == (2, 5, 5)
    assert ctx.mask.mask.max() < 3


def test_guide_geometry_is_validated(rng):
    spec = ConvSpec(k=3, in_channels=2, out_channels=2)
    layer = DRConvLayer.initialize(spec, 2, rng=rng)
    with pytest.raises(ConfigError):
        DRConvLayer(spec, 3, layer.guide, layer.generator)


def test_single_region_frozen_layer_equals_standard_conv(rng):
    spec = ConvSpec(k=3, in_channels=2, out_channels=3)
    layer = DRConvLayer.initialize(spec, 1, rng=rng)
    w = rng.standard_normal((3, 2, 3, 3))
    layer.freeze_generator(w[None])
    x = rng.standard_normal((2, 5, 5, 2))
    with pytest.warns(DegenerateMaskWarning):
        y, _ = drconv_forward(layer, x)
    expected, _ = conv2d_forward(x, StandardFilter(w), spec)
    np.testing.assert_array_equal(y, expected)


def test_single_region_guide_gradient_is_zero(rng):
    spec = ConvSpec(k=3, in_channels=2, out_channels=2)
    layer = DRConvLayer.initialize(spec, 1, rng=rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMaskWarning)
        y, ctx = drconv_forward(layer, rng.standard_normal((2, 4, 4, 2)))
    grads = drconv_backward(layer, ctx, rng.standard_normal(y.shape))
    assert not grads.guide.any()
    assert not grads.x_guide.any()


def test_zero_generator_output_gives_zero_output(small_drconv, rng):
    small_drconv.generator.w2[...] = 0.0
    y, _ = drconv_forward(small_drconv, rng.standard_normal((2, 4, 4, 3)))
    assert not y.any()


def test_context_is_single_use(small_drconv, rng):
    y, ctx = drconv_forward(small_drconv, rng.standard_normal((1, 4, 4, 3)))
    drconv_backward(small_drconv, ctx, np.ones_like(y))
    with pytest.raises(ContextError):
        drconv_backward(small_drconv, ctx, np.ones_like(y))


def test_stale_context_is_rejected(small_drconv, rng):
    y, ctx = drconv_forward(small_drconv, rng.standard_normal((1, 4, 4, 3)))
    small_drconv.mark_updated()
    with pytest.raises(ContextError):
        drconv_backward(small_drconv, ctx, np.ones_like(y))


def test_context_of_another_layer_is_rejected(rng):
    spec = ConvSpec(k=1, in_channels=2, out_channels=2)
    a = DRConvLayer.initialize(spec, 2, rng=rng, name="a")
    b = DRConvLayer.initialize(spec, 2, rng=rng, name="b")
    y, ctx = drconv_forward(a, rng.standard_normal((1, 3, 3, 2)))
    with pytest.raises(ContextError):
        drconv_backward(b, ctx, np.ones_like(y))


def test_frozen_generator_reports_no_generator_gradient(rng):
    spec = ConvSpec(k=1, in_channels=2, out_channels=2)
    layer = DRConvLayer.initialize(spec, 2, rng=rng)
    layer.freeze_generator(rng.standard_normal((2, 2, 2, 1, 1)))
    y, ctx = layer.forward(rng.standard_normal((1, 3, 3, 2)))
    _, grads = layer.backward(ctx, np.ones_like(y))
    assert set(grads) == {"guide", "w1", "b1", "w2"}
    assert not grads["w2"].any()


def _shift_trial(layer, x, dy, dx):
    y, ctx = drconv_forward(layer, x)
    ys, ctx_s = drconv_forward(layer, circular_shift(x, dy, dx))
    return y, ctx.mask.mask, ys, ctx_s.mask.mask


def test_translation_equivariance_with_global_pooling(rng):
    for _ in range(10):
        spec = ConvSpec(k=1, padding="circular", in_channels=3, out_channels=2)
        layer = DRConvLayer.initialize(spec, 4, rng=rng)
        x = rng.standard_normal((2, 6, 6, 3))
        dy, dx = (int(v) for v in rng.integers(0, 6, 2))
        y, mask, ys, mask_s = _shift_trial(layer, x, dy, dx)
        np.testing.assert_array_equal(mask_s, circular_shift(mask, dy, dx))
        assert np.max(np.abs(ys - circular_shift(y, dy, dx))) < 1e-10


def test_translation_equivariance_with_frozen_filters(rng):
    for _ in range(10):
        spec = ConvSpec(k=3, padding="circular", in_channels=2, out_channels=2)
        layer = DRConvLayer.initialize(spec, 3, rng=rng)
        layer.freeze_generator(rng.standard_normal((3, 2, 2, 3, 3)))
        x = rng.standard_normal((1, 6, 6, 2))
        dy, dx = (int(v) for v in rng.integers(0, 6, 2))
        y, mask, ys, mask_s = _shift_trial(layer, x, dy, dx)
        np.testing.assert_array_equal(mask_s, circular_shift(mask, dy, dx))
        assert np.max(np.abs(ys - circular_shift(y, dy, dx))) < 1e-10


def test_config_round_trip(small_drconv):
    rebuilt = DRConvLayer.from_config(small_drconv.config(), small_drconv.name)
    assert rebuilt.config() == small_drconv.config()
    assert {k: v.shape for k, v in rebuilt.parameters().items()} == \
        {k: v.shape for k, v in small_drconv.parameters().items()}


def test_guide_is_excluded_from_weight_decay(small_drconv):
    flags = small_drconv.decay_flags()
    assert flags["guide"] is False and flags["b1"] is False
    assert flags["w1"] and flags["w2"]


def test_output_matches_per_pixel_recomputation(rng):
    spec = ConvSpec(k=1, in_channels=3, out_channels=2)
    layer = DRConvLayer.initialize(spec, 4, rng=rng)
    x = rng.standard_normal((2, 5, 4, 3))
    y, ctx = drconv_forward(layer, x)
    bank, _ = generate_filters(x, layer.generator)
    mask = ctx.mask.mask
    for n in range(2):
        for u in range(5):
            for v in range(4):
                w = bank.filters[n, mask[n, u, v], :, :, 0, 0]
                assert np.max(np.abs(y[n, u, v] - w @ x[n, u, v])) < 1e-12


def test_guide_receives_gradient(rng):
    spec = ConvSpec(k=3, in_channels=3, out_channels=2)
    nonzero = 0
    for _ in range(100):
        layer = DRConvLayer.initialize(spec, int(rng.choice([2, 4])), rng=rng)
        y, ctx = drconv_forward(layer, rng.standard_normal((1, 5, 5, 3)))
        grads = drconv_backward(layer, ctx, rng.standard_normal(y.shape))
        nonzero += bool(np.any(grads.guide != 0))
    assert nonzero >= 95


def test_bad_gradient_does_not_use_up_the_context(small_drconv, rng):
    y, ctx = drconv_forward(small_drconv, rng.standard_normal((1, 4, 4, 3)))
    with pytest.raises(ContextError):
        drconv_backward(small_drconv, ctx, np.ones((1, 4, 4, 5)))
    grads = drconv_backward(small_drconv, ctx, np.ones_like(y))
    assert grads.x.shape == (1, 4, 4, 3)
