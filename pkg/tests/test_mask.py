import warnings

import numpy as np
import pytest

from drconv.conv import ConvSpec, FilterBank, StandardFilter
from drconv.errors import ConfigError, DegenerateMaskWarning, MaskIndexError
from drconv.mask import (
    MaskContext, PixelFilterGradient, guide_forward, guide_param_backward, mask_backward, select_filters,
    soft_assignment_grad, softmax_backward, softmax_c,
)
from drconv.tensor import argmax_c


def test_softmax_rows_sum_to_one(rng):
    f = 50 * rng.standard_normal((2, 4, 4, 5))
    s = softmax_c(f)
    np.testing.assert_allclose(s.sum(axis=3), 1.0, rtol=0, atol=1e-9)
    assert np.all(np.isfinite(s))


def test_softmax_backward_annihilates_channel_constant(rng):
    soft = softmax_c(rng.standard_normal((2, 3, 3, 4)))
    d_soft = np.repeat(rng.standard_normal((2, 3, 3, 1)), 4, axis=3)
    assert np.max(np.abs(softmax_backward(soft, d_soft))) < 1e-12


def test_argmax_invariant_to_channel_constant_shift(rng):
    f = rng.standard_normal((2, 5, 5, 4))
    shift = np.repeat(rng.integers(-8, 8, (2, 5, 5, 1)).astype(float), 4, axis=3)
    np.testing.assert_array_equal(argmax_c(f + shift), argmax_c(f))


def test_guide_forward_outputs(rng):
    spec = ConvSpec(k=3, in_channels=2, out_channels=3)
    guide = StandardFilter(rng.standard_normal((3, 2, 3, 3)))
    out = guide_forward(rng.standard_normal((2, 4, 4, 2)), guide, spec)
    assert out.feature.shape == (2, 4, 4, 3)
    np.testing.assert_array_equal(out.mask, np.argmax(out.feature, axis=3))
    np.testing.assert_allclose(out.soft, softmax_c(out.feature))


def test_single_region_guide_warns(rng):
    spec = ConvSpec(k=1, in_channels=2, out_channels=1)
    with pytest.warns(DegenerateMaskWarning):
        out = guide_forward(rng.standard_normal((1, 2, 2, 2)), StandardFilter(rng.standard_normal((1, 2, 1, 1))), spec)
    assert not out.mask.any()


def test_guide_with_wrong_region_count(rng):
    spec = ConvSpec(k=1, in_channels=2, out_channels=4)
    with pytest.raises(ConfigError):
        guide_forward(rng.standard_normal((1, 2, 2, 2)), StandardFilter(rng.standard_normal((3, 2, 1, 1))), spec)


def test_select_filters(rng):
    bank = FilterBank(rng.standard_normal((2, 3, 2, 2, 1, 1)))
    mask = rng.integers(0, 3, (2, 4, 4))
    view = select_filters(bank, mask)
    assert view.shape == (2, 4, 4, 2, 2, 1, 1)
    np.testing.assert_array_equal(view[1, 2, 3], bank.filters[1, mask[1, 2, 3]])
    with pytest.raises(MaskIndexError):
        select_filters(bank, np.full((2, 4, 4), 3))


def test_factored_filter_gradient_matches_dense(rng):
    k, c, o, m = 3, 2, 3, 4
    dy = rng.standard_normal((2, 4, 4, o))
    cols = rng.standard_normal((2, 4, 4, k * k * c))
    bank = FilterBank(rng.standard_normal((2, m, o, c, k, k)))
    factored = PixelFilterGradient(dy, cols, c, k)
    assert factored.shape == (2, 4, 4, o, c, k, k)
    np.testing.assert_allclose(soft_assignment_grad(factored, bank),
                               soft_assignment_grad(factored.dense(), bank), rtol=1e-12, atol=1e-12)


def test_mask_backward_is_softmax_weighted_dot_products(rng):
    spec = ConvSpec(k=1, in_channels=2, out_channels=3)
    x = rng.standard_normal((1, 3, 3, 2))
    guide = guide_forward(x, StandardFilter(rng.standard_normal((3, 2, 1, 1))), spec)
    bank = FilterBank(rng.standard_normal((1, 3, 2, 2, 1, 1)))
    d_selected = rng.standard_normal((1, 3, 3, 2, 2, 1, 1))
    d_feature = mask_backward(MaskContext(guide, bank), d_selected)
    d_soft = np.einsum("nuvocij,njocij->nuvj", d_selected, bank.filters)
    s = guide.soft
    expected = s * (d_soft - np.sum(s * d_soft, axis=3, keepdims=True))
    np.testing.assert_allclose(d_feature, expected, rtol=1e-12, atol=1e-14)


def test_single_region_gives_zero_guide_gradient(rng):
    spec = ConvSpec(k=3, in_channels=2, out_channels=1)
    x = rng.standard_normal((2, 4, 4, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMaskWarning)
        guide = guide_forward(x, StandardFilter(rng.standard_normal((1, 2, 3, 3))), spec)
    bank = FilterBank(rng.standard_normal((2, 1, 2, 2, 3, 3)))
    ctx = MaskContext(guide, bank)
    d_feature = mask_backward(ctx, rng.standard_normal((2, 4, 4, 2, 2, 3, 3)))
    d_guide, _ = guide_param_backward(ctx, d_feature)
    assert not d_feature.any()
    assert not d_guide.any()
