import numpy as np
import pytest

from drconv.viz import (
    adjusted_agreement, mask_statistics, match_resolution, palette, permutation_null, region_agreement,
    render_mask, write_index_grid, write_mask_images, write_ppm,
)


def test_palette_hues():
    np.testing.assert_array_equal(palette(1), [[255, 0, 0]])
    np.testing.assert_array_equal(palette(3), [[255, 0, 0], [0, 255, 0], [0, 0, 255]])
    p = palette(8)
    assert p.shape == (8, 3) and p.dtype == np.uint8
    assert len({tuple(c) for c in p}) == 8


def test_single_region_renders_one_color():
    image = render_mask(np.zeros((4, 5), dtype=np.int64), 1)
    assert image.shape == (4, 5, 3)
    assert len(np.unique(image.reshape(-1, 3), axis=0)) == 1


def test_render_rejects_out_of_range():
    with pytest.raises(ValueError):
        render_mask(np.full((2, 2), 3), 3)


def test_ppm_bytes(tmp_path):
    path = tmp_path / "a.ppm"
    write_ppm(path, render_mask(np.array([[0, 1]]), 2))
    assert path.read_bytes() == b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 255, 255])


def test_index_grid(tmp_path):
    path = tmp_path / "a.pgm"
    write_index_grid(path, np.array([[0, 2], [1, 0]]), 3)
    assert path.read_text() == "P2\n2 2\n2\n0 2\n1 0\n"
    write_index_grid(path, np.zeros((1, 2), dtype=int), 1)
    assert path.read_text().splitlines()[2] == "1"


def test_mask_images_are_deterministic(tmp_path, rng):
    masks = rng.integers(0, 4, (2, 3, 3))
    first = write_mask_images(tmp_path / "a", masks, 4, "layer1")
    second = write_mask_images(tmp_path / "b", masks, 4, "layer1")
    assert [p.name for p in first] == ["layer1_0000.ppm", "layer1_0000.pgm", "layer1_0001.ppm", "layer1_0001.pgm"]
    assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]


def test_mask_statistics():
    mask = np.array([[[0, 0], [1, 1]], [[0, 0], [0, 0]]])
    stats = mask_statistics(mask, 3)
    np.testing.assert_allclose(stats["fractions"], [0.75, 0.25, 0.0])
    assert stats["active"] == 1.5


def test_agreement_is_invariant_to_relabeling(rng):
    truth = rng.integers(0, 3, (4, 6, 6))
    relabeled = np.array([2, 0, 1])[truth]
    assert region_agreement(relabeled, truth) == 1.0


def test_agreement_beats_shuffled_null():
    truth = np.zeros((6, 8, 8), dtype=np.int64)
    for i in range(6):
        truth[i, :, : i + 1] = 1
    null = permutation_null(truth, truth, trials=50, seed=0)
    observed = region_agreement(truth, truth)
    assert observed > np.percentile(null, 95)
    assert adjusted_agreement(observed, null) == pytest.approx(1.0)


def test_match_resolution():
    truth = np.arange(16).reshape(1, 4, 4)
    np.testing.assert_array_equal(match_resolution(truth, (2, 2)), [[[0, 2], [8, 10]]])
