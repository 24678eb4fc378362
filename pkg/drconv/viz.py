"""Static guided-mask renderings and mask/ground-truth agreement scores.

Masks are written as binary PPM (P6, maxval 255) images colored with
:func:`palette`, plus an ASCII PGM (P2) grid of the raw region indices that
diffs cleanly.
"""
import colorsys
import logging
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

log = logging.getLogger(__name__)


def palette(m):
    """``[m, 3]`` uint8 colors: hue ``t/m`` at full saturation and value for region ``t``."""
    colors = [colorsys.hsv_to_rgb(t / m, 1.0, 1.0) for t in range(m)]
    return np.array([[int(round(255 * c)) for c in rgb] for rgb in colors], dtype=np.uint8)


def render_mask(mask, m):
    """``[h, w, 3]`` image of a single ``[h, w]`` index map."""
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() >= m):
        raise ValueError(f"mask values must lie in [0, {m - 1}]")
    return palette(m)[mask]


def write_ppm(path, rgb):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def write_index_grid(path, mask, m):
    """ASCII PGM with one row of space-separated region indices per image row."""
    mask = np.asarray(mask)
    h, w = mask.shape
    rows = [" ".join(str(int(v)) for v in row) for row in mask]
    Path(path).write_text(f"P2\n{w} {h}\n{max(m - 1, 1)}\n" + "\n".join(rows) + "\n")


def write_mask_images(out_dir, masks, m, prefix):
    """Write ``<prefix>_<i>.ppm`` and ``<prefix>_<i>.pgm`` for every sample; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, mask in enumerate(masks):
        ppm = out_dir / f"{prefix}_{i:04d}.ppm"
        pgm = out_dir / f"{prefix}_{i:04d}.pgm"
        write_ppm(ppm, render_mask(mask, m))
        write_index_grid(pgm, mask, m)
        paths.extend([ppm, pgm])
    log.info("wrote %d mask images to %s", len(masks), out_dir)
    return paths


def mask_statistics(mask, m):
    """Fraction of pixels per region and the mean number of occupied regions per sample."""
    mask = np.asarray(mask)
    counts = np.bincount(mask.reshape(-1), minlength=m)[:m]
    active = [len(np.unique(sample)) for sample in mask]
    return {"fractions": counts / max(mask.size, 1), "active": float(np.mean(active)) if active else 0.0}


def match_resolution(truth, shape):
    """Nearest-neighbor resample of ``[n, H, W]`` ground truth to ``[n, h, w]``."""
    truth = np.asarray(truth)
    _, big_h, big_w = truth.shape
    h, w = shape
    rows = (np.arange(h) * big_h) // h
    cols = (np.arange(w) * big_w) // w
    return truth[:, rows[:, None], cols[None, :]]


def _matched_pixels(mask, truth):
    table = np.zeros((int(mask.max()) + 1, int(truth.max()) + 1), dtype=np.int64)
    np.add.at(table, (mask.reshape(-1), truth.reshape(-1)), 1)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return int(table[rows, cols].sum())


def region_agreement(mask, truth):
    """Fraction of pixels on which ``mask`` agrees with ``truth`` under the best
    one-to-one matching of region indices, matched separately per sample."""
    mask = np.asarray(mask)
    truth = np.asarray(truth)
    if mask.shape != truth.shape:
        truth = match_resolution(truth, mask.shape[1:])
    if mask.size == 0:
        return 0.0
    return sum(_matched_pixels(a, b) for a, b in zip(mask, truth)) / mask.size


def permutation_null(mask, truth, trials=200, seed=0):
    """Agreement scores with the ground truth shuffled across samples.

    A single sample falls back to shuffling its pixels.
    """
    mask = np.asarray(mask)
    truth = np.asarray(truth)
    if mask.shape != truth.shape:
        truth = match_resolution(truth, mask.shape[1:])
    rng = np.random.default_rng(seed)
    scores = np.empty(trials)
    for t in range(trials):
        if len(truth) > 1:
            shuffled = truth[rng.permutation(len(truth))]
        else:
            shuffled = rng.permutation(truth.reshape(-1)).reshape(truth.shape)
        scores[t] = region_agreement(mask, shuffled)
    return scores


def adjusted_agreement(observed, null):
    """``(observed - E[null]) / (1 - E[null])``: 0 at chance, 1 for perfect agreement."""
    expected = float(np.mean(null))
    if expected >= 1.0:
        return 0.0
    return (observed - expected) / (1.0 - expected)
