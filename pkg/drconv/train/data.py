"""Datasets: IDX files and a synthetic region-textured classification task."""
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConsistencyError, FormatError
from ..tensor import DTYPE

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = b"\x00\x00\x08\x03"
IDX_LABELS_MAGIC = b"\x00\x00\x08\x01"

CLASS_PERIOD = 4.0
DISTRACTOR_PERIOD = 8.0


@dataclass
class Dataset:
    """``images`` ``[n, h, w, c]`` in ``[0, 1]``, integer ``labels`` ``[n]``.

    ``regions`` optionally holds the ground-truth region map ``[n, h, w]`` of
    synthetic data.
    """

    images: np.ndarray
    labels: np.ndarray
    classes: int
    regions: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ConsistencyError(f"labels must lie in [0, {self.classes - 1}]")

    def __len__(self):
        return len(self.labels)

    def subset(self, index):
        regions = None if self.regions is None else self.regions[index]
        return Dataset(self.images[index], self.labels[index], self.classes, regions)

    def split(self, n_first):
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))


def _read_idx(path, magic, ndim):
    data = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated header")
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic {data[:4].hex()}, expected {magic.hex()}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = math.prod(dims)
    if len(data) != header + count:
        raise FormatError(f"{path}: expected {count} payload bytes, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, classes=None):
    """Read an IDX image file (``u8 [n, rows, cols]``) and its label file (``u8 [n]``)."""
    pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1).astype(np.int64)
    if len(pixels) != len(labels):
        raise ConsistencyError(f"{images_path} holds {len(pixels)} images, {labels_path} holds {len(labels)} labels")
    if classes is None:
        classes = int(labels.max()) + 1 if labels.size else 2
    images = (pixels.astype(DTYPE) / 255.0)[..., None]
    log.info("loaded %d idx images of %dx%d from %s", len(images), *images.shape[1:3], images_path)
    return Dataset(images, labels, max(classes, 2))


def write_idx(images_path, labels_path, pixels, labels):
    """Write ``u8 [n, rows, cols]`` pixels and ``u8 [n]`` labels as IDX files."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(IDX_IMAGES_MAGIC + struct.pack(">3I", *pixels.shape) + pixels.tobytes())
    Path(labels_path).write_bytes(IDX_LABELS_MAGIC + struct.pack(">I", len(labels)) + labels.tobytes())


def _grating(yy, xx, theta, period, phase):
    return 0.5 + 0.5 * np.sin(2.0 * math.pi / period * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)


def synth_region_dataset(n, h, w, classes, seed=0, noise=0.1):
    """Images split into 2 to 4 Voronoi regions, each filled with an oriented grating.

    One region per image carries the class texture (orientation
    ``pi * label / classes`` at the class period); the others carry
    distractor gratings of random orientation at a coarser period. Phases are
    random, so class evidence is only visible to oriented, frequency-selective
    filters applied in the right region. Labels are balanced within one.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:h, 0:w].astype(DTYPE)
    images = np.empty((n, h, w, 1), dtype=DTYPE)
    regions = np.empty((n, h, w), dtype=np.int64)
    for i in range(n):
        r = int(rng.integers(2, 5))
        centers = rng.uniform((0, 0), (h, w), size=(r, 2))
        dist = (yy[..., None] - centers[:, 0]) ** 2 + (xx[..., None] - centers[:, 1]) ** 2
        region = np.argmin(dist, axis=2)
        class_region = int(rng.integers(r))
        image = np.empty((h, w), dtype=DTYPE)
        for t in range(r):
            if t == class_region:
                theta, period = math.pi * labels[i] / classes, CLASS_PERIOD
            else:
                theta, period = rng.uniform(0, math.pi), DISTRACTOR_PERIOD
            texture = _grating(yy, xx, theta, period, rng.uniform(0, 2 * math.pi))
            image[region == t] = texture[region == t]
        images[i, ..., 0] = np.clip(image + noise * rng.standard_normal((h, w)), 0.0, 1.0)
        regions[i] = region
    return Dataset(images, labels.astype(np.int64), classes, regions)


def load_dataset(data_config):
    """``(train, val)`` for a :class:`~drconv.train.config.DataConfig`."""
    d = data_config
    if d.kind == "synth":
        full = synth_region_dataset(d.n_train + d.n_val, d.height, d.width, d.classes, d.seed)
        return full.split(d.n_train)
    full = load_idx(d.images, d.labels)
    n_val = int(round(len(full) * d.val_fraction))
    return full.split(len(full) - n_val)
