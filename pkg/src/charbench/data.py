"""Class-per-folder PNG datasets: ingest, split, transform, batch, synthesize."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from .autodiff import Tensor

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
TRAIN_FRACTION = 0.85
BATCH_SIZE = 32


class DatasetError(ValueError):
    pass


@dataclass
class LabeledDataset:
    root: Path
    classes: list
    samples: list  # (path, class index)
    image_size: tuple = (32, 32)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def labels(self) -> np.ndarray:
        return np.array([lbl for _, lbl in self.samples], dtype=np.int64)


@dataclass
class SplitDataset:
    train: list
    test: list
    seed: int
    train_fraction: float
    classes: list = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass
class TransformConfig:
    target_size: tuple = (224, 224)
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    channel_mode: str = "replicate_gray_to_3"

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError("std components must be positive")
        if self.channel_mode != "replicate_gray_to_3":
            raise ValueError(f"unsupported channel mode {self.channel_mode!r}")


@dataclass
class Batch:
    images: Tensor
    labels: np.ndarray
    batch_index: int


def ingest(root) -> LabeledDataset:
    """Enumerate ``<root>/<class>/<file>.png``; classes and files sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    classes = sorted(e.name for e in os.scandir(root) if e.is_dir())
    if not classes:
        raise DatasetError(f"dataset root {root} has no class directories")
    if len(classes) < 2:
        raise DatasetError(f"dataset root {root} has a single class; need at least 2")
    samples = []
    for idx, cls in enumerate(classes):
        files = sorted(e.name for e in os.scandir(root / cls)
                       if e.is_file() and e.name.lower().endswith(".png"))
        if not files:
            raise DatasetError(f"class directory {root / cls} has no PNG images")
        samples.extend((root / cls / f, idx) for f in files)
    return LabeledDataset(root, classes, samples)


def split(ds: LabeledDataset, train_fraction: float = TRAIN_FRACTION, seed: int = 0) -> SplitDataset:
    """Stratified split: each class is shuffled and its first round(n*fraction) go to train."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list] = {}
    for s in ds.samples:
        by_class.setdefault(s[1], []).append(s)
    train, test = [], []
    for cls in sorted(by_class):
        items = by_class[cls]
        order = rng.permutation(len(items))
        # half-up rounding
        n_train = int(math.floor(len(items) * train_fraction + 0.5 + 1e-9))
        train.extend(items[i] for i in order[:n_train])
        test.extend(items[i] for i in order[n_train:])
    return SplitDataset(train, test, seed, train_fraction, list(ds.classes))


# ---------------------------------------------------------------------------
# image transforms


def decode_gray(path) -> np.ndarray:
    """Decode a PNG to float32 values in [0, 1]; colour images are luminance-converted."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "L":
                log.warning("%s is %s, converting to grayscale", path, im.mode)
                im = im.convert("L")
            arr = np.asarray(im, dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    return arr / np.float32(255.0)


def _resize_axis(img: np.ndarray, out: int, axis: int) -> np.ndarray:
    size = img.shape[axis]
    if size == out:
        return img
    scale = size / out
    pos = (np.arange(out) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0, size - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    t = (pos - lo).astype(img.dtype)
    a = np.take(img, lo, axis=axis)
    b = np.take(img, hi, axis=axis)
    shape = [1] * img.ndim
    shape[axis] = out
    # a + t*(b - a) keeps constant regions exactly constant
    return a + t.reshape(shape) * (b - a)


def resize_bilinear(img: np.ndarray, size) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a 2-d image."""
    h, w = size
    return _resize_axis(_resize_axis(img, h, 0), w, 1)


def normalize(img3: np.ndarray, mean, std) -> np.ndarray:
    m = np.asarray(mean, np.float32)[:, None, None]
    s = np.asarray(std, np.float32)[:, None, None]
    return (img3 - m) / s


def denormalize(img3: np.ndarray, mean, std) -> np.ndarray:
    m = np.asarray(mean, np.float32)[:, None, None]
    s = np.asarray(std, np.float32)[:, None, None]
    return img3 * s + m


def transform_array(gray: np.ndarray, cfg: TransformConfig) -> np.ndarray:
    resized = resize_bilinear(gray.astype(np.float32), cfg.target_size)
    return normalize(np.repeat(resized[None], 3, axis=0), cfg.mean, cfg.std).astype(np.float32)


def load_and_transform(sample, cfg: TransformConfig) -> Tensor:
    path = sample[0] if isinstance(sample, tuple) else sample
    return Tensor(transform_array(decode_gray(path), cfg))


class ImageCache:
    """Memoizes transformed arrays by path for one TransformConfig."""

    def __init__(self, cfg: TransformConfig):
        self.cfg = cfg
        self._store: dict = {}

    def get(self, path) -> np.ndarray:
        arr = self._store.get(path)
        if arr is None:
            arr = transform_array(decode_gray(path), self.cfg)
            self._store[path] = arr
        return arr


def batch_order(n: int, shuffle: bool, seed: int, epoch: int) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(
    samples: Sequence,
    cfg: TransformConfig,
    batch_size: int = BATCH_SIZE,
    epoch_seed: int = 0,
    epoch: int = 0,
    shuffle: bool = True,
    cache: Optional[ImageCache] = None,
) -> Iterator[Batch]:
    """Yield batches; the order is fixed by (seed, epoch) before any image is decoded.

    Training parts pass ``shuffle=True``; test parts use ``shuffle=False`` and
    come out in their stored order every time. The last batch may be short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = batch_order(len(samples), shuffle, epoch_seed, epoch)
    cache = cache or ImageCache(cfg)
    for b, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start : start + batch_size]
        images = np.stack([cache.get(samples[i][0]) for i in idx])
        labels = np.array([samples[i][1] for i in idx], dtype=np.int64)
        yield Batch(Tensor(images), labels, b)


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


# ---------------------------------------------------------------------------
# synthetic glyphs


def _glyph_template(rng: np.random.Generator) -> list:
    """A class template: a few strokes, each a polyline in [-1, 1]^2."""
    strokes = []
    for _ in range(rng.integers(2, 5)):
        if rng.random() < 0.5:
            p0, p1 = rng.uniform(-0.8, 0.8, 2), rng.uniform(-0.8, 0.8, 2)
            while np.linalg.norm(p1 - p0) < 0.6:
                p1 = rng.uniform(-0.8, 0.8, 2)
            strokes.append(np.stack([p0, p1]))
        else:
            centre = rng.uniform(-0.4, 0.4, 2)
            radius = rng.uniform(0.25, 0.6)
            start = rng.uniform(0, 2 * np.pi)
            sweep = rng.uniform(0.6, 1.6) * np.pi
            ang = start + np.linspace(0, sweep, 9)
            strokes.append(centre + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1))
    # DHCD-like headline bar on some classes
    if rng.random() < 0.5:
        strokes.append(np.array([[-0.8, -0.7], [0.8, -0.7]]))
    return strokes


def _segments(strokes) -> tuple:
    a = np.concatenate([s[:-1] for s in strokes])
    b = np.concatenate([s[1:] for s in strokes])
    return a, b


_GRIDS: dict = {}


def _pixel_grid(size: int) -> tuple:
    """Pixel-centre coordinates as (N, 1) columns, cached per size."""
    if size not in _GRIDS:
        ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
        _GRIDS[size] = (xs.reshape(-1, 1), ys.reshape(-1, 1))
    return _GRIDS[size]


def render_glyph(strokes, rng: np.random.Generator, size: int = 32, pad: int = 2) -> np.ndarray:
    """Rasterize a jittered copy of ``strokes`` as uint8 white-on-black."""
    theta = np.deg2rad(rng.uniform(-10, 10))
    shift = rng.uniform(-3, 3, 2)
    half = (size - 2 * pad) / 2 - 1.5
    thickness = rng.uniform(1.0, 1.8)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    a, b = _segments(strokes)
    centre = np.array([size / 2, size / 2])
    a = a @ rot.T * half + centre + shift
    b = b @ rot.T * half + centre + shift
    px, py = _pixel_grid(size)
    dx, dy = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    denom = np.maximum(dx * dx + dy * dy, 1e-12)
    rx, ry = px - a[:, 0], py - a[:, 1]
    t = np.clip((rx * dx + ry * dy) / denom, 0, 1)
    ex, ey = rx - t * dx, ry - t * dy
    dist = np.sqrt((ex * ex + ey * ey).min(axis=1))
    ink = np.clip(thickness + 0.5 - dist, 0, 1)
    img = ink.reshape(size, size) + rng.normal(0, 0.05, (size, size))
    return (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)


def class_dir_name(index: int) -> str:
    return f"character_{index + 1:02d}"


def synth_generate(out_root, num_classes: int, per_class: int, seed: int = 0, size: int = 32) -> None:
    """Write a class-per-folder tree of procedurally drawn 32x32 grayscale glyphs."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    out_root = Path(out_root)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {out_root}: {exc}") from exc
    for c in range(num_classes):
        template = _glyph_template(np.random.default_rng([seed, c, 0]))
        rng = np.random.default_rng([seed, c, 1])
        cdir = out_root / class_dir_name(c)
        cdir.mkdir(exist_ok=True)
        for i in range(per_class):
            img = render_glyph(template, rng, size)
            Image.fromarray(img).save(cdir / f"{i:05d}.png", optimize=False)
