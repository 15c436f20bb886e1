"""Dataset container format and the synthetic classification set.

File layout (little-endian):
  magic    4 bytes  b"FLTD"
  version  u16
  n_samples u32, channels u16, height u16, width u16, n_classes u16
  pixels   float32 * (n * c * h * w), sample-major NCHW, all in [0, 1]
  labels   u8 * n, each < n_classes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DataError

MAGIC = b"FLTD"
VERSION = 1
_HEADER = struct.Struct("<4sHIHHHH")


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    n_classes: int

    def __len__(self) -> int:
        return len(self.images)


def save_dataset(path: str, ds: Dataset) -> None:
    n, c, h, w = ds.images.shape
    if ds.n_classes > 255:
        raise ConfigError("label payload is one byte per sample; at most 255 classes")
    header = _HEADER.pack(MAGIC, VERSION, n, c, h, w, ds.n_classes)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise DataError("bad-magic: not a dataset file")
    magic, version, n, c, h, w, n_classes = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise DataError(f"bad-version: {version} (expected {VERSION})")
    pixel_bytes = 4 * n * c * h * w
    expected = _HEADER.size + pixel_bytes + n
    if len(raw) != expected:
        raise DataError(f"truncated-payload: file is {len(raw)} bytes, header implies {expected}")
    images = np.frombuffer(raw, dtype="<f4", count=n * c * h * w, offset=_HEADER.size)
    images = images.reshape(n, c, h, w).copy()
    labels = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size + pixel_bytes).astype(np.int64)
    if not np.isfinite(images).all():
        raise DataError("pixel-not-finite: NaN/Inf in pixel payload")
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise DataError("pixel-out-of-range: pixels must lie in [0, 1]")
    if labels.size and labels.max() >= n_classes:
        raise DataError(f"label-out-of-range: label {labels.max()} with {n_classes} classes")
    return Dataset(images, labels, n_classes)


def _blob(grid_y: np.ndarray, grid_x: np.ndarray, cy: float, cx: float, width: float) -> np.ndarray:
    return np.exp(-((grid_y - cy) ** 2 + (grid_x - cx) ** 2) / (2.0 * width**2))


# Generator constants, tuned so the task sits in the interesting regime: a
# linear probe clears 95%, yet a model that leans on the marker patch loses
# most of its accuracy to an L-inf attack with budget ~0.1 while a model
# reading the blob layout does not.
_AMP_RANGE = (0.35, 0.65)
_PIXEL_NOISE = 0.16
_MARKER_BASE = 0.44
_MARKER_SPAN = 0.12  # below twice the usual attack budget, so it flips
_MARKER_SIZE = 2
_MARKER_NOISE = 0.03
_CONFLICT_FRACTION = 0.12  # blob layout contradicts the label; marker stays true


def make_synthetic(
    classes: int,
    per_class: int,
    channels: int,
    height: int,
    width: int,
    seed: int,
) -> Dataset:
    """Synthetic classification images with two cues of different fragility.

    Each class has a blob layout (two Gaussian bumps at class-specific
    angles, jittered and noisy): a coarse cue that survives small L-inf
    perturbations.  A corner marker patch encodes the class in its intensity
    with a span smaller than twice the usual attack budget: highly predictive
    on clean data (and the only correct cue on the conflict fraction, where
    the blob layout is drawn from another class) but trivially flipped by an
    attacker.  Output is byte-identical for identical arguments.
    """
    if classes < 1 or per_class < 1:
        raise ConfigError("need at least one class and one sample per class")
    if channels < 1 or height < 4 or width < 4:
        raise ConfigError("image shape too small")
    rng = rngmod.stream(seed, rngmod.SYNTH)
    n = classes * per_class
    gy, gx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy0, cx0 = (height - 1) / 2.0, (width - 1) / 2.0
    radius = min(height, width) / 3.2
    blob_width = max(min(height, width) / 7.0, 0.9)
    angle_gap = np.pi / max(classes, 5)
    msz = min(_MARKER_SIZE, height, width)

    images = np.empty((n, channels, height, width), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        k = i % classes
        pattern_class = k
        if classes > 1 and rng.uniform() < _CONFLICT_FRACTION:
            shift = 1 + rng.integers(classes - 1)
            pattern_class = (k + shift) % classes
        angle = np.pi / 7.0 + pattern_class * angle_gap
        amp = rng.uniform(*_AMP_RANGE)
        jy, jx = rng.uniform(-0.8, 0.8, size=2)
        pattern = np.zeros((height, width))
        for a in (angle, angle + np.pi):
            cy = cy0 + radius * np.sin(a) + jy
            cx = cx0 + radius * np.cos(a) + jx
            pattern += _blob(gy, gx, cy, cx, blob_width)
        marker = 0.0 if classes == 1 else _MARKER_SPAN * k / (classes - 1)
        for ch in range(channels):
            img = amp * pattern + rng.normal(0.0, _PIXEL_NOISE, size=(height, width))
            img[:msz, :msz] = _MARKER_BASE + marker + rng.normal(0.0, _MARKER_NOISE, size=(msz, msz))
            images[i, ch] = np.clip(img, 0.0, 1.0).astype(np.float32)
        labels[i] = k
    return Dataset(images, labels, classes)
