"""IDX image loading and deterministic synthetic image-classification data."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray          # [n, c, h, w], values in [0, 1]
    labels: np.ndarray          # [n], ints in [0, n_classes)
    n_classes: int
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError("images must be [n, c, h, w] with one label each")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.arange(len(self)) if self.train_idx is None else self.train_idx
        return self.images[idx], self.labels[idx]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        if self.val_idx is None:
            raise ValueError("dataset has no validation split")
        return self.images[self.val_idx], self.labels[self.val_idx]


def _read(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, what: str) -> np.ndarray:
    if len(raw) < 8:
        raise ValueError(f"{what}: file too short for an IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise ValueError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise ValueError(f"{what}: truncated data ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an IDX3 image file and IDX1 label file (optionally gzipped)."""
    images = _parse_idx(_read(images_path), IDX_IMAGES, str(images_path))
    labels = _parse_idx(_read(labels_path), IDX_LABELS, str(labels_path))
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    x = (images.astype(np.float32) / 255.0)[:, None]
    y = labels.astype(np.int64)
    k = n_classes if n_classes is not None else int(y.max()) + 1 if len(y) else 0
    return Dataset(x, y, k)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 ``images[n, h, w]`` and ``labels[n]`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES) + struct.pack(">3I", *images.shape) + images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_LABELS) + struct.pack(">I", len(labels)) + labels.tobytes())


def class_templates(size: int, k: int, seed: int, blobs: int = 2, sigma: float | None = None) -> np.ndarray:
    """``k`` images of ``blobs`` Gaussian bumps each, peak-normalised to 1."""
    rng = np.random.default_rng([seed, 0x7E3])
    sigma = size / 8 if sigma is None else sigma
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lo, hi = sigma, size - 1 - sigma
    out = np.zeros((k, size, size))
    for c in range(k):
        for _ in range(blobs):
            cy, cx = rng.uniform(lo, hi, 2)
            out[c] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        out[c] /= out[c].max()
    return out


def synth_blobs(n: int, size: int, k: int, seed: int, noise: float = 0.5, jitter: int = 0,
                blobs: int = 2) -> Dataset:
    """Class-conditional blob patterns plus Gaussian pixel noise.

    Each class owns a fixed template of ``blobs`` Gaussian bumps. A sample is
    its class template, shifted by up to ``jitter`` pixels (circularly), plus
    ``noise``-scaled Gaussian noise, clipped to [0, 1]. Classes are balanced
    to within one example.
    """
    if n < k or k < 2:
        raise ValueError("need k >= 2 classes and n >= k samples")
    if size < 4:
        raise ValueError("size must be at least 4")
    if noise < 0 or jitter < 0:
        raise ValueError("noise and jitter must be non-negative")
    templates = class_templates(size, k, seed, blobs)
    rng = np.random.default_rng([seed, 0x5A7])
    labels = rng.permutation(np.arange(n) % k)
    x = templates[labels]
    if jitter:
        shifts = rng.integers(-jitter, jitter + 1, size=(n, 2))
        x = np.stack([np.roll(img, tuple(s), axis=(0, 1)) for img, s in zip(x, shifts)])
    x = x + noise * rng.standard_normal(x.shape)
    x = np.clip(x, 0.0, 1.0).astype(np.float32)[:, None]
    return Dataset(x, labels, k)


def split_per_class(ds: Dataset, per_class_val: int, seed: int) -> Dataset:
    """Hold out exactly ``per_class_val`` random examples of every class."""
    if per_class_val < 0:
        raise ValueError("per_class_val must be non-negative")
    rng = np.random.default_rng([seed, 0x59])
    val = []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < per_class_val:
            raise ValueError(f"class {c} has {len(idx)} examples, fewer than {per_class_val}")
        val.append(rng.choice(idx, per_class_val, replace=False))
    val_idx = np.sort(np.concatenate(val)) if val else np.zeros(0, dtype=np.int64)
    mask = np.ones(len(ds), dtype=bool)
    mask[val_idx] = False
    return replace(ds, train_idx=np.flatnonzero(mask), val_idx=val_idx.astype(np.int64))


def standardize(train: np.ndarray, *others: np.ndarray) -> tuple[list[np.ndarray], tuple[float, float]]:
    """Shift and scale every array by the mean and std of ``train``."""
    mu = float(np.mean(train))
    sd = float(np.std(train)) or 1.0
    return [((a - mu) / sd).astype(np.float32) for a in (train, *others)], (mu, sd)
