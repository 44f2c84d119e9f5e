"""Desk-scale image data: a seeded synthetic shape set and IDX file I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NUM_CLASSES = 10
IMAGE_SIZE = 16

CLASS_NAMES = (
    "disk", "ring", "square", "frame", "hbar",
    "vbar", "diag", "antidiag", "plus", "triangle",
)


@dataclass(frozen=True)
class ShapeParams:
    """Knobs of the synthetic generator; defaults are the pinned desk set."""

    size: int = IMAGE_SIZE
    jitter: float = 1.0
    contrast: tuple[float, float] = (0.12, 0.25)
    background: tuple[float, float] = (0.3, 0.7)
    noise: float = 0.04


@dataclass
class Dataset:
    images: np.ndarray  # (N, 1, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: np.ndarray  # (N,) str, "train" or "test"

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if not (len(self.images) == len(self.labels) == len(self.split)):
            raise ValueError("images, labels and split differ in length")
        if self.images.min(initial=0.0) < 0.0 or self.images.max(initial=0.0) > 1.0:
            raise ValueError("images must lie in [0, 1]")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    @property
    def num_classes(self) -> int:
        return NUM_CLASSES

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.split == which
        return self.images[mask], self.labels[mask]

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.subset("train")

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.subset("test")


def _soft(d: np.ndarray) -> np.ndarray:
    # anti-aliased inside indicator from a signed distance (negative inside)
    return np.clip(0.5 - d, 0.0, 1.0)


def _draw(label: int, cx: float, cy: float, r: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    dist = np.hypot(dx, dy)
    t = max(1.0, r / 3.0)  # stroke width
    if label == 0:
        m = _soft(dist - r)
    elif label == 1:
        m = _soft(np.abs(dist - r) - t / 2)
    elif label == 2:
        m = _soft(np.maximum(np.abs(dx), np.abs(dy)) - r * 0.85)
    elif label == 3:
        m = _soft(np.abs(np.maximum(np.abs(dx), np.abs(dy)) - r * 0.85) - t / 2)
    elif label == 4:
        m = _soft(np.maximum(np.abs(dy) - t / 2, np.abs(dx) - r))
    elif label == 5:
        m = _soft(np.maximum(np.abs(dx) - t / 2, np.abs(dy) - r))
    elif label == 6:
        m = _soft(np.maximum(np.abs(dx - dy) / np.sqrt(2) - t / 2, np.abs(dx + dy) / np.sqrt(2) - r))
    elif label == 7:
        m = _soft(np.maximum(np.abs(dx + dy) / np.sqrt(2) - t / 2, np.abs(dx - dy) / np.sqrt(2) - r))
    elif label == 8:
        h = np.maximum(np.abs(dy) - t / 2, np.abs(dx) - r)
        v = np.maximum(np.abs(dx) - t / 2, np.abs(dy) - r)
        m = _soft(np.minimum(h, v))
    elif label == 9:
        # upward triangle: inside three half-planes
        e1 = dy - r * 0.7
        e2 = (-dy * 0.5 + dx * 0.866) - r * 0.7
        e3 = (-dy * 0.5 - dx * 0.866) - r * 0.7
        m = _soft(np.maximum(np.maximum(e1, e2), e3))
    else:
        raise ValueError(f"no shape for label {label}")
    return m


def make_shapes(n_train: int = 6000, n_test: int = 2000, seed: int = 0,
                params: ShapeParams | None = None) -> Dataset:
    """Generate the built-in 10-class shape dataset.

    Images are quantized to multiples of 1/255 so they survive an IDX round
    trip unchanged. Train and test draws come from disjoint RNG streams.
    """
    p = params or ShapeParams()
    parts = []
    for tag, count in (("train", n_train), ("test", n_test)):
        rng = np.random.default_rng([seed, 0 if tag == "train" else 1])
        labels = np.arange(count) % NUM_CLASSES
        rng.shuffle(labels)
        imgs = np.empty((count, 1, p.size, p.size), dtype=np.float32)
        mid = (p.size - 1) / 2
        for i, lab in enumerate(labels):
            cx, cy = mid + rng.uniform(-p.jitter, p.jitter, size=2)
            r = rng.uniform(0.22, 0.32) * p.size
            bg = rng.uniform(*p.background)
            amp = rng.uniform(*p.contrast) * rng.choice((-1.0, 1.0))
            img = bg + amp * _draw(int(lab), cx, cy, r, p.size)
            img = img + rng.normal(0.0, p.noise, size=img.shape)
            imgs[i, 0] = np.round(np.clip(img, 0.0, 1.0) * 255) / 255
        parts.append((imgs, labels, np.full(count, tag)))
    return Dataset(
        np.concatenate([q[0] for q in parts]),
        np.concatenate([q[1] for q in parts]),
        np.concatenate([q[2] for q in parts]),
    )


# ------------------------------------------------------------------ IDX files

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX array (big-endian, magic ``00 00 <type> <ndim>``)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: not an IDX file")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise ValueError(f"{path}: unknown IDX type 0x{code:02x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = _IDX_TYPES[code]
    count = int(np.prod(dims)) if dims else 1
    body = raw[4 + 4 * ndim:]
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"{path}: expected {count} items, found {len(body) // dtype.itemsize}")
    return np.frombuffer(body, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path: str | Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    for code, dt in _IDX_TYPES.items():
        if dt.newbyteorder("=") == arr.dtype:
            break
    else:
        raise ValueError(f"dtype {arr.dtype} has no IDX code")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(dt).tobytes())


IDX_NAMES = {
    ("train", "images"): "train-images-idx3-ubyte",
    ("train", "labels"): "train-labels-idx1-ubyte",
    ("test", "images"): "t10k-images-idx3-ubyte",
    ("test", "labels"): "t10k-labels-idx1-ubyte",
}


def save_idx_dataset(ds: Dataset, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for tag in ("train", "test"):
        imgs, labels = ds.subset(tag)
        u8 = np.round(imgs[:, 0] * 255).astype(np.uint8)
        write_idx(d / IDX_NAMES[(tag, "images")], u8)
        write_idx(d / IDX_NAMES[(tag, "labels")], labels.astype(np.uint8))


def load_idx_dataset(directory: str | Path) -> Dataset:
    """Load a train/test pair of IDX image+label files (e.g. MNIST layout)."""
    d = Path(directory)
    parts = []
    for tag in ("train", "test"):
        imgs = read_idx(d / IDX_NAMES[(tag, "images")])
        labels = read_idx(d / IDX_NAMES[(tag, "labels")])
        if imgs.ndim != 3 or labels.ndim != 1 or len(imgs) != len(labels):
            raise ValueError(f"{d}: malformed {tag} IDX pair")
        x = imgs.astype(np.float32)
        if imgs.dtype == np.uint8:
            x /= 255.0
        parts.append((x[:, None], labels.astype(np.int64), np.full(len(x), tag)))
    return Dataset(
        np.concatenate([q[0] for q in parts]),
        np.concatenate([q[1] for q in parts]),
        np.concatenate([q[2] for q in parts]),
    )
