"""Binary artifacts: checkpoints, trajectory dumps, guide files, adversarial batches.

All integers and floats are little-endian. Every file starts with a 4-byte
magic and a u32 format version.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import Trajectory
from .guides import DirectionalGuide
from .models import LAYER_KINDS, LayerSpec, Model
from .tensor import Tensor

VERSION = 1
CKPT_MAGIC = b"ILAF"
TRAJ_MAGIC = b"ILAT"
GUIDE_MAGIC = b"ILAG"
BATCH_MAGIC = b"ILAB"


class FormatError(ValueError):
    pass


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def atomic_write(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated file")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))
        return vals if len(vals) > 1 else vals[0]

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def blob(self) -> bytes:
        return self.take(self.unpack("I"))

    def done(self):
        if self.pos != len(self.raw):
            raise FormatError(f"{self.path}: {len(self.raw) - self.pos} trailing bytes")


def _header(raw: bytes, magic: bytes, path) -> _Reader:
    rd = _Reader(raw, path)
    if rd.take(4) != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    ver = rd.unpack("I")
    if ver != VERSION:
        raise FormatError(f"{path}: unsupported format version {ver}")
    return rd


def _blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


# ----------------------------------------------------------------- checkpoint


def dump_checkpoint(model: Model) -> bytes:
    out = [CKPT_MAGIC, struct.pack("<I", VERSION), _blob(model.arch_id.encode()),
           struct.pack("<Q", model.seed & (2**64 - 1)),
           struct.pack("<B", len(model.input_shape)),
           struct.pack(f"<{len(model.input_shape)}I", *model.input_shape),
           struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        out.append(struct.pack("<BBB", LAYER_KINDS.index(layer.kind), int(layer.linbp_flag),
                               len(layer.dims)))
        out.append(struct.pack(f"<{len(layer.dims)}i", *layer.dims))
    out.append(_blob(json.dumps(model.metadata, sort_keys=True).encode()))
    for name in model.param_names():
        out.append(_f32(model.params[name].data))
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def load_checkpoint_bytes(raw: bytes, path="<bytes>") -> Model:
    if len(raw) < 12:
        raise FormatError(f"{path}: too short")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{path}: CRC mismatch")
    rd = _header(body, CKPT_MAGIC, path)
    arch_id = rd.blob().decode()
    seed = rd.unpack("Q")
    ndim = rd.unpack("B")
    input_shape = tuple(struct.unpack(f"<{ndim}I", rd.take(4 * ndim)))
    layers = []
    for _ in range(rd.unpack("I")):
        kind, flag, nd = rd.unpack("BBB")
        dims = struct.unpack(f"<{nd}i", rd.take(4 * nd))
        layers.append(LayerSpec(LAYER_KINDS[kind], tuple(dims), bool(flag)))
    metadata = json.loads(rd.blob().decode())
    # a skeleton with zero params gives the names and shapes in order
    shapes = {}
    for i, layer in enumerate(layers):
        if layer.kind == "dense":
            shapes[f"{i}.weight"] = (layer.dims[0], layer.dims[1])
            shapes[f"{i}.bias"] = (layer.dims[1],)
        elif layer.kind == "conv2d":
            cin, cout, k = layer.dims[:3]
            shapes[f"{i}.weight"] = (cout, cin, k, k)
            shapes[f"{i}.bias"] = (cout,)
    params = {}
    for name, shp in shapes.items():
        params[name] = Tensor(rd.f32(int(np.prod(shp))).reshape(shp))
    rd.done()
    return Model(arch_id, tuple(layers), params, input_shape, int(seed), metadata)


def save_checkpoint(model: Model, path: str | Path) -> None:
    atomic_write(path, dump_checkpoint(model))


def load_checkpoint(path: str | Path) -> Model:
    return load_checkpoint_bytes(Path(path).read_bytes(), path)


# ----------------------------------------------------------------- trajectory


def dump_trajectory(tr: Trajectory, cfg_hash: str, store_inputs: bool = False) -> bytes:
    """Header (index, run, cfg hash, label, m, image shape) + per-sample records."""
    xs = tr.inputs if store_inputs else None
    if store_inputs and xs is None:
        raise ValueError("trajectory carries no inputs to store")
    img_shape = tuple(xs.shape[1:]) if xs is not None else ()
    m = tr.features.shape[1]
    out = [TRAJ_MAGIC, struct.pack("<I", VERSION),
           struct.pack("<II", tr.index, tr.run), bytes.fromhex(cfg_hash)[:32].ljust(32, b"\0"),
           struct.pack("<III", tr.label, m, len(tr.t)),
           struct.pack("<B", len(img_shape)), struct.pack(f"<{len(img_shape)}I", *img_shape)]
    for j in range(len(tr.t)):
        out.append(struct.pack("<If", int(tr.t[j]), float(tr.losses[j])))
        out.append(_f32(tr.features[j]))
        if xs is not None:
            out.append(_f32(xs[j]))
    return b"".join(out)


def load_trajectory_bytes(raw: bytes, path="<bytes>") -> tuple[Trajectory, str]:
    rd = _header(raw, TRAJ_MAGIC, path)
    index, run = rd.unpack("II")
    chash = rd.take(32).hex()
    label, m, count = rd.unpack("III")
    nd = rd.unpack("B")
    img_shape = tuple(struct.unpack(f"<{nd}I", rd.take(4 * nd)))
    n = int(np.prod(img_shape)) if nd else 0
    ts, ls = np.zeros(count, np.int64), np.zeros(count)
    feats = np.zeros((count, m), np.float32)
    xs = np.zeros((count, *img_shape), np.float32) if nd else None
    for j in range(count):
        ts[j], ls[j] = rd.unpack("If")
        feats[j] = rd.f32(m)
        if xs is not None:
            xs[j] = rd.f32(n).reshape(img_shape)
    rd.done()
    final = xs[-1].copy() if xs is not None else None
    return Trajectory(index, run, label, ts, feats, ls, final, xs), chash


def trajectory_filename(index: int, run: int) -> str:
    return f"traj_{index:06d}_r{run:02d}.bin"


def save_trajectory(tr: Trajectory, directory: str | Path, cfg_hash: str,
                    store_inputs: bool = False) -> Path:
    path = Path(directory) / trajectory_filename(tr.index, tr.run)
    atomic_write(path, dump_trajectory(tr, cfg_hash, store_inputs))
    return path


def load_trajectory(path: str | Path) -> tuple[Trajectory, str]:
    return load_trajectory_bytes(Path(path).read_bytes(), path)


# --------------------------------------------------------------------- guides


def dump_guides(guides: Sequence[DirectionalGuide], method: str, hyper: dict,
                indices: Sequence[int]) -> bytes:
    if len(guides) != len(indices):
        raise ValueError("one index per guide required")
    m = guides[0].m if guides else 0
    head = {"method": method, "hyper": hyper, "m": m, "count": len(guides),
            "indices": [int(i) for i in indices],
            "provenance": [g.provenance for g in guides]}
    out = [GUIDE_MAGIC, struct.pack("<I", VERSION),
           _blob(json.dumps(head, sort_keys=True, default=str).encode())]
    for g in guides:
        if g.m != m:
            raise ValueError("guides differ in feature dimension")
        out += [_f32(g.w), _f32(g.anchor)]
    return b"".join(out)


def load_guides_bytes(raw: bytes, path="<bytes>") -> tuple[list[DirectionalGuide], dict]:
    rd = _header(raw, GUIDE_MAGIC, path)
    head = json.loads(rd.blob().decode())
    m = head["m"]
    guides = []
    for prov in head["provenance"]:
        w = rd.f32(m).astype(np.float64)
        anchor = rd.f32(m).astype(np.float64)
        guides.append(DirectionalGuide(w, anchor, prov))
    rd.done()
    return guides, head


def save_guides(path, guides, method, hyper, indices) -> None:
    atomic_write(path, dump_guides(guides, method, hyper, indices))


def load_guides(path) -> tuple[list[DirectionalGuide], dict]:
    return load_guides_bytes(Path(path).read_bytes(), path)


# -------------------------------------------------------- adversarial batches


@dataclass
class AdvBatch:
    indices: np.ndarray
    labels: np.ndarray
    images: np.ndarray  # (B, *image_shape) float32
    header: dict

    def __len__(self) -> int:
        return len(self.indices)


def dump_adv_batch(batch: AdvBatch) -> bytes:
    head = dict(batch.header)
    head["count"] = len(batch)
    head["image_shape"] = list(batch.images.shape[1:])
    out = [BATCH_MAGIC, struct.pack("<I", VERSION),
           _blob(json.dumps(head, sort_keys=True, default=str).encode())]
    for i, lab, img in zip(batch.indices, batch.labels, batch.images):
        out += [struct.pack("<II", int(i), int(lab)), _f32(img)]
    return b"".join(out)


def load_adv_batch_bytes(raw: bytes, path="<bytes>") -> AdvBatch:
    rd = _header(raw, BATCH_MAGIC, path)
    head = json.loads(rd.blob().decode())
    shape = tuple(head["image_shape"])
    n = int(np.prod(shape))
    count = head["count"]
    idx, lab = np.zeros(count, np.int64), np.zeros(count, np.int64)
    imgs = np.zeros((count, *shape), np.float32)
    for j in range(count):
        idx[j], lab[j] = rd.unpack("II")
        imgs[j] = rd.f32(n).reshape(shape)
    rd.done()
    return AdvBatch(idx, lab, imgs, head)


def save_adv_batch(batch: AdvBatch, path) -> None:
    atomic_write(path, dump_adv_batch(batch))


def load_adv_batch(path) -> AdvBatch:
    return load_adv_batch_bytes(Path(path).read_bytes(), path)
