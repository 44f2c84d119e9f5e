"""Small classifiers built on the tensor engine, plus the f = h o g split."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)

LAYER_KINDS = ("dense", "conv2d", "relu", "maxpool2d", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``dims`` by kind:

    dense: (in, out); conv2d: (in_ch, out_ch, kernel, stride, same_pad);
    maxpool2d: (size,); relu and flatten: ().
    """

    kind: str
    dims: tuple[int, ...] = ()
    linbp_flag: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.linbp_flag and self.kind != "relu":
            raise ValueError("linbp_flag is only meaningful on relu layers")


def dense(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("dense", (n_in, n_out))


def conv(in_ch: int, out_ch: int, k: int = 3, stride: int = 1, same: bool = True) -> LayerSpec:
    return LayerSpec("conv2d", (in_ch, out_ch, k, stride, int(same)))


RELU = LayerSpec("relu")
POOL = LayerSpec("maxpool2d", (2,))
FLAT = LayerSpec("flatten")


def output_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape of ``layer`` for per-sample input ``shape``."""
    if layer.kind == "dense":
        if shape != (layer.dims[0],):
            raise T.ShapeError(f"dense expects ({layer.dims[0]},), got {shape}")
        return (layer.dims[1],)
    if layer.kind == "conv2d":
        cin, cout, k, s, same = layer.dims
        if len(shape) != 3 or shape[0] != cin:
            raise T.ShapeError(f"conv2d expects {cin} channels, got {shape}")
        pad = (k - 1) // 2 if same else 0
        h = (shape[1] + 2 * pad - k) // s + 1
        w = (shape[2] + 2 * pad - k) // s + 1
        return (cout, h, w)
    if layer.kind == "maxpool2d":
        n = layer.dims[0]
        if len(shape) != 3 or shape[1] % n or shape[2] % n:
            raise T.ShapeError(f"maxpool2d cannot pool {shape}")
        return (shape[0], shape[1] // n, shape[2] // n)
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    return shape


# ---------------------------------------------------------------------- zoo


@dataclass(frozen=True)
class ArchEntry:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    default_split: int  # output of the middle ReLU


def _registry(image_shape=(1, 16, 16), num_classes: int = 10) -> dict[str, ArchEntry]:
    c, h, w = image_shape
    n = c * h * w
    q = (h // 4) * (w // 4)
    return {
        "mlp-2": ArchEntry(
            (dense(n, 256), RELU, dense(256, num_classes)), (n,), 2),
        "mlp-3": ArchEntry(
            (dense(n, 256), RELU, dense(256, 128), RELU, dense(128, num_classes)), (n,), 2),
        "cnn-small": ArchEntry(
            (conv(c, 16), RELU, POOL, conv(16, 32), RELU, POOL, FLAT,
             dense(32 * q, 128), RELU, dense(128, num_classes)), image_shape, 5),
        "cnn-wide": ArchEntry(
            (conv(c, 24, k=5), RELU, POOL, conv(24, 48, stride=2), RELU, FLAT,
             dense(48 * q, 128), RELU, dense(128, num_classes)), image_shape, 5),
    }


ARCH_IDS = tuple(_registry())


def arch_entry(arch_id: str, image_shape=(1, 16, 16), num_classes: int = 10) -> ArchEntry:
    reg = _registry(tuple(image_shape), num_classes)
    if arch_id not in reg:
        raise KeyError(f"unknown arch_id {arch_id!r}; known: {', '.join(reg)}")
    return reg[arch_id]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int):
        super().__init__(f"training diverged at epoch {epoch} (step {step})")
        self.epoch = epoch
        self.step = step


@dataclass
class Model:
    arch_id: str
    layers: tuple[LayerSpec, ...]
    params: dict[str, Tensor]
    input_shape: tuple[int, ...]
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            if layer.kind == "dense":
                self._expect(f"{i}.weight", (layer.dims[0], layer.dims[1]))
                self._expect(f"{i}.bias", (layer.dims[1],))
            elif layer.kind == "conv2d":
                cin, cout, k = layer.dims[:3]
                self._expect(f"{i}.weight", (cout, cin, k, k))
                self._expect(f"{i}.bias", (cout,))
            shape = output_shape(layer, shape)
        if len(shape) != 1:
            raise T.ShapeError(f"model output must be a vector, got {shape}")
        self.num_classes = shape[0]

    def _expect(self, name, shape):
        p = self.params.get(name)
        if p is None or p.shape != shape:
            got = None if p is None else p.shape
            raise T.ShapeError(f"param {name}: expected {shape}, got {got}")

    @property
    def name(self) -> str:
        return f"{self.arch_id}@{self.seed}"

    def param_names(self) -> list[str]:
        names = []
        for i, layer in enumerate(self.layers):
            if layer.kind in ("dense", "conv2d"):
                names += [f"{i}.weight", f"{i}.bias"]
        return names

    def shape_at(self, k: int) -> tuple[int, ...]:
        """Per-sample shape of the input to layer ``k``."""
        shape = tuple(self.input_shape)
        for layer in self.layers[:k]:
            shape = output_shape(layer, shape)
        return shape

    def relu_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "relu"]

    def with_linbp(self, n_linear: int) -> "Model":
        """Same parameters, last ``n_linear`` ReLUs in linear backward mode."""
        relus = self.relu_indices()
        if not 0 <= n_linear <= len(relus):
            raise ValueError(f"n_linear_relus={n_linear} but model has {len(relus)} ReLUs")
        chosen = set(relus[len(relus) - n_linear:])
        layers = tuple(replace(l, linbp_flag=(i in chosen)) if l.kind == "relu" else l
                       for i, l in enumerate(self.layers))
        return Model(self.arch_id, layers, self.params, self.input_shape, self.seed, self.metadata)

    def run(self, x: Tensor, start: int = 0, stop: int | None = None) -> Tensor:
        """Apply layers ``[start, stop)`` to an already shaped batch."""
        stop = len(self.layers) if stop is None else stop
        for i in range(start, stop):
            layer = self.layers[i]
            if layer.kind == "dense":
                x = T.add(T.matmul(x, self.params[f"{i}.weight"]), self.params[f"{i}.bias"])
            elif layer.kind == "conv2d":
                x = T.conv2d(x, self.params[f"{i}.weight"], self.params[f"{i}.bias"],
                             stride=layer.dims[3], padding="same" if layer.dims[4] else "valid")
            elif layer.kind == "relu":
                x = T.relu(x, linear_backward=layer.linbp_flag)
            elif layer.kind == "maxpool2d":
                x = T.maxpool2d(x, layer.dims[0])
            else:
                x = T.flatten(x)
        return x

    def prepare(self, x) -> Tensor:
        """Reshape an image batch to this model's input layout."""
        if isinstance(x, Tensor):
            if x.shape[1:] == tuple(self.input_shape):
                return x
            return T.reshape(x, (x.shape[0], *self.input_shape))
        x = np.asarray(x, dtype=np.float32)
        return Tensor(x.reshape(x.shape[0], *self.input_shape))

    def forward(self, x) -> Tensor:
        return self.run(self.prepare(x))

    def logits(self, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.num_classes), np.float32)

    def predict(self, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
        return self.logits(x, batch_size).argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(x) == y).mean()) if len(y) else float("nan")

    def checksum(self) -> int:
        crc = 0
        for name in self.param_names():
            crc = zlib.crc32(self.params[name].data.tobytes(), crc)
        return crc


def build(arch_id: str, seed: int, image_shape: Sequence[int] = (1, 16, 16),
          num_classes: int = 10) -> Model:
    """Deterministic He-normal initialization of a registered architecture."""
    entry = arch_entry(arch_id, tuple(image_shape), num_classes)
    rng = np.random.default_rng([seed, zlib.crc32(arch_id.encode())])
    params: dict[str, Tensor] = {}
    for i, layer in enumerate(entry.layers):
        if layer.kind == "dense":
            fan_in, fan_out = layer.dims
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            params[f"{i}.weight"] = Tensor(w)
            params[f"{i}.bias"] = Tensor(np.zeros(fan_out))
        elif layer.kind == "conv2d":
            cin, cout, k = layer.dims[:3]
            w = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), size=(cout, cin, k, k))
            params[f"{i}.weight"] = Tensor(w)
            params[f"{i}.bias"] = Tensor(np.zeros(cout))
    return Model(arch_id, entry.layers, params, entry.input_shape, seed,
                 {"default_split": entry.default_split, "trained": False})


def train(model: Model, dataset, epochs: int, lr: float, batch_size: int = 64,
          momentum: float = 0.9) -> Model:
    """Minibatch SGD with momentum on the train split; returns a new Model.

    Shuffling is seeded by the model seed, so runs are reproducible. Final
    train/test accuracy lands in ``metadata``.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    x_tr, y_tr = dataset.train
    if len(y_tr) == 0:
        raise ValueError("empty training split")
    names = model.param_names()
    params = {k: Tensor(v.data, requires_grad=True) for k, v in model.params.items()}
    velocity = {k: np.zeros_like(params[k].data, dtype=np.float64) for k in names}
    work = Model(model.arch_id, model.layers, params, model.input_shape, model.seed)
    rng = np.random.default_rng([model.seed, 1])
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(y_tr))
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            try:
                loss = T.softmax_ce(work.forward(x_tr[idx]), y_tr[idx])
                loss.backward()
            except T.NonFiniteError as exc:
                raise TrainingDiverged(epoch, step) from exc
            for k in names:
                velocity[k] = momentum * velocity[k] + params[k].grad
                new = params[k].data - lr * velocity[k]
                if not np.isfinite(new).all():
                    raise TrainingDiverged(epoch, step)
                params[k].data = new.astype(np.float32)
            step += 1
        log.debug("%s epoch %d loss %.4f", model.name, epoch, loss.item())

    frozen = {k: Tensor(v.data) for k, v in params.items()}
    meta = dict(model.metadata)
    out = Model(model.arch_id, model.layers, frozen, model.input_shape, model.seed, meta)
    x_te, y_te = dataset.test
    meta.update(trained=True, epochs=int(model.metadata.get("epochs", 0)) + epochs, lr=lr,
                train_acc=out.accuracy(x_tr, y_tr), test_acc=out.accuracy(x_te, y_te))
    return out


# -------------------------------------------------------------------- split


class SplitModel:
    """``f = h o g`` with ``g`` = layers ``[0, k)`` and ``h`` = layers ``[k, L)``.

    ``g`` returns features flattened to ``(B, m)``; ``h`` restores the layer
    shape before continuing, so ``h(g(x))`` reproduces ``forward(x)`` exactly.
    """

    def __init__(self, model: Model, k: int | None = None):
        if k is None:
            k = model.metadata.get("default_split")
            if k is None:
                k = arch_entry(model.arch_id).default_split
        if not 0 < k < len(model.layers):
            raise ValueError(f"split depth k={k} outside (0, {len(model.layers)})")
        self.model = model
        self.k = int(k)
        self.feature_shape = model.shape_at(self.k)
        self.m = int(np.prod(self.feature_shape))

    def g(self, x) -> Tensor:
        feat = self.model.run(self.model.prepare(x), 0, self.k)
        return T.flatten(feat) if len(self.feature_shape) > 1 else feat

    def h(self, feat) -> Tensor:
        feat = feat if isinstance(feat, Tensor) else Tensor(feat)
        if len(self.feature_shape) > 1:
            feat = T.reshape(feat, (feat.shape[0], *self.feature_shape))
        return self.model.run(feat, self.k)

    def forward(self, x) -> Tensor:
        return self.h(self.g(x))

    def with_linbp(self, n_linear: int) -> "SplitModel":
        return SplitModel(self.model.with_linbp(n_linear), self.k)

    def features(self, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
        out = [self.g(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(out)


def split(model: Model, k: int | None = None) -> SplitModel:
    return SplitModel(model, k)


def loss_and_feature(sm: SplitModel, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy of ``h(g(x))`` against ``y`` and ``g(x)``."""
    feat = sm.g(x)
    loss = T.softmax_ce(sm.h(feat), y, reduction="none")
    return loss.data, feat.data


def zoo_ids(archs: Iterable[str], seeds: Iterable[int]) -> list[tuple[str, int]]:
    return [(a, s) for s in seeds for a in archs]
