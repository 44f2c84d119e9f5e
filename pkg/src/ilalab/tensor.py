"""Dense f32 tensors with a reverse-mode tape.

Only the handful of primitives needed by small MLP/CNN classifiers are
provided. Values are stored as float32; reductions (matmul, conv2d,
cross-entropy) accumulate in float64 and gradients are propagated in
float64, then cast back on the leaves.

Broadcasting is limited to bias-add, i.e. ``add(a, b)`` where ``b`` has the
shape of the trailing axis of ``a`` (dense) or one entry per channel of an
NCHW tensor (conv). Everything else needs matching shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "BackwardError",
    "NonFiniteError",
    "ShapeError",
    "Node",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "conv2d",
    "flatten",
    "forward_op",
    "matmul",
    "maxpool2d",
    "relu",
    "relu_backward_mode",
    "reshape",
    "softmax_ce",
]


class NonFiniteError(ValueError):
    """Raised when a tensor would hold NaN or Inf."""


class ShapeError(ValueError):
    """Raised when operand shapes do not fit the op."""


class BackwardError(RuntimeError):
    """Raised for invalid backward requests."""


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{where}: non-finite values")


class Tensor:
    """Row-major float32 array that can take part in reverse-mode AD."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_node")

    def __init__(self, data: Any, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float32, copy=True)
        _check_finite(arr, "Tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal constructor: arr is already float32 and checked
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._tape = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def node(self) -> "Node | None":
        return self._node

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def backward(self, grad: Any = None) -> None:
        backward(self, grad)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    output: int
    saved: dict[str, Any]
    vjp: Callable[[np.ndarray, dict[str, Any]], tuple[np.ndarray | None, ...]] = field(repr=False)


class Tape:
    """Append-only record of ops; nodes are stored in creation order.

    Leaves are never bound to a tape, so parameters can be shared by many
    independent forward passes.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.tensors: list[Tensor] = []
        self._index: dict[int, int] = {}
        self.consumed = False

    def _id(self, t: Tensor) -> int:
        key = id(t)
        if key not in self._index:
            self._index[key] = len(self.tensors)
            self.tensors.append(t)
        return self._index[key]

    def record(self, kind, inputs, output, saved, vjp) -> Node:
        if self.consumed:
            raise BackwardError("tape already consumed by backward()")
        ids = tuple(self._id(t) for t in inputs)
        out_id = self._id(output)
        node = Node(kind, ids, out_id, saved, vjp)
        self.nodes.append(node)
        output._node = node
        output._tape = self
        return node


def _result(kind, inputs: Sequence[Tensor], out: np.ndarray, saved, vjp) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError below
        out = np.ascontiguousarray(out, dtype=np.float32)
    _check_finite(out, kind)
    needs = any(t.requires_grad for t in inputs)
    res = Tensor._wrap(out, needs)
    if needs:
        tapes = {id(t._tape): t._tape for t in inputs if t._tape is not None}
        if len(tapes) > 1:
            raise BackwardError(f"{kind}: inputs belong to different tapes")
        tape = next(iter(tapes.values())) if tapes else Tape()
        tape.record(kind, inputs, res, saved, vjp)
    return res


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D (or matrix-vector) product, accumulated in float64."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A = a.data.astype(np.float64)
    B = b.data.astype(np.float64)
    out = A @ B

    def vjp(g, s):
        ga = gb = None
        if a.requires_grad:
            ga = np.outer(g, B) if B.ndim == 1 else g @ B.T
        if b.requires_grad:
            gb = A.T @ g
        return ga, gb

    return _result("matmul", (a, b), out, {}, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may also be a per-feature or per-channel bias."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        bview, axes = b.data, None
    elif b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]:
        bview, axes = b.data, (0,)
    elif b.data.ndim == 1 and a.data.ndim == 4 and a.shape[1] == b.shape[0]:
        bview, axes = b.data[None, :, None, None], (0, 2, 3)
    else:
        raise ShapeError(f"add: cannot add {b.shape} to {a.shape}")
    out = a.data.astype(np.float64) + bview

    def vjp(g, s):
        gb = None
        if b.requires_grad:
            gb = g if axes is None else g.sum(axis=axes)
        return (g if a.requires_grad else None), gb

    return _result("add", (a, b), out, {}, vjp)


def relu(x: Tensor, linear_backward: bool = False) -> Tensor:
    """ReLU. With ``linear_backward`` the backward pass is the identity."""
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, np.float32(0.0))
    saved = {"mask": mask, "mode": "linear" if linear_backward else "standard"}

    def vjp(g, s):
        if s["mode"] == "linear":
            return (g,)
        return (g * s["mask"],)

    return _result("relu", (x,), out, saved, vjp)


def relu_backward_mode(node: Node, mode: str) -> None:
    """Switch the gradient rule of a recorded ReLU node."""
    if node.kind != "relu":
        raise ValueError(f"backward mode applies to relu nodes, not {node.kind!r}")
    if mode not in ("standard", "linear"):
        raise ValueError(f"unknown relu backward mode {mode!r}")
    node.saved["mode"] = mode


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: {x.shape} -> {tuple(shape)}") from exc
    in_shape = x.shape

    def vjp(g, s):
        return (g.reshape(in_shape),)

    return _result("reshape", (x,), out, {}, vjp)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    x = _as_tensor(x)
    if x.data.ndim < 1:
        raise ShapeError("flatten: needs a batch axis")
    return reshape(x, (x.shape[0], -1))


def _pad_amount(k: int, padding: str) -> int:
    if padding == "valid":
        return 0
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError("conv2d: 'same' padding needs an odd kernel")
        return (k - 1) // 2
    raise ShapeError(f"conv2d: unknown padding {padding!r}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    B, C, Ho, Wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw), Ho, Wo


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: str = "valid") -> Tensor:
    """Direct 2-D cross-correlation over NCHW input with OIHW weights."""
    x, w = _as_tensor(x), _as_tensor(w)
    if stride not in (1, 2):
        raise ShapeError("conv2d: stride must be 1 or 2")
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} vs weight {w.shape}")
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias {b.shape} for {w.shape[0]} filters")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    ph, pw = _pad_amount(kh, padding), _pad_amount(kw, padding)
    xp = x.data.astype(np.float64)
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    Hp, Wp = xp.shape[2], xp.shape[3]
    if Hp < kh or Wp < kw:
        raise ShapeError("conv2d: kernel larger than padded input")
    cols, Ho, Wo = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(O, -1).astype(np.float64)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g, s):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            if stride == 1 and C >= O:
                # full correlation of g with the flipped, channel-swapped kernel
                gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                gc, _, _ = _im2col(gp, kh, kw, 1)
                wf = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1).astype(np.float64)
                gxp = (gc @ wf.T).reshape(B, Hp, Wp, C).transpose(0, 3, 1, 2)
            else:
                gcols = (g2 @ wmat).reshape(B, Ho, Wo, C, kh, kw)
                gxp = np.zeros((B, C, Hp, Wp))
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                            gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:Hp - ph, pw:Wp - pw]
        return (gx, gw) if b is None else (gx, gw, gb)

    return _result("conv2d", inputs, out, {"stride": stride, "padding": padding}, vjp)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties resolve to the first position."""
    x = _as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] % size or x.shape[3] % size:
        raise ShapeError(f"maxpool2d: {x.shape} not divisible by {size}")
    B, C, H, W = x.shape
    Ho, Wo = H // size, W // size
    blocks = (x.data.reshape(B, C, Ho, size, Wo, size)
              .transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, size * size))
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def vjp(g, s):
        gb = np.zeros((B, C, Ho, Wo, size * size))
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        gx = (gb.reshape(B, C, Ho, Wo, size, size)
              .transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W))
        return (gx,)

    return _result("maxpool2d", (x,), out, {"size": size}, vjp)


def softmax_ce(logits: Tensor, labels: Any, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy of ``(B, C)`` logits against integer labels.

    ``reduction`` is one of ``"mean"``, ``"sum"`` or ``"none"`` (per-sample
    losses of shape ``(B,)``).
    """
    logits = _as_tensor(logits)
    if logits.data.ndim == 1:
        logits = reshape(logits, (1, -1))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"softmax_ce: {labels.shape[0]} labels for {n} rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError("softmax_ce: label out of range")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    per = lse - z[np.arange(n), labels]
    probs = np.exp(z - lse[:, None])
    if reduction == "none":
        out = per
    elif reduction == "sum":
        out = np.array(per.sum())
    elif reduction == "mean":
        out = np.array(per.mean())
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def vjp(g, s):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        if reduction == "none":
            return (d * g[:, None],)
        scale = g / n if reduction == "mean" else g
        return (d * scale,)

    return _result("softmax_ce", (logits,), out, {"labels": labels}, vjp)


_OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "conv2d": conv2d,
    "relu": relu,
    "maxpool2d": maxpool2d,
    "flatten": flatten,
    "reshape": reshape,
    "softmax_ce": softmax_ce,
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    """Dispatch a primitive by name, e.g. ``forward_op("relu", x)``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)


# ------------------------------------------------------------------ backward


def backward(out: Tensor, grad: Any = None) -> None:
    """Reverse sweep from ``out``; fills ``.grad`` on every requires-grad leaf.

    ``out`` must be a scalar unless an upstream ``grad`` of the same shape is
    given (a vector-Jacobian product). The tape is consumed: a second call on
    any tensor of the same tape raises ``BackwardError``.
    """
    tape, node = out._tape, out._node
    if tape is None or node is None:
        raise BackwardError("backward() on a tensor that is not on a tape")
    if tape.consumed:
        raise BackwardError("double backward is not supported")
    if grad is None:
        if out.size != 1:
            raise BackwardError(f"backward() on non-scalar {out.shape} needs grad")
        seed = np.ones(out.shape)
    else:
        seed = np.asarray(grad, dtype=np.float64)
        if seed.shape != out.shape:
            raise ShapeError(f"backward: grad {seed.shape} for output {out.shape}")
        _check_finite(seed, "backward seed")

    grads: dict[int, np.ndarray] = {node.output: seed}
    stop = tape.nodes.index(node)
    for nd in reversed(tape.nodes[: stop + 1]):
        g = grads.pop(nd.output, None)
        if g is None:
            continue
        in_grads = nd.vjp(g, nd.saved)
        for tid, gi in zip(nd.inputs, in_grads):
            if gi is None or not tape.tensors[tid].requires_grad:
                continue
            if tid in grads:
                grads[tid] = grads[tid] + gi
            else:
                grads[tid] = gi
    tape.consumed = True

    for tid, g in grads.items():
        t = tape.tensors[tid]
        if t._node is None and t.requires_grad:
            _check_finite(g, "backward")
            t.grad = g.astype(np.float32)
