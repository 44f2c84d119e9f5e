"""Baseline attacks (I-FGSM, multi-run PGD, LinBP) with trajectory capture."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .models import SplitModel
from .tensor import Tensor

NORMS = ("linf", "l2")
SAMPLING = ("even", "first-p", "last-p")


@dataclass(frozen=True)
class AttackConfig:
    norm: str = "linf"
    epsilon: float = 8 / 255
    alpha: float | None = None  # None: 1/255 for linf, epsilon/5 for l2
    iterations: int = 100
    sample_count: int = 10
    random_init: bool = False
    runs: int = 1
    seed: int = 0
    sampling: str = "even"

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.iterations < 0 or self.sample_count < 1:
            raise ValueError("iterations must be >= 0 and sample_count >= 1")
        if self.iterations and self.sample_count > self.iterations:
            raise ValueError("sample_count must not exceed iterations")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.sampling not in SAMPLING:
            raise ValueError(f"sampling must be one of {SAMPLING}")

    @property
    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 1 / 255 if self.norm == "linf" else self.epsilon / 5

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    """Sampled iterates of one baseline run on one input.

    Row 0 is always the benign input (t=0), whose feature is the anchor.
    """

    index: int
    run: int
    label: int
    t: np.ndarray  # (S,) iteration numbers
    features: np.ndarray  # (S, m)
    losses: np.ndarray  # (S,)
    final: np.ndarray  # last iterate x_T
    inputs: np.ndarray | None = None  # (S, *image) when captured

    @property
    def anchor(self) -> np.ndarray:
        return self.features[0]

    def __len__(self) -> int:
        return len(self.t)


def sample_times(iterations: int, p: int, strategy: str = "even") -> np.ndarray:
    """Iteration numbers at which ``p + 1`` samples are kept (t=0 included)."""
    if iterations == 0:
        return np.zeros(p + 1, dtype=np.int64)
    if strategy == "even":
        ts = np.rint(np.arange(p + 1) * iterations / p).astype(np.int64)
    elif strategy == "first-p":
        ts = np.arange(p + 1, dtype=np.int64)
    elif strategy == "last-p":
        ts = np.concatenate([[0], np.arange(iterations - p + 1, iterations + 1)]).astype(np.int64)
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    return ts


def project(delta: np.ndarray, norm: str, epsilon: float, x: np.ndarray | None = None) -> np.ndarray:
    """Project a batch of perturbations onto the epsilon-ball (per sample).

    With ``x`` given, the result is further clipped so ``x + delta`` stays in
    ``[0, 1]``. A 1-D ``delta`` is treated as a single sample.
    """
    d = np.asarray(delta, dtype=np.float64)
    single = d.ndim == 1
    if single:
        d = d[None]
    if norm == "linf":
        d = np.clip(d, -epsilon, epsilon)
    elif norm == "l2":
        flat = d.reshape(len(d), -1)
        nrm = np.linalg.norm(flat, axis=1)
        scale = np.minimum(1.0, epsilon / np.maximum(nrm, 1e-300))
        scale[nrm == 0] = 1.0
        d = (flat * scale[:, None]).reshape(d.shape)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    if x is not None:
        x64 = np.asarray(x, dtype=np.float64).reshape(d.shape)
        d = np.clip(x64 + d, 0.0, 1.0) - x64
    return d[0] if single else d


def _apply(x0: np.ndarray, cand: np.ndarray, norm: str, eps: float) -> np.ndarray:
    """Project ``cand`` into the feasible set around ``x0``, in float32."""
    x64 = x0.astype(np.float64)
    d = project(cand.astype(np.float64) - x64, norm, eps, x64)
    out = (x64 + d).astype(np.float32)
    if norm == "linf":
        # float32 rounding may step just outside the ball; pull those back
        for _ in range(4):
            over = np.abs(out.astype(np.float64) - x64) > eps
            if not over.any():
                break
            out[over] = np.nextafter(out[over], x0[over])
    return out


def _step(x: np.ndarray, grad: np.ndarray, norm: str, alpha: float) -> np.ndarray:
    g = grad.astype(np.float64)
    if norm == "linf":
        return x + alpha * np.sign(g)  # sign(0) = 0
    flat = g.reshape(len(g), -1)
    nrm = np.linalg.norm(flat, axis=1)
    unit = np.where(nrm[:, None] > 0, flat / np.maximum(nrm, 1e-300)[:, None], 0.0)
    return x + alpha * unit.reshape(g.shape)


def _forward_grad(sm: SplitModel, x: np.ndarray, y: np.ndarray):
    """Per-sample CE, features and input gradient of the summed CE."""
    xt = Tensor(x, requires_grad=True)
    feat = sm.g(xt)
    loss = T.softmax_ce(sm.h(feat), y, reduction="none")
    T.backward(loss, np.ones(loss.shape))
    return loss.data.astype(np.float64), feat.data, xt.grad.reshape(x.shape)


def random_start(x: np.ndarray, cfg: AttackConfig, indices: Sequence[int], run: int) -> np.ndarray:
    """Uniform draw from the epsilon-ball, per (seed, input index, run) stream."""
    out = np.empty_like(x, dtype=np.float64)
    n = x[0].size
    for b, idx in enumerate(indices):
        rng = np.random.default_rng([cfg.seed, int(idx), run])
        if cfg.norm == "linf":
            u = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x[b].shape)
        else:
            v = rng.normal(size=n)
            v /= np.linalg.norm(v)
            u = (v * cfg.epsilon * rng.uniform() ** (1.0 / n)).reshape(x[b].shape)
        out[b] = u
    return _apply(x, x.astype(np.float64) + out, cfg.norm, cfg.epsilon)


def _run(sm: SplitModel, grad_sm: SplitModel, x: np.ndarray, y: np.ndarray,
         cfg: AttackConfig, indices: Sequence[int], run: int, keep_inputs: bool,
         start: np.ndarray | None) -> list[Trajectory]:
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    B = len(x)
    ts = sample_times(cfg.iterations, cfg.sample_count, cfg.sampling)
    want = {int(t): j for j, t in enumerate(ts)}
    feats = np.zeros((len(ts), B, sm.m), dtype=np.float32)
    losses = np.zeros((len(ts), B))
    xs = np.zeros((len(ts), *x.shape), dtype=np.float32) if keep_inputs else None

    def record(j, xc, l, f):
        feats[j], losses[j] = f, l
        if xs is not None:
            xs[j] = xc

    if start is not None:
        l0, f0 = _loss_feat(sm, x, y)
        record(0, x, l0, f0)
        cur = start
    else:
        cur = x
    alpha = cfg.step_size
    for t in range(cfg.iterations):
        l, f, g = _forward_grad(grad_sm, cur, y)
        if t in want and not (t == 0 and start is not None):
            record(want[t], cur, l, f)
        cur = _apply(x, _step(cur, g, cfg.norm, alpha), cfg.norm, cfg.epsilon)
    if cfg.iterations in want:
        l, f = _loss_feat(sm, cur, y)
        if cfg.iterations == 0 and start is None:
            for j in range(len(ts)):
                record(j, cur, l, f)
        else:
            record(want[cfg.iterations], cur, l, f)

    return [
        Trajectory(index=int(indices[b]), run=run, label=int(y[b]), t=ts.copy(),
                   features=feats[:, b].copy(), losses=losses[:, b].copy(),
                   final=cur[b].copy(), inputs=None if xs is None else xs[:, b].copy())
        for b in range(B)
    ]


def _loss_feat(sm: SplitModel, x: np.ndarray, y: np.ndarray):
    feat = sm.g(x)
    loss = T.softmax_ce(sm.h(feat), y, reduction="none")
    return loss.data.astype(np.float64), feat.data


def _indices(indices, n):
    return list(range(n)) if indices is None else [int(i) for i in indices]


def ifgsm(sm: SplitModel, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
          indices: Sequence[int] | None = None, keep_inputs: bool = False) -> list[Trajectory]:
    """I-FGSM on a batch; one trajectory per input.

    linf steps use ``alpha * sign(grad)``, l2 steps ``alpha * grad / ||grad||``;
    each iterate is projected onto the epsilon-ball and the [0, 1] box.
    """
    return _run(sm, sm, x, y, cfg, _indices(indices, len(x)), 0, keep_inputs, None)


def linbp_attack(sm: SplitModel, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
                 n_linear_relus: int = 2, indices: Sequence[int] | None = None,
                 keep_inputs: bool = False) -> list[Trajectory]:
    """I-FGSM whose gradients treat the last ``n_linear_relus`` ReLUs as identity."""
    grad_sm = sm.with_linbp(n_linear_relus)
    idx = _indices(indices, len(x))
    if cfg.random_init:
        return _run(sm, grad_sm, x, y, cfg, idx, 0, keep_inputs, random_start(x, cfg, idx, 0))
    return _run(sm, grad_sm, x, y, cfg, idx, 0, keep_inputs, None)


def pgd_multirun(sm: SplitModel, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
                 indices: Sequence[int] | None = None, n_linear_relus: int = 0,
                 keep_inputs: bool = False, first_run: int = 0) -> list[list[Trajectory]]:
    """``cfg.runs`` randomly started runs per input, returned as ``[input][run]``.

    Every run's row 0 is the benign input, so each run contributes one zero
    row to the regression design. ``n_linear_relus > 0`` gives multi-run LinBP. Run ``r`` starts
    from the ``[seed, index, r]`` stream, so run blocks computed separately
    with ``first_run`` concatenate to the same result.
    """
    idx = _indices(indices, len(x))
    grad_sm = sm.with_linbp(n_linear_relus) if n_linear_relus else sm
    per_run = []
    for r in range(first_run, first_run + cfg.runs):
        start = random_start(np.asarray(x, np.float32), cfg, idx, r) if cfg.random_init else None
        per_run.append(_run(sm, grad_sm, x, y, cfg, idx, r, keep_inputs, start))
    return [[run[b] for run in per_run] for b in range(len(idx))]
