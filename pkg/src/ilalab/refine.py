"""Refinement: push intermediate features of x + delta along a guide."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .attacks import NORMS, Trajectory, _apply, _step
from .guides import DirectionalGuide, ila_direction
from .models import SplitModel
from .tensor import Tensor

log = logging.getLogger(__name__)

OBJECTIVES = ("projection", "normalized")


@dataclass(frozen=True)
class RefineConfig:
    norm: str = "linf"
    epsilon: float = 8 / 255
    alpha: float | None = None
    iterations: int = 100
    objective: str = "projection"
    guide_source: str = "rr"
    start: str = "benign"  # or "baseline": begin at the baseline's final iterate
    floor: float = 1e-12

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.start not in ("benign", "baseline"):
            raise ValueError("start must be 'benign' or 'baseline'")
        if self.epsilon < 0 or self.iterations < 0:
            raise ValueError("epsilon and iterations must be >= 0")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.floor <= 0:
            raise ValueError("normalization floor must be > 0")

    @property
    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 1 / 255 if self.norm == "linf" else self.epsilon / 5

    def to_dict(self) -> dict:
        return asdict(self)


def _stack(guides: Sequence[DirectionalGuide]) -> tuple[np.ndarray, np.ndarray]:
    W = np.stack([np.asarray(g.w, np.float64) for g in guides])
    A = np.stack([np.asarray(g.anchor, np.float64) for g in guides])
    return W, A


def objective_grad(d: np.ndarray, W: np.ndarray, objective: str, floor: float = 1e-12):
    """Value and feature-gradient of the per-sample objective at discrepancy ``d``."""
    if objective == "projection":
        return (d * W).sum(axis=1), W
    nrm = np.linalg.norm(d, axis=1)
    den = np.maximum(nrm, floor)
    dot = (d * W).sum(axis=1)
    grad = W / den[:, None]
    active = nrm > floor
    grad[active] -= (dot[active] / den[active] ** 3)[:, None] * d[active]
    return dot / den, grad


def refine(sm: SplitModel, x: np.ndarray, guides: Sequence[DirectionalGuide], cfg: RefineConfig,
           x_start: np.ndarray | None = None, check_anchor: bool = True) -> np.ndarray:
    """Maximize ``(g(x + delta) - h_0)^T w`` (or its normalized variant) over
    the feasible set by sign (linf) or unit-l2 gradient steps.

    Returns the final iterate for each input of the batch.
    """
    x = np.asarray(x, np.float32)
    if len(guides) != len(x):
        raise ValueError(f"{len(guides)} guides for {len(x)} inputs")
    W, anchors = _stack(guides)
    zero = ~W.any(axis=1)
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero guide(s); those inputs will not move", stacklevel=2)
    if check_anchor:
        h0 = sm.features(x).astype(np.float64)
        if h0.shape != anchors.shape or not np.allclose(h0, anchors, rtol=1e-5, atol=1e-5):
            raise ValueError("guide anchor does not match g(x)")
    cur = x if x_start is None or cfg.start == "benign" else np.asarray(x_start, np.float32)
    alpha = cfg.step_size
    for _ in range(cfg.iterations):
        xt = Tensor(cur, requires_grad=True)
        feat = sm.g(xt)
        d = feat.data.astype(np.float64) - anchors
        _, seed = objective_grad(d, W, cfg.objective, cfg.floor)
        T.backward(feat, seed)
        cur = _apply(x, _step(cur, xt.grad.reshape(x.shape), cfg.norm, alpha), cfg.norm, cfg.epsilon)
    return cur


def refine_normalized(sm: SplitModel, x: np.ndarray, guides: Sequence[DirectionalGuide],
                      cfg: RefineConfig, **kw) -> np.ndarray:
    return refine(sm, x, guides, RefineConfig(**{**cfg.to_dict(), "objective": "normalized"}), **kw)


def ila_huang(sm: SplitModel, x: np.ndarray, trajectories: Sequence[Trajectory],
              cfg: RefineConfig, **kw) -> np.ndarray:
    """Refinement along the last baseline discrepancy ``h_p - h_0``."""
    return refine(sm, x, [ila_direction(tr) for tr in trajectories], cfg, **kw)


def objective_value(sm: SplitModel, x_adv: np.ndarray, guides: Sequence[DirectionalGuide],
                    objective: str = "projection", floor: float = 1e-12) -> np.ndarray:
    W, anchors = _stack(guides)
    d = sm.features(np.asarray(x_adv, np.float32)).astype(np.float64) - anchors
    return objective_grad(d, W, objective, floor)[0]


def discrepancy_magnitude(sm: SplitModel, x: np.ndarray, x_adv: np.ndarray) -> np.ndarray:
    """Per-sample ``||g(x_adv) - g(x)||_2``."""
    h0 = sm.features(np.asarray(x, np.float32)).astype(np.float64)
    h1 = sm.features(np.asarray(x_adv, np.float32)).astype(np.float64)
    return np.linalg.norm(h1 - h0, axis=1)
