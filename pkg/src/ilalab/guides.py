"""Directional guides in feature space, fitted from attack trajectories."""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import regression as reg
from . import tensor as T
from .attacks import Trajectory
from .models import SplitModel

log = logging.getLogger(__name__)

FIT_METHODS = ("rr", "rr_woodbury", "rr_approx", "elasticnet", "svr")
RANDOM_METHODS = ("rand_input", "rand_feature")
METHODS = FIT_METHODS + ("ila_huang",) + RANDOM_METHODS

ELASTICNET_L1_FLOOR = 0.05


@dataclass(frozen=True)
class GuideSpec:
    """How to obtain a guide. ``lam`` is the ridge strength.

    For the random methods, ``regressor`` picks which fitter runs on the
    random samples; ``sigma_in`` / ``sigma_feat`` of ``None`` mean
    "calibrate from a baseline run".
    """

    method: str = "rr"
    lam: float = 1e10
    lambda1: float = 0.05
    lambda2: float = 1.0
    C: float = 1e-10
    e: float = 0.0
    sigma_in: float | None = None
    sigma_feat: float | None = None
    regressor: str = "rr"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown guide method {self.method!r}")
        if self.regressor not in FIT_METHODS:
            raise ValueError(f"unknown regressor {self.regressor!r}")
        if min(self.lam, self.lambda1, self.lambda2, self.C, self.e) < 0:
            raise ValueError("regularization strengths must be >= 0")

    @property
    def b(self) -> float:
        return 0.0

    @property
    def label(self) -> str:
        m = self.method
        if m in RANDOM_METHODS:
            return f"{m}+{self.regressor}"
        return m

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DiscrepancyDataset:
    H: np.ndarray  # (N, m) rows h_t - h_0
    r: np.ndarray  # (N,) losses l_t
    anchor: np.ndarray  # (m,) h_0
    sources: list[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.H.shape[1]

    @property
    def N(self) -> int:
        return self.H.shape[0]


@dataclass
class DirectionalGuide:
    w: np.ndarray
    anchor: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.w)


def trajectory_hash(tr: Trajectory) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(tr.features, dtype=np.float32).tobytes())
    h.update(np.ascontiguousarray(tr.losses, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def build_dataset(trajectories: Sequence[Trajectory]) -> DiscrepancyDataset:
    """Stack ``h_t - h_0`` rows and losses over runs, in (run, t) order."""
    if not trajectories:
        raise ValueError("no trajectories")
    anchor = np.asarray(trajectories[0].anchor, dtype=np.float64)
    rows, targets = [], []
    for tr in sorted(trajectories, key=lambda t: t.run):
        if tr.features.shape[1] != len(anchor):
            raise ValueError("trajectories disagree on feature dimension")
        if tr.index != trajectories[0].index or not np.array_equal(tr.anchor, trajectories[0].anchor):
            raise ValueError("trajectories come from different anchor inputs")
        rows.append(tr.features.astype(np.float64) - anchor)
        targets.append(np.asarray(tr.losses, dtype=np.float64))
    return DiscrepancyDataset(np.concatenate(rows), np.concatenate(targets), anchor,
                              [trajectory_hash(t) for t in trajectories])


def normalize_rows(ds: DiscrepancyDataset) -> DiscrepancyDataset:
    """Unit-normalize every non-zero discrepancy row; zero rows stay zero."""
    nrm = np.linalg.norm(ds.H, axis=1, keepdims=True)
    H = np.divide(ds.H, nrm, out=np.zeros_like(ds.H), where=nrm > 0)
    return DiscrepancyDataset(H, ds.r.copy(), ds.anchor.copy(), list(ds.sources))


def fit_rr(ds: DiscrepancyDataset, lam: float = 1e10) -> DirectionalGuide:
    return _guide(reg.ridge_primal(ds.H, ds.r, lam), ds, method="rr", lam=lam)


def fit_rr_woodbury(ds: DiscrepancyDataset, lam: float = 1e10) -> DirectionalGuide:
    return _guide(reg.ridge_dual(ds.H, ds.r, lam), ds, method="rr_woodbury", lam=lam)


def fit_rr_approx(ds: DiscrepancyDataset) -> DirectionalGuide:
    return _guide(reg.ridge_approx(ds.H, ds.r), ds, method="rr_approx")


def fit_elasticnet(ds: DiscrepancyDataset, lambda1: float = 0.05,
                   lambda2: float = 1.0) -> DirectionalGuide:
    if 0 < lambda1 < ELASTICNET_L1_FLOOR:
        warnings.warn(f"lambda1={lambda1} is below {ELASTICNET_L1_FLOOR}; "
                      "solutions in this range are not trusted", stacklevel=2)
    w = reg.elasticnet(ds.H, ds.r, lambda1, lambda2)
    return _guide(w, ds, method="elasticnet", lambda1=lambda1, lambda2=lambda2)


def fit_svr(ds: DiscrepancyDataset, C: float = 1e-10, e: float = 0.0) -> DirectionalGuide:
    return _guide(reg.svr(ds.H, ds.r, C, e), ds, method="svr", C=C, e=e)


def _guide(w: np.ndarray, ds: DiscrepancyDataset, **prov) -> DirectionalGuide:
    if not np.isfinite(w).all():
        raise ValueError("fitted guide is not finite")
    if not w.any():
        raise reg.DegenerateDataset("fitted guide is the zero vector")
    prov["trajectories"] = list(ds.sources)
    prov["rows"] = ds.N
    return DirectionalGuide(w, ds.anchor.copy(), prov)


def fit(ds: DiscrepancyDataset, spec: GuideSpec, method: str | None = None) -> DirectionalGuide:
    """Dispatch ``spec`` (or an explicit fitter name) on a dataset.

    ``rr`` uses the N x N dual when N < m; both routes give the same ``w``.
    """
    method = method or spec.method
    if method == "rr":
        g = fit_rr_woodbury(ds, spec.lam) if ds.N < ds.m else fit_rr(ds, spec.lam)
        g.provenance["method"] = "rr"
        return g
    if method == "rr_woodbury":
        return fit_rr_woodbury(ds, spec.lam)
    if method == "rr_approx":
        return fit_rr_approx(ds)
    if method == "elasticnet":
        return fit_elasticnet(ds, spec.lambda1, spec.lambda2)
    if method == "svr":
        return fit_svr(ds, spec.C, spec.e)
    raise ValueError(f"{method!r} is not a regression method")


def ila_direction(tr: Trajectory) -> DirectionalGuide:
    """The single baseline direction ``h_p - h_0``."""
    w = tr.features[-1].astype(np.float64) - tr.anchor
    if not w.any():
        raise reg.DegenerateDataset("h_p equals h_0; the baseline did not move")
    return DirectionalGuide(w, tr.anchor.astype(np.float64),
                            {"method": "ila_huang", "trajectories": [trajectory_hash(tr)]})


# ------------------------------------------------------------ random guides


def _random_dataset(noise_feats, losses, anchor, l0, tag) -> DiscrepancyDataset:
    H = np.vstack([np.zeros_like(anchor), noise_feats])
    r = np.concatenate([[l0], losses])
    return DiscrepancyDataset(H, r, anchor, [tag])


def random_guide_input(sm: SplitModel, x: np.ndarray, y: np.ndarray, p: int,
                       sigma_in: float, seed: int, spec: GuideSpec | None = None,
                       indices: Sequence[int] | None = None) -> list[DirectionalGuide]:
    """Guides regressed on ``p`` Gaussian input perturbations per input.

    Each noisy input is clipped to [0, 1]; its feature discrepancy and loss
    on the source model form one regression row, beside the zero anchor row.
    """
    if sigma_in <= 0:
        raise ValueError("sigma_in must be > 0")
    spec = spec or GuideSpec(method="rand_input")
    x = np.asarray(x, np.float32)
    y = np.asarray(y, np.int64)
    idx = list(range(len(x))) if indices is None else [int(i) for i in indices]
    noisy = np.empty((len(x), p, *x.shape[1:]), np.float32)
    for b, i in enumerate(idx):
        rng = np.random.default_rng([seed, i, 7])
        noisy[b] = np.clip(x[b] + rng.normal(0.0, sigma_in, size=(p, *x.shape[1:])), 0.0, 1.0)
    l0, h0 = _loss_feat(sm, x, y)
    ln, hn = _loss_feat(sm, noisy.reshape(-1, *x.shape[1:]), np.repeat(y, p))
    ln, hn = ln.reshape(len(x), p), hn.reshape(len(x), p, -1)
    guides = []
    for b in range(len(x)):
        anchor = h0[b].astype(np.float64)
        ds = _random_dataset(hn[b] - anchor, ln[b], anchor, l0[b], f"rand_input:{seed}:{idx[b]}")
        g = fit(ds, spec, spec.regressor)
        g.provenance.update(method="rand_input", regressor=spec.regressor, sigma=sigma_in, seed=seed)
        guides.append(g)
    return guides


def random_guide_feature(sm: SplitModel, x: np.ndarray, y: np.ndarray, p: int,
                         sigma_feat: float, seed: int, spec: GuideSpec | None = None,
                         indices: Sequence[int] | None = None) -> list[DirectionalGuide]:
    """Guides regressed on ``p`` Gaussian perturbations of ``h_0`` itself."""
    if sigma_feat <= 0:
        raise ValueError("sigma_feat must be > 0")
    spec = spec or GuideSpec(method="rand_feature")
    x = np.asarray(x, np.float32)
    y = np.asarray(y, np.int64)
    idx = list(range(len(x))) if indices is None else [int(i) for i in indices]
    l0, h0 = _loss_feat(sm, x, y)
    deltas = np.empty((len(x), p, sm.m), np.float32)
    for b, i in enumerate(idx):
        rng = np.random.default_rng([seed, i, 11])
        deltas[b] = rng.normal(0.0, sigma_feat, size=(p, sm.m))
    feats = (h0[:, None, :] + deltas).reshape(-1, sm.m)
    ln = T.softmax_ce(sm.h(feats), np.repeat(y, p), reduction="none").data.reshape(len(x), p)
    guides = []
    for b in range(len(x)):
        anchor = h0[b].astype(np.float64)
        ds = _random_dataset(deltas[b].astype(np.float64), ln[b], anchor, l0[b],
                             f"rand_feature:{seed}:{idx[b]}")
        g = fit(ds, spec, spec.regressor)
        g.provenance.update(method="rand_feature", regressor=spec.regressor, sigma=sigma_feat, seed=seed)
        guides.append(g)
    return guides


def _loss_feat(sm: SplitModel, x: np.ndarray, y: np.ndarray, batch: int = 1000):
    ls, fs = [], []
    for s in range(0, len(x), batch):
        feat = sm.g(x[s:s + batch])
        ls.append(T.softmax_ce(sm.h(feat), y[s:s + batch], reduction="none").data.astype(np.float64))
        fs.append(feat.data)
    return np.concatenate(ls), np.concatenate(fs)


def calibrate_sigmas(trajectories: Sequence[Trajectory], x: np.ndarray) -> tuple[float, float]:
    """Noise scales matched to a baseline run.

    ``sigma_in`` makes E||Delta|| equal the mean final input perturbation norm;
    ``sigma_feat`` makes E||Delta'|| equal the mean ``||h_t - h_0||`` over the
    non-anchor samples.
    """
    x = np.asarray(x, np.float64)
    n = x[0].size
    m = trajectories[0].features.shape[1]
    pert = np.mean([np.linalg.norm(tr.final.astype(np.float64) - x[b]) for b, tr in enumerate(trajectories)])
    feat = np.mean([np.linalg.norm(tr.features[1:] - tr.anchor, axis=1).mean() for tr in trajectories])
    return float(pert / np.sqrt(n)), float(feat / np.sqrt(m))
