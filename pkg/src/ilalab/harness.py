"""Campaign orchestration: zoo, baselines, guides, refinement and transfer reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import re
import time
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from . import attacks as atk
from . import data as data_mod
from . import guides as gd
from . import models as mdl
from . import refine as rf
from . import regression as reg
from .formats import AdvBatch, atomic_write, config_hash, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

LINF_EPSILONS = (16 / 255, 8 / 255, 4 / 255)
L2_EPSILONS = (0.6, 0.3, 0.15)
CSV_FIELDS = ("method", "norm", "epsilon", "victim", "success_rate", "mean_discrepancy",
              "std_discrepancy", "n_inputs", "seed")
SUMMARY_FIELDS = ("method", "norm", "epsilon", "source_success", "victim_average",
                  "mean_discrepancy", "std_discrepancy", "n_inputs", "seed")


# ------------------------------------------------------------------------ zoo


@dataclass(frozen=True)
class ZooConfig:
    archs: tuple[str, ...] = mdl.ARCH_IDS
    seeds: tuple[int, ...] = (0, 1)
    data_seed: int = 0
    n_train: int = 6000
    n_test: int = 2000
    lr: float = 0.02
    mlp_epochs: int = 30
    cnn_epochs: int = 6

    def epochs_for(self, arch: str) -> int:
        return self.mlp_epochs if arch.startswith("mlp") else self.cnn_epochs


@dataclass
class Zoo:
    dataset: data_mod.Dataset
    models: dict[str, mdl.Model]

    def __getitem__(self, name: str) -> mdl.Model:
        try:
            return self.models[name]
        except KeyError:
            raise KeyError(f"model {name!r} not in zoo ({', '.join(self.models)})") from None

    @property
    def names(self) -> list[str]:
        return list(self.models)


def make_dataset(cfg: ZooConfig) -> data_mod.Dataset:
    return data_mod.make_shapes(cfg.n_train, cfg.n_test, seed=cfg.data_seed)


def train_zoo(dataset: data_mod.Dataset, cfg: ZooConfig) -> Zoo:
    models = {}
    for seed in cfg.seeds:
        for arch in cfg.archs:
            t0 = time.perf_counter()
            m = mdl.train(mdl.build(arch, seed, dataset.input_shape), dataset,
                          epochs=cfg.epochs_for(arch), lr=cfg.lr)
            log.info("trained %s: test acc %.4f (%.1fs)", m.name, m.metadata["test_acc"],
                     time.perf_counter() - t0)
            models[m.name] = m
    return Zoo(dataset, models)


def save_zoo(zoo: Zoo, directory: str | Path) -> None:
    d = Path(directory)
    data_mod.save_idx_dataset(zoo.dataset, d / "data")
    for name, m in zoo.models.items():
        save_checkpoint(m, d / "models" / f"{name}.ilaf")


class ZooMissing(FileNotFoundError):
    pass


def load_zoo(directory: str | Path) -> Zoo:
    d = Path(directory)
    ckpts = sorted((d / "models").glob("*.ilaf"))
    if not (d / "data").is_dir() or not ckpts:
        raise ZooMissing(f"no trained zoo under {d}; run the 'dataset' and 'train' subcommands first")
    ds = data_mod.load_idx_dataset(d / "data")
    models = {}
    for p in ckpts:
        m = load_checkpoint(p)
        models[m.name] = m
    # stable order: seed, then registry order
    order = {a: i for i, a in enumerate(mdl.ARCH_IDS)}
    names = sorted(models, key=lambda n: (models[n].seed, order.get(models[n].arch_id, 99), n))
    return Zoo(ds, {n: models[n] for n in names})


def ensure_zoo(directory: str | Path, cfg: ZooConfig | None = None) -> Zoo:
    """Load the zoo under ``directory`` if it was built from ``cfg``, else build and save it."""
    cfg = cfg or ZooConfig()
    d = Path(directory)
    stamp = d / "zoo.json"
    want = config_hash({"zoo": asdict(cfg), "data": asdict(data_mod.ShapeParams())})
    if stamp.exists() and json.loads(stamp.read_text()).get("config_hash") == want:
        try:
            return load_zoo(d)
        except (ZooMissing, ValueError) as exc:
            log.warning("cached zoo unusable (%s); rebuilding", exc)
    zoo = train_zoo(make_dataset(cfg), cfg)
    save_zoo(zoo, d)
    atomic_write(stamp, json.dumps({"config_hash": want, "config": asdict(cfg)}, sort_keys=True).encode())
    return zoo


# ------------------------------------------------------------------- methods

_METHOD = re.compile(
    r"^(?P<base>ifgsm|pgd|linbp)(?:x(?P<runs>\d+))?"
    r"(?:\+(?P<guide>[a-z_]+)(?P<norm>-norm)?(?:\(l1=(?P<l1>[0-9.eE+-]+)\))?)?$")
GUIDES = ("ila", "rr", "rr_woodbury", "rr_approx", "svr", "en", "rand_input", "rand_feature")
REGRESSORS = {"rr": "rr", "rr_woodbury": "rr_woodbury", "rr_approx": "rr_approx",
              "svr": "svr", "en": "elasticnet"}


@dataclass(frozen=True)
class MethodSpec:
    """A method label such as ``ifgsm+rr``, ``pgdx10+svr`` or ``ifgsm+en(l1=0.5)``.

    ``base`` is the baseline attack; ``runs`` > 1 (or base ``pgd``) means
    randomly started runs. A ``-norm`` suffix selects the normalized ablation.
    """

    label: str
    base: str
    runs: int
    multi: bool
    guide: str | None
    normalized: bool
    lambda1: float | None

    @classmethod
    def parse(cls, label: str) -> "MethodSpec":
        m = _METHOD.match(label.strip())
        if not m:
            raise ValueError(f"cannot parse method {label!r}")
        base, guide = m["base"], m["guide"]
        multi = m["runs"] is not None or base == "pgd"
        runs = int(m["runs"]) if m["runs"] else 1
        if runs < 1:
            raise ValueError(f"{label}: runs must be >= 1")
        if base == "ifgsm" and m["runs"] is not None:
            raise ValueError(f"{label}: I-FGSM is deterministic, use pgdxR for multiple runs")
        if guide is not None and guide not in GUIDES:
            raise ValueError(f"{label}: unknown guide {guide!r}")
        if m["norm"] and guide not in REGRESSORS:
            raise ValueError(f"{label}: the normalized ablation needs a regression guide")
        if m["l1"] is not None and guide != "en":
            raise ValueError(f"{label}: l1 applies to the elastic net only")
        return cls(label.strip(), base, runs, multi, guide, bool(m["norm"]),
                   float(m["l1"]) if m["l1"] else None)


# ------------------------------------------------------------------ campaign


@dataclass(frozen=True)
class Campaign:
    """Everything that determines a transfer report.

    ``methods`` run at every epsilon, ``ablations`` only at the middle one.
    An empty ``victims`` means every zoo model except the source.
    """

    source: str = "cnn-wide@0"
    victims: tuple[str, ...] = ()
    n_inputs: int = 200
    norm: str = "linf"
    epsilons: tuple[float, ...] = LINF_EPSILONS
    methods: tuple[str, ...] = ("ifgsm", "ifgsm+ila", "ifgsm+rr")
    ablations: tuple[str, ...] = ()
    iterations: int = 100
    refine_iterations: int = 100
    sample_count: int = 10
    sampling: str = "even"
    alpha: float | None = None
    split: int | None = None  # None: the source arch's default
    lam: float = 1e10
    C: float = 1e-10
    e: float = 0.0
    lambda1: float = 0.05
    lambda2: float = 1.0
    sigma_in: float | None = None
    sigma_feat: float | None = None
    linbp_relus: int = 2
    refine_start: str = "benign"
    seed: int = 0

    def __post_init__(self):
        if self.norm not in atk.NORMS:
            raise ValueError(f"norm must be one of {atk.NORMS}")
        if not self.epsilons or any(not np.isfinite(e) or e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be finite and > 0")
        if self.n_inputs < 1:
            raise ValueError("n_inputs must be >= 1")
        for label in self.methods + self.ablations:
            MethodSpec.parse(label)
        # surface bad hyper-parameters before any attack runs
        self.attack_config(self.epsilons[0])
        self.refine_config(self.epsilons[0], False)
        self.guide_spec()

    @property
    def mid_epsilon(self) -> float:
        return sorted(self.epsilons)[len(self.epsilons) // 2]

    def attack_config(self, eps: float, runs: int = 1, random_init: bool = False) -> atk.AttackConfig:
        return atk.AttackConfig(norm=self.norm, epsilon=eps, alpha=self.alpha,
                                iterations=self.iterations, sample_count=self.sample_count,
                                random_init=random_init, runs=runs, seed=self.seed,
                                sampling=self.sampling)

    def refine_config(self, eps: float, normalized: bool) -> rf.RefineConfig:
        return rf.RefineConfig(norm=self.norm, epsilon=eps, alpha=self.alpha,
                               iterations=self.refine_iterations,
                               objective="normalized" if normalized else "projection",
                               start=self.refine_start)

    def guide_spec(self, **over) -> gd.GuideSpec:
        base = dict(lam=self.lam, C=self.C, e=self.e, lambda1=self.lambda1,
                    lambda2=self.lambda2, sigma_in=self.sigma_in, sigma_feat=self.sigma_feat)
        base.update(over)
        return gd.GuideSpec(**base)

    def plan(self) -> list[tuple[str, float]]:
        out = [(m, e) for e in self.epsilons for m in self.methods]
        out += [(m, self.mid_epsilon) for m in self.ablations if m not in self.methods]
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def evaluation_set(zoo: Zoo, names: Iterable[str], n_inputs: int) -> np.ndarray:
    """First ``n_inputs`` test indices classified correctly by every named model."""
    x, y = zoo.dataset.test
    ok = np.ones(len(y), bool)
    for n in names:
        ok &= zoo[n].predict(x) == y
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        raise ValueError("no test input is classified correctly by every model")
    if len(idx) < n_inputs:
        warnings.warn(f"only {len(idx)} inputs pass the filter (asked for {n_inputs})", stacklevel=2)
    return idx[:n_inputs]


class Runner:
    """Computes adversarial batches for one campaign, caching baseline runs.

    Multi-run trajectories for different ``R`` share their first runs, since
    run ``r`` is seeded independently of how many runs are requested.
    """

    def __init__(self, zoo: Zoo, campaign: Campaign):
        self.zoo, self.campaign = zoo, campaign
        if campaign.source not in zoo.models:
            raise KeyError(f"source {campaign.source!r} not in zoo")
        self.source = zoo[campaign.source]
        self.victims = list(campaign.victims) or [n for n in zoo.names if n != campaign.source]
        self.victims = [v for v in self.victims if v != campaign.source]
        for v in self.victims:
            zoo[v]
        self.sm = mdl.split(self.source, campaign.split)
        self.indices = evaluation_set(zoo, [campaign.source, *self.victims], campaign.n_inputs)
        x, y = zoo.dataset.test
        self.x, self.y = x[self.indices], y[self.indices]
        self.timings: dict[str, float] = defaultdict(float)
        self._traj: dict[tuple, list[list[atk.Trajectory]]] = {}

    def with_campaign(self, campaign: Campaign) -> "Runner":
        """A runner for a sibling campaign that keeps this one's baseline cache."""
        c0 = self.campaign
        same = ("source", "victims", "n_inputs", "norm", "iterations", "sample_count",
                "sampling", "alpha", "split", "seed", "linbp_relus")
        other = Runner.__new__(Runner)
        other.__dict__.update(self.__dict__)
        other.campaign = campaign
        if any(getattr(c0, k) != getattr(campaign, k) for k in same):
            other.__init__(self.zoo, campaign)
        return other

    def _timed(self, stage: str):
        runner = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                runner.timings[stage] += time.perf_counter() - self.t0

        return _T()

    def trajectories(self, base: str, multi: bool, eps: float, runs: int) -> list[list[atk.Trajectory]]:
        """``[input][run]`` trajectories of a baseline."""
        c = self.campaign
        key = (base, multi, round(eps, 12))
        have = self._traj.get(key)
        done = len(have[0]) if have else 0
        if done >= runs:
            return [t[:runs] for t in have]
        n_lin = c.linbp_relus if base == "linbp" else 0
        with self._timed("attack"):
            if not multi:
                cfg = c.attack_config(eps)
                if base == "linbp":
                    trs = atk.linbp_attack(self.sm, self.x, self.y, cfg, n_lin, self.indices)
                else:
                    trs = atk.ifgsm(self.sm, self.x, self.y, cfg, self.indices)
                new = [[t] for t in trs]
            else:
                cfg = c.attack_config(eps, runs=runs - done, random_init=True)
                more = atk.pgd_multirun(self.sm, self.x, self.y, cfg, self.indices,
                                        n_linear_relus=n_lin, first_run=done)
                new = [(have[b] if have else []) + more[b] for b in range(len(more))]
        self._traj[key] = new
        return [t[:runs] for t in new]

    def guides(self, spec: MethodSpec, eps: float, trs: list[list[atk.Trajectory]]):
        c = self.campaign
        with self._timed("fit"):
            if spec.guide == "ila":
                return [gd.ila_direction(t[0]) for t in trs]
            if spec.guide in ("rand_input", "rand_feature"):
                first = [t[0] for t in trs]
                s_in, s_feat = c.sigma_in, c.sigma_feat
                if s_in is None or s_feat is None:
                    cal_in, cal_feat = gd.calibrate_sigmas(first, self.x)
                    s_in = cal_in if s_in is None else s_in
                    s_feat = cal_feat if s_feat is None else s_feat
                gspec = c.guide_spec(method=spec.guide)
                if spec.guide == "rand_input":
                    return gd.random_guide_input(self.sm, self.x, self.y, c.sample_count, s_in,
                                                 c.seed, gspec, self.indices)
                return gd.random_guide_feature(self.sm, self.x, self.y, c.sample_count, s_feat,
                                               c.seed, gspec, self.indices)
            over = {} if spec.lambda1 is None else {"lambda1": spec.lambda1}
            gspec = c.guide_spec(method=REGRESSORS[spec.guide], **over)
            out = []
            for t in trs:
                ds = gd.build_dataset(t)
                if spec.normalized:
                    ds = gd.normalize_rows(ds)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    try:
                        out.append(gd.fit(ds, gspec))
                    except reg.DegenerateDataset:
                        # e.g. a large l1 zeroes every coefficient; refinement leaves the input alone
                        out.append(gd.DirectionalGuide(np.zeros(ds.m), ds.anchor,
                                                       {"method": gspec.method, "degenerate": True}))
            zero = sum(not g.w.any() for g in out)
            if zero:
                log.info("%s at eps %.4g: %d of %d guides are zero", spec.label, eps, zero, len(out))
            return out

    def adversarial(self, label: str, eps: float) -> np.ndarray:
        spec = MethodSpec.parse(label)
        trs = self.trajectories(spec.base, spec.multi, eps, spec.runs)
        baseline = np.stack([t[0].final for t in trs])
        if spec.guide is None:
            return baseline
        guides = self.guides(spec, eps, trs)
        with self._timed("refine"):
            return rf.refine(self.sm, self.x, guides, self.campaign.refine_config(eps, spec.normalized),
                             x_start=baseline, check_anchor=False)

    def batch(self, label: str, eps: float) -> AdvBatch:
        c = self.campaign
        images = self.adversarial(label, eps)
        header = {"cfg_hash": c.hash, "method": label, "norm": c.norm, "epsilon": eps,
                  "source": c.source, "split": self.sm.k, "victims": list(self.victims),
                  "seed": c.seed}
        return AdvBatch(self.indices.copy(), self.y.copy(), images, header)


# -------------------------------------------------------------------- report


@dataclass
class Cell:
    method: str
    norm: str
    epsilon: float
    victim: str
    success_rate: float
    n_inputs: int


@dataclass
class MethodStats:
    method: str
    norm: str
    epsilon: float
    source_success: float
    mean_discrepancy: float
    std_discrepancy: float
    n_inputs: int


def _same(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


@dataclass
class TransferReport:
    source: str
    victims: list[str]
    seed: int
    cells: list[Cell] = field(default_factory=list)
    stats: list[MethodStats] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    runtime: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(s.method for s in self.stats))

    def epsilons(self, method: str | None = None) -> list[float]:
        out: list[float] = []
        for s in self.stats:
            if (method is None or s.method == method) and not any(_same(s.epsilon, e) for e in out):
                out.append(s.epsilon)
        return out

    def stat(self, method: str, eps: float) -> MethodStats:
        for s in self.stats:
            if s.method == method and _same(s.epsilon, eps):
                return s
        raise KeyError(f"no result for {method} at epsilon {eps}")

    def success(self, method: str, eps: float, victim: str) -> float:
        for c in self.cells:
            if c.method == method and c.victim == victim and _same(c.epsilon, eps):
                return c.success_rate
        raise KeyError(f"no cell for {method}/{victim} at epsilon {eps}")

    def victim_average(self, method: str, eps: float) -> float:
        vals = [c.success_rate for c in self.cells
                if c.method == method and _same(c.epsilon, eps) and c.victim != self.source]
        if not vals:
            raise KeyError(f"no cells for {method} at epsilon {eps}")
        return float(np.mean(vals))

    def merge(self, other: "TransferReport") -> "TransferReport":
        if other.source != self.source or other.victims != self.victims:
            raise ValueError("reports differ in source or victims")
        out = replace(self, cells=self.cells + other.cells, stats=self.stats + other.stats,
                      runtime={**self.runtime}, provenance={**self.provenance, **other.provenance})
        for k, v in other.runtime.items():
            out.runtime[k] = out.runtime.get(k, 0.0) + v
        return out


def evaluate_transfer(batch: AdvBatch, victims: Mapping[str, mdl.Model], source: mdl.Model,
                      x_benign: np.ndarray, indices: Sequence[int] | None = None,
                      split: int | None = None) -> TransferReport:
    """Success rate of one adversarial batch on every victim.

    ``victims`` should not contain the source; if it does, the source is
    scored separately and left out of the victim list.
    """
    if indices is not None and not np.array_equal(np.asarray(indices), batch.indices):
        raise ValueError("adversarial batch indices do not match the evaluation set")
    if len(x_benign) != len(batch):
        raise ValueError("benign inputs and adversarial batch differ in length")
    names = [n for n in victims if n != source.name]
    for n in [source.name, *names]:
        m = source if n == source.name else victims[n]
        if not m.metadata.get("trained", False):
            raise ValueError(f"model {n} is not trained")
    h = batch.header
    method, norm, eps = h["method"], h["norm"], float(h["epsilon"])
    y, xa = batch.labels, batch.images
    cells = [Cell(method, norm, eps, n, float(np.mean(victims[n].predict(xa) != y)), len(y))
             for n in names]
    sm = mdl.split(source, split if split is not None else h.get("split"))
    mags = rf.discrepancy_magnitude(sm, x_benign, xa)
    stats = [MethodStats(method, norm, eps, float(np.mean(source.predict(xa) != y)),
                         float(mags.mean()), float(mags.std()), len(y))]
    return TransferReport(source.name, names, int(h.get("seed", 0)), cells, stats,
                          provenance={f"{method}@{eps:.10g}": h.get("cfg_hash", "")})


def run_campaign(zoo: Zoo, campaign: Campaign, out_dir: str | Path | None = None,
                 runner: Runner | None = None) -> TransferReport:
    """All planned (method, epsilon) batches, evaluated on the victims.

    With ``out_dir``, each batch is persisted under ``adv/`` so the report can
    be rebuilt later without re-running attacks.
    """
    from .formats import save_adv_batch

    runner = runner.with_campaign(campaign) if runner is not None else Runner(zoo, campaign)
    victims = {n: zoo[n] for n in runner.victims}
    report = TransferReport(campaign.source, list(runner.victims), campaign.seed,
                            config=campaign.to_dict(), config_hash=campaign.hash)
    before = dict(runner.timings)
    for label, eps in campaign.plan():
        batch = runner.batch(label, eps)
        if out_dir is not None:
            save_adv_batch(batch, Path(out_dir) / "adv" / batch_filename(label, eps))
        with runner._timed("evaluate"):
            part = evaluate_transfer(batch, victims, runner.source, runner.x, runner.indices,
                                     runner.sm.k)
        report = report.merge(part)
    report.runtime = {k: round(v - before.get(k, 0.0), 3) for k, v in runner.timings.items()}
    report.provenance["checkpoints"] = {n: zoo[n].checksum() for n in [campaign.source, *runner.victims]}
    return report


def batch_filename(label: str, eps: float) -> str:
    safe = re.sub(r"[^A-Za-z0-9_.+-]", "_", label)
    return f"{safe}__eps{eps:.6f}.ilab"


def report_from_batches(zoo: Zoo, campaign: Campaign, batches: Sequence[AdvBatch]) -> TransferReport:
    """Rebuild a report from persisted adversarial batches and checkpoints."""
    source = zoo[campaign.source]
    victims = [n for n in (list(campaign.victims) or zoo.names) if n != campaign.source]
    x, _ = zoo.dataset.test
    report = TransferReport(campaign.source, victims, campaign.seed,
                            config=campaign.to_dict(), config_hash=campaign.hash)
    for b in batches:
        report = report.merge(evaluate_transfer(b, {n: zoo[n] for n in victims}, source,
                                                x[b.indices], split=campaign.split))
    return report


# --------------------------------------------------------------------- sweep

SWEEP_KEYS = ("runs", "lambda1", "lam", "C", "epsilon", "split")


def sweep_methods(key: str, value, guide: str) -> tuple[str, ...]:
    if key == "runs":
        return (f"pgdx{int(value)}+{guide}",)
    if key == "lambda1":
        return (f"ifgsm+en(l1={value:g})",)
    if key == "lam":
        return ("ifgsm+rr",)
    if key == "C":
        return ("ifgsm+svr",)
    return (f"ifgsm+{guide}",)


def run_sweep(zoo: Zoo, campaign: Campaign, key: str, values: Sequence, guide: str = "rr",
              runner: Runner | None = None) -> list[TransferReport]:
    """One report per sweep value; all points share seeds and the evaluation set.

    Every report is evaluated at the campaign's middle epsilon unless the
    sweep is over epsilon itself.
    """
    if key not in SWEEP_KEYS:
        raise ValueError(f"sweep key must be one of {SWEEP_KEYS}")
    vals = [float(v) for v in values]
    if not vals or not all(np.isfinite(vals)):
        raise ValueError("sweep values must be finite")
    if vals != sorted(vals):
        raise ValueError("sweep values must be sorted")
    if guide not in GUIDES:
        raise ValueError(f"unknown guide {guide!r}")
    runner = runner or Runner(zoo, campaign)
    reports = []
    for v in vals:
        over: dict = {"methods": sweep_methods(key, v, guide), "ablations": (),
                      "epsilons": (campaign.mid_epsilon,)}
        if key == "lam":
            over["lam"] = v
        elif key == "C":
            over["C"] = v
        elif key == "epsilon":
            over["epsilons"] = (v,)
        elif key == "split":
            if v != int(v):
                raise ValueError("split depths must be integers")
            over["split"] = int(v)
        elif key == "runs" and v != int(v):
            raise ValueError("runs must be integers")
        point = replace(campaign, **over)
        rep = run_campaign(zoo, point, runner=runner)
        rep.provenance["sweep"] = {"key": key, "value": v}
        reports.append(rep)
    return reports


# --------------------------------------------------------------- correlation


@dataclass
class Correlation:
    r: float
    table: list[tuple[str, float, float]]  # (method, mean magnitude, mean victim success)


def correlation_report(report: TransferReport, methods: Sequence[str] | None = None,
                       epsilon: float | None = None) -> Correlation:
    """Pearson r between method-mean discrepancy magnitude and victim-average success."""
    methods = list(methods or report.methods)
    table = []
    for m in methods:
        eps_list = [epsilon] if epsilon is not None else report.epsilons(m)
        mag = float(np.mean([report.stat(m, e).mean_discrepancy for e in eps_list]))
        suc = float(np.mean([report.victim_average(m, e) for e in eps_list]))
        table.append((m, mag, suc))
    if len(table) < 3:
        raise ValueError("correlation needs at least 3 methods")
    mags = np.array([t[1] for t in table])
    sucs = np.array([t[2] for t in table])
    if np.ptp(mags) == 0 or np.ptp(sucs) == 0:
        raise ValueError("degenerate variance: magnitudes or success rates are all equal")
    return Correlation(float(np.corrcoef(mags, sucs)[0, 1]), table)


# ------------------------------------------------------------------- emitting


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _csv(rows: Iterable[Sequence], header: Sequence[str]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode()


def transfer_rows(report: TransferReport) -> list[tuple]:
    rows = []
    for s in report.stats:
        for v in report.victims:
            rows.append((s.method, s.norm, s.epsilon, v, round(report.success(s.method, s.epsilon, v), 6),
                         round(s.mean_discrepancy, 6), round(s.std_discrepancy, 6), s.n_inputs,
                         report.seed))
    return rows


def summary_rows(report: TransferReport) -> list[tuple]:
    return [(s.method, s.norm, s.epsilon, round(s.source_success, 6),
             round(report.victim_average(s.method, s.epsilon), 6), round(s.mean_discrepancy, 6),
             round(s.std_discrepancy, 6), s.n_inputs, report.seed) for s in report.stats]


def versions() -> dict:
    import numba
    import scipy

    return {"ilalab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def manifest(report: TransferReport) -> dict:
    return {"config": report.config, "config_hash": report.config_hash, "seed": report.seed,
            "source": report.source, "victims": report.victims, "versions": versions(),
            "runtime_seconds": report.runtime, "provenance": report.provenance}


def emit_reports(report: TransferReport, out_dir: str | Path,
                 formats: Sequence[str] = ("csv", "json", "plot")) -> list[Path]:
    """Write the report files atomically; returns their paths.

    ``csv``: ``transfer.csv`` (one row per method, epsilon and victim) and
    ``summary.csv``; ``json``: ``manifest.json``; ``plot``: numeric series
    under ``plots/``.
    """
    d = Path(out_dir)
    unknown = set(formats) - {"csv", "json", "plot"}
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    files: dict[Path, bytes] = {}
    if "csv" in formats:
        files[d / "transfer.csv"] = _csv(transfer_rows(report), CSV_FIELDS)
        files[d / "summary.csv"] = _csv(summary_rows(report), SUMMARY_FIELDS)
    if "json" in formats:
        files[d / "manifest.json"] = (json.dumps(manifest(report), indent=2, sort_keys=True,
                                                 default=str) + "\n").encode()
    if "plot" in formats:
        # magnitude vs success per method and epsilon
        rows = [(s.method, s.epsilon, round(s.mean_discrepancy, 6),
                 round(report.victim_average(s.method, s.epsilon), 6)) for s in report.stats]
        files[d / "plots" / "magnitude_vs_success.csv"] = _csv(
            rows, ("method", "epsilon", "x_magnitude", "y_success"))
        rows = [(s.method, s.epsilon, round(report.victim_average(s.method, s.epsilon), 6))
                for s in report.stats]
        files[d / "plots" / "success_vs_epsilon.csv"] = _csv(rows, ("method", "x_epsilon", "y_success"))
    out = []
    for path, payload in files.items():
        try:
            atomic_write(path, payload)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        out.append(path)
    return out


def emit_sweep(reports: Sequence[TransferReport], out_dir: str | Path) -> Path:
    """Sweep series: one row per (sweep value, method)."""
    rows = []
    for rep in reports:
        sw = rep.provenance.get("sweep", {})
        for s in rep.stats:
            rows.append((sw.get("key", ""), sw.get("value", ""), s.method, s.epsilon,
                         round(rep.victim_average(s.method, s.epsilon), 6),
                         round(s.mean_discrepancy, 6)))
    path = Path(out_dir) / "plots" / "sweep.csv"
    atomic_write(path, _csv(rows, ("key", "x_value", "method", "epsilon", "y_success", "magnitude")))
    return path
