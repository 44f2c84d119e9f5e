"""Command-line interface.

Every flag ``--some-flag`` of subcommand ``S`` can also be set in a config file
(``--config FILE``) as ``<ns>.some_flag = value`` where ``<ns>`` is the
subcommand's namespace. ``sweep`` and ``report`` also read the shared
``campaign`` namespace. Command-line flags override the file.

Exit status: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import config as cfgmod
from . import data as data_mod
from . import formats as fmt
from . import guides as gd
from . import harness as hs
from . import models as mdl
from . import refine as rf

log = logging.getLogger("ilalab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

NAMESPACES = {"dataset": "dataset", "train": "train", "attack": "attack", "fit-guide": "guide",
              "refine": "refine", "evaluate": "evaluate", "sweep": "sweep", "report": "report"}
SHARED = {"sweep": ("campaign",), "report": ("campaign",)}


class ConfigProblem(Exception):
    """Bad configuration detected before any work starts."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigProblem(f"{self.prog}: {message}")


def _floats(s: str) -> tuple[float, ...]:
    try:
        return tuple(_eps(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _eps(s: str) -> float:
    """A number, or a fraction such as ``8/255``."""
    s = s.strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


def _ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _strs(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _split(s: str) -> int | None:
    k = int(s)
    return None if k == 0 else k


def _workdir(p):
    p.add_argument("--workdir", default="work", help="directory holding data/ and models/")


def _attack_flags(p):
    p.add_argument("--norm", choices=atk.NORMS, default="linf")
    p.add_argument("--alpha", type=_eps, default=None, help="step size (default 1/255 or eps/5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source", default=hs.Campaign.source)
    p.add_argument("--split", type=_split, default=hs.Campaign.split,
                   help="split depth k (default: the arch default)")
    p.add_argument("--n-inputs", type=int, default=200)


def _campaign_flags(p):
    _workdir(p)
    p.add_argument("--source", default=hs.Campaign.source)
    p.add_argument("--victims", type=_strs, default=(), help="default: all other zoo models")
    p.add_argument("--n-inputs", type=int, default=200)
    p.add_argument("--norm", choices=atk.NORMS, default="linf")
    p.add_argument("--epsilons", type=_floats, default=None,
                   help="default 16/255,8/255,4/255 (linf) or 2,1,0.5 (l2)")
    p.add_argument("--methods", type=_strs, default=hs.Campaign.methods)
    p.add_argument("--ablations", type=_strs, default=())
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--refine-iterations", type=int, default=100)
    p.add_argument("--samples", type=int, default=10, help="p, sampled iterates per run")
    p.add_argument("--sampling", choices=atk.SAMPLING, default="even")
    p.add_argument("--alpha", type=_eps, default=None)
    p.add_argument("--split", type=_split, default=hs.Campaign.split,
                   help="split depth k (default: the arch default)")
    p.add_argument("--lam", type=float, default=1e10)
    p.add_argument("--svr-c", type=float, default=1e-10)
    p.add_argument("--svr-e", type=float, default=0.0)
    p.add_argument("--lambda1", type=float, default=0.05)
    p.add_argument("--lambda2", type=float, default=hs.Campaign.lambda2)
    p.add_argument("--sigma-in", type=float, default=None)
    p.add_argument("--sigma-feat", type=float, default=None)
    p.add_argument("--linbp-relus", type=int, default=2)
    p.add_argument("--refine-start", choices=("benign", "baseline"), default="benign")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="report directory (default <workdir>/<command>)")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="ilalab", description=__doc__.splitlines()[0])
    top.add_argument("--config", default=None, help="flat key = value config file")
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dataset", help="generate the built-in shape set or ingest IDX files")
    _workdir(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=6000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--idx", default=None, help="directory with IDX files to ingest instead")

    p = sub.add_parser("train", help="train the model zoo")
    _workdir(p)
    p.add_argument("--archs", type=_strs, default=mdl.ARCH_IDS)
    p.add_argument("--seeds", type=_ints, default=(0, 1))
    p.add_argument("--lr", type=float, default=hs.ZooConfig.lr)
    p.add_argument("--mlp-epochs", type=int, default=hs.ZooConfig.mlp_epochs)
    p.add_argument("--cnn-epochs", type=int, default=hs.ZooConfig.cnn_epochs)

    p = sub.add_parser("attack", help="baseline attack with trajectory dumps")
    _workdir(p)
    _attack_flags(p)
    p.add_argument("--epsilon", type=_eps, default=8 / 255)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--sampling", choices=atk.SAMPLING, default="even")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--random-init", type=_bool, default=False)
    p.add_argument("--linbp-relus", type=int, default=0, help="> 0 selects LinBP")
    p.add_argument("--store-inputs", type=_bool, default=False)
    p.add_argument("--out", default=None, help="default <workdir>/attack")

    p = sub.add_parser("fit-guide", help="fit directional guides from trajectory dumps")
    _workdir(p)
    p.add_argument("--traj", default=None, help="trajectory directory (default <workdir>/attack/traj)")
    p.add_argument("--method", choices=gd.METHODS, default="rr")
    p.add_argument("--normalized", type=_bool, default=False)
    p.add_argument("--lam", type=float, default=1e10)
    p.add_argument("--lambda1", type=float, default=0.05)
    p.add_argument("--lambda2", type=float, default=hs.Campaign.lambda2)
    p.add_argument("--svr-c", type=float, default=1e-10)
    p.add_argument("--svr-e", type=float, default=0.0)
    p.add_argument("--regressor", choices=gd.FIT_METHODS, default="rr", help="for random guides")
    p.add_argument("--sigma", type=float, default=None, help="random-guide noise scale")
    p.add_argument("--samples", type=int, default=10, help="random-guide sample count")
    p.add_argument("--source", default=hs.Campaign.source)
    p.add_argument("--split", type=_split, default=hs.Campaign.split,
                   help="split depth k (default: the arch default)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="default <workdir>/guides.ilag")

    p = sub.add_parser("refine", help="refine inputs along fitted guides")
    _workdir(p)
    p.add_argument("--guides", default=None, help="guide file (default <workdir>/guides.ilag)")
    p.add_argument("--source", default=hs.Campaign.source)
    p.add_argument("--split", type=_split, default=hs.Campaign.split,
                   help="split depth k (default: the arch default)")
    p.add_argument("--norm", choices=atk.NORMS, default="linf")
    p.add_argument("--epsilon", type=_eps, default=8 / 255)
    p.add_argument("--alpha", type=_eps, default=None)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--objective", choices=rf.OBJECTIVES, default="projection")
    p.add_argument("--start", choices=("benign", "baseline"), default="benign")
    p.add_argument("--baseline", default=None, help="baseline adversarial batch for --start baseline")
    p.add_argument("--label", default=None, help="method label recorded in the batch")
    p.add_argument("--out", default=None, help="default <workdir>/refined.ilab")

    p = sub.add_parser("evaluate", help="transfer success of adversarial batches")
    _workdir(p)
    p.add_argument("--batches", type=_strs, default=None, help="batch files (default <workdir>/*.ilab)")
    p.add_argument("--source", default=hs.Campaign.source)
    p.add_argument("--victims", type=_strs, default=())
    p.add_argument("--split", type=_split, default=None, help="default: the split recorded in each batch")
    p.add_argument("--out", default=None, help="default <workdir>/evaluate")

    p = sub.add_parser("sweep", help="one report per value of a swept setting")
    _campaign_flags(p)
    p.add_argument("--runs", type=_ints, default=None, help="sweep the number of PGD runs")
    p.add_argument("--sweep-lambda1", type=_floats, default=None)
    p.add_argument("--sweep-lam", type=_floats, default=None)
    p.add_argument("--sweep-c", type=_floats, default=None)
    p.add_argument("--sweep-epsilon", type=_floats, default=None)
    p.add_argument("--sweep-split", type=_ints, default=None, help="sweep the split depth k")
    p.add_argument("--guide", choices=hs.GUIDES, default="rr")

    p = sub.add_parser("report", help="full campaign: attacks, refinement, transfer reports")
    _campaign_flags(p)
    p.add_argument("--correlation", type=_strs, default=(),
                   help="methods whose magnitude/success correlation is reported")
    p.add_argument("--formats", type=_strs, default=("csv", "json", "plot"))
    return top


def _config_argv(sub: argparse.ArgumentParser, command: str, cfg: dict[str, str]) -> list[str]:
    ns = NAMESPACES[command]
    known_ns = set(NAMESPACES.values()) | {"campaign"}
    opts = {a.dest: a for a in sub._actions if a.option_strings}
    merged: dict[str, str] = {}
    for space in (*SHARED.get(command, ()), ns):
        for key, value in cfgmod.section(cfg, space).items():
            if key not in opts or key == "help":
                raise ConfigProblem(f"config key {space}.{key} is not a flag of '{command}'")
            merged[key] = value
    for key in cfg:
        if key.split(".", 1)[0].replace("-", "_") not in known_ns:
            raise ConfigProblem(f"config key {key!r} has an unknown namespace")
    argv = []
    for key, value in merged.items():
        argv += [opts[key].option_strings[-1], value]
    return argv


def parse_args(argv: list[str]) -> argparse.Namespace:
    top = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return top.parse_args(argv)
    try:
        cfg = cfgmod.load_config(known.config)
    except cfgmod.ConfigError as exc:
        raise ConfigProblem(str(exc)) from exc
    # locate the subcommand, then splice config flags right after it
    sub_actions = [a for a in top._actions if isinstance(a, argparse._SubParsersAction)][0]
    pos = next((i for i, a in enumerate(rest) if a in sub_actions.choices), None)
    if pos is None:
        return top.parse_args(rest)
    command = rest[pos]
    extra = _config_argv(sub_actions.choices[command], command, cfg)
    args = top.parse_args(rest[:pos + 1] + extra + rest[pos + 1:])
    args.config = known.config
    return args


# ------------------------------------------------------------------ commands


def _zoo(workdir) -> hs.Zoo:
    try:
        return hs.load_zoo(workdir)
    except hs.ZooMissing as exc:
        raise ConfigProblem(str(exc)) from exc


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(args.workdir) / default


def cmd_dataset(args):
    if args.idx:
        ds = data_mod.load_idx_dataset(args.idx)
    else:
        ds = data_mod.make_shapes(args.n_train, args.n_test, seed=args.seed)
    data_mod.save_idx_dataset(ds, Path(args.workdir) / "data")
    print(f"dataset: {len(ds.train[1])} train / {len(ds.test[1])} test -> {args.workdir}/data")


def cmd_train(args):
    d = Path(args.workdir)
    if not (d / "data").is_dir():
        raise ConfigProblem(f"no dataset under {d}; run 'ilalab dataset --workdir {d}' first")
    for a in args.archs:
        if a not in mdl.ARCH_IDS:
            raise ConfigProblem(f"unknown arch {a!r}; known: {', '.join(mdl.ARCH_IDS)}")
    zcfg = hs.ZooConfig(archs=tuple(args.archs), seeds=tuple(args.seeds), lr=args.lr,
                        mlp_epochs=args.mlp_epochs, cnn_epochs=args.cnn_epochs)
    ds = data_mod.load_idx_dataset(d / "data")
    zoo = hs.train_zoo(ds, zcfg)
    for name, m in zoo.models.items():
        fmt.save_checkpoint(m, d / "models" / f"{name}.ilaf")
        print(f"{name}: test accuracy {m.metadata['test_acc']:.4f}")


def _eval_set(zoo, source, n_inputs):
    idx = hs.evaluation_set(zoo, zoo.names, n_inputs)
    x, y = zoo.dataset.test
    return idx, x[idx], y[idx]


def cmd_attack(args):
    zoo = _zoo(args.workdir)
    source = zoo[args.source]
    cfg = atk.AttackConfig(norm=args.norm, epsilon=args.epsilon, alpha=args.alpha,
                           iterations=args.iterations, sample_count=args.samples,
                           random_init=args.random_init, runs=args.runs, seed=args.seed,
                           sampling=args.sampling)
    sm = mdl.split(source, args.split)
    idx, x, y = _eval_set(zoo, source, args.n_inputs)
    chash = fmt.config_hash({"attack": cfg.to_dict(), "source": args.source, "split": sm.k,
                             "linbp_relus": args.linbp_relus})
    keep = args.store_inputs
    if args.runs > 1 or args.random_init:
        per_input = atk.pgd_multirun(sm, x, y, cfg, idx, n_linear_relus=args.linbp_relus,
                                     keep_inputs=keep)
    elif args.linbp_relus:
        per_input = [[t] for t in atk.linbp_attack(sm, x, y, cfg, args.linbp_relus, idx, keep)]
    else:
        per_input = [[t] for t in atk.ifgsm(sm, x, y, cfg, idx, keep)]
    out = _out(args, "attack")
    for runs in per_input:
        for tr in runs:
            fmt.save_trajectory(tr, out / "traj", chash, store_inputs=keep)
    label = ("linbp" if args.linbp_relus else "pgd" if args.random_init else "ifgsm")
    if args.runs > 1:
        label += f"x{args.runs}"
    finals = np.stack([r[0].final for r in per_input])
    header = {"cfg_hash": chash, "method": label, "norm": args.norm, "epsilon": args.epsilon,
              "source": args.source, "split": sm.k, "victims": [], "seed": args.seed}
    fmt.save_adv_batch(fmt.AdvBatch(idx, y, finals, header), out / "baseline.ilab")
    success = float(np.mean(source.predict(finals) != y))
    print(f"{label}: {len(idx)} inputs x {args.runs} run(s), source success {success:.4f} -> {out}")


def _load_trajectories(directory: Path) -> dict[int, list[atk.Trajectory]]:
    files = sorted(directory.glob("traj_*.bin"))
    if not files:
        raise ConfigProblem(f"no trajectory files in {directory}; run 'ilalab attack' first")
    groups: dict[int, list] = defaultdict(list)
    hashes = set()
    for f in files:
        tr, h = fmt.load_trajectory(f)
        groups[tr.index].append(tr)
        hashes.add(h)
    if len(hashes) > 1:
        raise ConfigProblem(f"{directory} mixes trajectories from {len(hashes)} attack configs")
    return dict(sorted(groups.items()))


def cmd_fit_guide(args):
    traj_dir = Path(args.traj) if args.traj else Path(args.workdir) / "attack" / "traj"
    groups = _load_trajectories(traj_dir)
    indices = list(groups)
    spec = gd.GuideSpec(method=args.method, lam=args.lam, lambda1=args.lambda1,
                        lambda2=args.lambda2, C=args.svr_c, e=args.svr_e,
                        regressor=args.regressor)
    hyper = {**spec.to_dict(), "normalized": args.normalized}
    if args.method == "ila_huang":
        guides = [gd.ila_direction(trs[0]) for trs in groups.values()]
    elif args.method in gd.RANDOM_METHODS:
        zoo = _zoo(args.workdir)
        sm = mdl.split(zoo[args.source], args.split)
        x, y = zoo.dataset.test
        x, y = x[indices], y[indices]
        sig = args.sigma
        if sig is None:
            if any(t[0].final is None for t in groups.values()):
                raise ConfigProblem("sigma calibration needs trajectories dumped with --store-inputs true")
            s_in, s_feat = gd.calibrate_sigmas([t[0] for t in groups.values()], x)
            sig = s_in if args.method == "rand_input" else s_feat
        fn = gd.random_guide_input if args.method == "rand_input" else gd.random_guide_feature
        guides = fn(sm, x, y, args.samples, sig, args.seed, spec, indices)
        hyper["sigma"] = sig
    else:
        guides = []
        for trs in groups.values():
            ds = gd.build_dataset(trs)
            if args.normalized:
                ds = gd.normalize_rows(ds)
            guides.append(gd.fit(ds, spec))
    out = Path(args.out) if args.out else Path(args.workdir) / "guides.ilag"
    fmt.save_guides(out, guides, args.method, hyper, indices)
    print(f"{args.method}: {len(guides)} guides -> {out}")


def cmd_refine(args):
    gpath = Path(args.guides) if args.guides else Path(args.workdir) / "guides.ilag"
    if not gpath.exists():
        raise ConfigProblem(f"guide file {gpath} not found; run 'ilalab fit-guide' first")
    guides, head = fmt.load_guides(gpath)
    cfg = rf.RefineConfig(norm=args.norm, epsilon=args.epsilon, alpha=args.alpha,
                          iterations=args.iterations, objective=args.objective, start=args.start)
    zoo = _zoo(args.workdir)
    sm = mdl.split(zoo[args.source], args.split)
    idx = np.asarray(head["indices"])
    x, y = zoo.dataset.test
    x, y = x[idx], y[idx]
    x_start = None
    if args.start == "baseline":
        if not args.baseline:
            raise ConfigProblem("--start baseline needs --baseline <batch file>")
        base = fmt.load_adv_batch(args.baseline)
        if not np.array_equal(base.indices, idx):
            raise ConfigProblem("baseline batch and guide file cover different inputs")
        x_start = base.images
    adv = rf.refine(sm, x, guides, cfg, x_start=x_start)
    label = args.label or ("ifgsm+" + {"ila_huang": "ila", "elasticnet": "en"}.get(head["method"], head["method"])
                           + ("-norm" if head["hyper"].get("normalized") else ""))
    chash = fmt.config_hash({"refine": cfg.to_dict(), "guides": head, "source": args.source})
    header = {"cfg_hash": chash, "method": label, "norm": args.norm, "epsilon": args.epsilon,
              "source": args.source, "split": sm.k, "victims": [], "seed": 0}
    out = Path(args.out) if args.out else Path(args.workdir) / "refined.ilab"
    fmt.save_adv_batch(fmt.AdvBatch(idx, y, adv, header), out)
    success = float(np.mean(zoo[args.source].predict(adv) != y))
    print(f"{label}: refined {len(idx)} inputs, source success {success:.4f} -> {out}")


def cmd_evaluate(args):
    zoo = _zoo(args.workdir)
    paths = [Path(p) for p in args.batches] if args.batches else sorted(Path(args.workdir).glob("*.ilab"))
    paths += [] if args.batches else sorted((Path(args.workdir) / "attack").glob("*.ilab"))
    if not paths:
        raise ConfigProblem("no adversarial batches to evaluate; pass --batches")
    source = zoo[args.source]
    victims = [v for v in (list(args.victims) or zoo.names) if v != args.source]
    x, _ = zoo.dataset.test
    report = hs.TransferReport(source.name, victims, 0)
    for p in paths:
        b = fmt.load_adv_batch(p)
        report = report.merge(hs.evaluate_transfer(b, {v: zoo[v] for v in victims}, source,
                                                   x[b.indices], split=args.split))
    report.config = {"batches": [str(p) for p in paths], "source": source.name, "victims": victims}
    report.config_hash = fmt.config_hash(report.config)
    out = _out(args, "evaluate")
    hs.emit_reports(report, out)
    _print_summary(report)
    print(f"reports -> {out}")


def _campaign(args) -> hs.Campaign:
    eps = args.epsilons or (hs.LINF_EPSILONS if args.norm == "linf" else hs.L2_EPSILONS)
    try:
        return hs.Campaign(source=args.source, victims=tuple(args.victims), n_inputs=args.n_inputs,
                           norm=args.norm, epsilons=tuple(eps), methods=tuple(args.methods),
                           ablations=tuple(args.ablations), iterations=args.iterations,
                           refine_iterations=args.refine_iterations, sample_count=args.samples,
                           sampling=args.sampling, alpha=args.alpha, split=args.split,
                           lam=args.lam, C=args.svr_c, e=args.svr_e, lambda1=args.lambda1,
                           lambda2=args.lambda2, sigma_in=args.sigma_in,
                           sigma_feat=args.sigma_feat, linbp_relus=args.linbp_relus,
                           refine_start=args.refine_start, seed=args.seed)
    except ValueError as exc:
        raise ConfigProblem(str(exc)) from exc


def _print_summary(report: hs.TransferReport):
    for row in hs.summary_rows(report):
        method, _, eps, src, avg, mag = row[:6]
        print(f"{method:24s} eps={eps:.5f} source={src:.4f} victim_avg={avg:.4f} magnitude={mag:.4f}")


def cmd_sweep(args):
    axes = {"runs": args.runs, "lambda1": args.sweep_lambda1, "lam": args.sweep_lam,
            "C": args.sweep_c, "epsilon": args.sweep_epsilon, "split": args.sweep_split}
    chosen = [(k, v) for k, v in axes.items() if v]
    if len(chosen) != 1:
        raise ConfigProblem("choose exactly one sweep axis (--runs, --sweep-lambda1, --sweep-lam, "
                            "--sweep-c, --sweep-epsilon, --sweep-split)")
    key, values = chosen[0]
    campaign = _campaign(args)
    zoo = _zoo(args.workdir)
    reports = hs.run_sweep(zoo, campaign, key, values, args.guide)
    out = _out(args, "sweep")
    # one directory per point: labels repeat across points for lam, C and split
    for rep in reports:
        hs.emit_reports(rep, out / f"{key}={rep.provenance['sweep']['value']:g}")
        _print_summary(rep)
    hs.emit_sweep(reports, out)
    print(f"reports -> {out}")


def cmd_report(args):
    campaign = _campaign(args)
    zoo = _zoo(args.workdir)
    out = _out(args, "report")
    report = hs.run_campaign(zoo, campaign, out_dir=out)
    hs.emit_reports(report, out, args.formats)
    _print_summary(report)
    if args.correlation:
        corr = hs.correlation_report(report, args.correlation, campaign.mid_epsilon)
        for m, mag, suc in corr.table:
            print(f"  {m:24s} magnitude={mag:.4f} success={suc:.4f}")
        print(f"pearson r = {corr.r:.4f}")
    print(f"reports -> {out}")


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "attack": cmd_attack,
            "fit-guide": cmd_fit_guide, "refine": cmd_refine, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except ConfigProblem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command](args)
    except ConfigProblem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported and mapped to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
