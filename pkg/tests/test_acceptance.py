"""Acceptance suite: exact numerical checks plus the directional orderings on the desk zoo.

Every criterion appends one ``PASS``/``FAIL`` line that the terminal summary
prints (see conftest). The pinned zoo is cached in pytest's cache directory,
keyed by its config; delete ``.pytest_cache`` to retrain from scratch.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from ilalab import guides as gd, harness as hs, regression as reg
from ilalab import tensor as T

from oracles import fd_input_grad, ridge_gd, svr_pgd

pytestmark = pytest.mark.acceptance

LINES: list[str] = []

# 200 inputs, 16/8/4 of 255, 100 iterations, p = 10; features taken after the first ReLU
CAMPAIGN = hs.Campaign(split=2)
MID = CAMPAIGN.mid_epsilon
LEARNED = ("ifgsm+rr", "ifgsm+svr", "ifgsm+en")
RANDOM = ("ifgsm+rand_input", "ifgsm+rand_feature")
NORMALIZED = ("rr", "svr", "en")
ABLATIONS = (*LEARNED[1:], *(f"ifgsm+{g}-norm" for g in NORMALIZED), *RANDOM,
             "pgdx1+rr", "pgdx10+rr", "pgdx1+svr", "pgdx10+svr", "linbp", "linbpx10+rr")
L1_SWEEP = (0.05, 0.1, 0.5, 1.0)


def verdict(n: int, ok: bool, detail: str):
    LINES.append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def at_least(a: float, b: float) -> bool:
    """``a >= b`` up to float rounding; success rates are ratios of small integers."""
    return a >= b - 1e-12


def pct(v: float) -> str:
    return f"{100 * v:.2f}%"


# ----------------------------------------------------------------- fixtures


@pytest.fixture(scope="session")
def zoo(request):
    return hs.ensure_zoo(request.config.cache.mkdir("ilalab-zoo"))


@pytest.fixture(scope="session")
def runner(zoo):
    """Shared by the main campaign, the ablations and the sweep, so baselines are reused."""
    return hs.Runner(zoo, CAMPAIGN)


@pytest.fixture(scope="session")
def main_report(zoo, runner):
    t0 = time.perf_counter()  # the runner is still cold here, so this is the full cost
    rep = hs.run_campaign(zoo, CAMPAIGN, runner=runner)
    rep.provenance["wall"] = time.perf_counter() - t0
    return rep


@pytest.fixture(scope="session")
def ablation_report(zoo, runner, main_report):
    c = replace(CAMPAIGN, methods=(), ablations=ABLATIONS)
    return main_report.merge(hs.run_campaign(zoo, c, runner=runner))


# ------------------------------------------------------- numerical criteria


def test_c01_gradients_match_finite_differences(zoo):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    x, y = zoo.dataset.test
    worst = 0.0
    for _ in range(50):
        m = zoo[zoo.names[rng.integers(len(zoo.names))]]
        i = rng.integers(len(y))
        xt = T.Tensor(x[i:i + 1], requires_grad=True)
        T.softmax_ce(m.forward(xt), y[i:i + 1], reduction="sum").backward()
        g = xt.grad.ravel().astype(np.float64)
        fd = fd_input_grad(m, x[i], int(y[i]))
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    dt = time.perf_counter() - t0
    verdict(1, worst < 1e-3 and dt < 60, f"max rel err {worst:.2e} over 50 pairs ({dt:.1f}s)")


def test_c02_regression_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    errs = {"rr/gd": 0.0, "rr/woodbury": 0.0, "en/rr": 0.0, "svr/qp": 0.0}
    rel = lambda a, b: np.linalg.norm(a - b) / np.linalg.norm(b)
    for _ in range(10):
        H, r = rng.normal(size=(7, 12)), rng.normal(size=7)
        for lam in (0.1, 1.0, 1e10):
            w = reg.ridge_primal(H, r, lam)
            errs["rr/gd"] = max(errs["rr/gd"], rel(w, ridge_gd(H, r, lam, steps=100_000)))
        H, r = rng.normal(size=(11, 64)), rng.normal(size=11)
        for lam in (1.0, 1e10):
            errs["rr/woodbury"] = max(errs["rr/woodbury"],
                                      rel(reg.ridge_dual(H, r, lam), reg.ridge_primal(H, r, lam)))
        errs["en/rr"] = max(errs["en/rr"], rel(reg.elasticnet(H, r, 0.0, 1.0), reg.ridge_primal(H, r, 1.0)))
        N, m = rng.integers(2, 9), rng.integers(1, 5)
        H, r = rng.normal(size=(N, m)), rng.normal(size=N)
        for C, e in ((0.5, 0.0), (2.0, 0.1)):
            errs["svr/qp"] = max(errs["svr/qp"], rel(reg.svr(H, r, C, e), svr_pgd(H, r, C, e)))
    dt = time.perf_counter() - t0
    ok = (errs["rr/gd"] < 1e-5 and errs["rr/woodbury"] < 1e-5 and errs["en/rr"] < 1e-5
          and errs["svr/qp"] < 1e-3 and dt < 60)
    verdict(2, ok, " ".join(f"{k}={v:.1e}" for k, v in errs.items()) + f" ({dt:.1f}s)")


def test_c03_correlation_approximates_strong_ridge(zoo):
    trs = [t[0] for t in hs.Runner(zoo, CAMPAIGN).trajectories("ifgsm", False, MID, 1)]
    t0 = time.perf_counter()
    cos = []
    for t in trs:
        ds = gd.build_dataset([t])
        w = reg.ridge_dual(ds.H, ds.r, 1e10)
        a = reg.ridge_approx(ds.H, ds.r)
        cos.append(w @ a / (np.linalg.norm(w) * np.linalg.norm(a)))
    dt = time.perf_counter() - t0
    verdict(3, min(cos) > 0.999 and dt < 60,
            f"min cosine {min(cos):.6f} over {len(cos)} real trajectories ({dt:.1f}s)")


# ------------------------------------------------------- transfer criteria


def test_c04_baseline_fools_the_source(zoo):
    t0 = time.perf_counter()
    runner = hs.Runner(zoo, CAMPAIGN)
    b = runner.batch("ifgsm", MID)
    dt = time.perf_counter() - t0
    succ = float(np.mean(runner.source.predict(b.images) != b.labels))
    verdict(4, succ >= 0.99 and dt < 120, f"source success {pct(succ)} at mid eps ({dt:.1f}s)")


def test_c05_refinement_gain(main_report):
    rep, parts, ok = main_report, [], True
    for eps in CAMPAIGN.epsilons:
        base, ila, rr = (rep.victim_average(m, eps) for m in ("ifgsm", "ifgsm+ila", "ifgsm+rr"))
        good = at_least(rr - base, 0.02) and at_least(rr, ila - 0.005)
        ok &= good
        parts.append(f"{round(eps * 255)}/255: I-FGSM {pct(base)} ILA {pct(ila)} RR {pct(rr)}"
                     f"{'' if good else ' <-'}")
    wall = rep.provenance["wall"]
    verdict(5, ok and wall < 600, "; ".join(parts) + f" ({wall:.0f}s)")


def test_c06_normalization_hurts(ablation_report):
    rep, parts, ok = ablation_report, [], True
    for g in NORMALIZED:
        plain, norm = rep.victim_average(f"ifgsm+{g}", MID), rep.victim_average(f"ifgsm+{g}-norm", MID)
        ok &= at_least(plain - norm, 0.02)
        parts.append(f"{g} {pct(plain)} vs normalized {pct(norm)}")
    verdict(6, ok, "; ".join(parts))


def test_c07_random_guides_underperform(ablation_report):
    rep = ablation_report
    learned = {m: rep.victim_average(m, MID) for m in LEARNED}
    rand = {m: rep.victim_average(m, MID) for m in RANDOM}
    below = max(rand.values()) < min(learned.values())
    base_mag, base_succ = rep.stat("ifgsm", MID).mean_discrepancy, rep.victim_average("ifgsm", MID)
    mags = {m: rep.stat(m, MID).mean_discrepancy for m in RANDOM}
    dissociated = any(at_least(mags[m], base_mag) and rand[m] < base_succ for m in RANDOM)
    detail = ", ".join(f"{m} {pct(v)} |d|={mags[m]:.2f}" for m, v in rand.items())
    detail += f"; learned min {pct(min(learned.values()))}; I-FGSM {pct(base_succ)} |d|={base_mag:.2f}"
    verdict(7, below and dissociated, detail)


def test_c08_magnitude_correlates_with_success(ablation_report):
    corr = hs.correlation_report(ablation_report, ["ifgsm", *LEARNED], MID)
    detail = ", ".join(f"{m} ({mag:.2f}, {pct(s)})" for m, mag, s in corr.table)
    verdict(8, corr.r > 0, f"pearson r = {corr.r:.3f} over {detail}")


def test_c09_more_runs_help(ablation_report):
    rep, gains = ablation_report, {}
    for g in ("rr", "svr"):
        gains[g] = rep.victim_average(f"pgdx10+{g}", MID) - rep.victim_average(f"pgdx1+{g}", MID)
    ok = at_least(min(gains.values()), 0.0) and at_least(max(gains.values()), 0.01)
    verdict(9, ok, ", ".join(f"{g}: R=10 minus R=1 = {100 * v:+.2f} pts" for g, v in gains.items()))


def test_c10_linbp_pathway(ablation_report):
    rep = ablation_report
    base, lin, lin_rr = (rep.victim_average(m, MID) for m in ("ifgsm", "linbp", "linbpx10+rr"))
    ok = at_least(lin - base, 0.02) and at_least(lin_rr - lin, 0.02)
    verdict(10, ok, f"I-FGSM {pct(base)}, LinBP {pct(lin)}, LinBPx10+RR {pct(lin_rr)}")


def test_c11_elasticnet_l1_sweep(zoo, runner):
    reps = hs.run_sweep(zoo, CAMPAIGN, "lambda1", L1_SWEEP, guide="en", runner=runner)
    succ = [r.victim_average(r.methods[0], MID) for r in reps]
    ok = all(at_least(a + 0.005, b) for a, b in zip(succ, succ[1:]))
    verdict(11, ok, ", ".join(f"l1={l:g}: {pct(s)}" for l, s in zip(L1_SWEEP, succ)))


def test_c12_campaign_csv_is_byte_identical(zoo, main_report, tmp_path):
    """A fresh runner repeats the main campaign; both CSVs must match byte for byte."""
    hs.emit_reports(main_report, tmp_path / "a", ("csv",))
    hs.emit_reports(hs.run_campaign(zoo, CAMPAIGN), tmp_path / "b", ("csv",))
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("transfer.csv", "summary.csv")]
    verdict(12, all(same), f"transfer.csv identical: {same[0]}, summary.csv identical: {same[1]}")
