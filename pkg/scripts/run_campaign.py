"""Train (or reuse) the desk zoo, run the full campaign with every ablation, write reports.

    python scripts/run_campaign.py --workdir work --out work/campaign
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from ilalab import harness as hs

ABLATIONS = ("ifgsm+svr", "ifgsm+en", "ifgsm+rr-norm", "ifgsm+svr-norm", "ifgsm+en-norm",
             "ifgsm+rand_input", "ifgsm+rand_feature", "pgdx10+rr", "pgdx10+svr", "pgdx10+en",
             "linbp", "linbpx10+rr", "linbpx10+svr")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="work")
    ap.add_argument("--out", default=None)
    ap.add_argument("--n-inputs", type=int, default=hs.Campaign.n_inputs)
    ap.add_argument("--split", type=int, default=2, help="feature split depth k")
    ap.add_argument("--norm", choices=("linf", "l2"), default="linf")
    ap.add_argument("--no-ablations", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    zoo = hs.ensure_zoo(args.workdir)
    eps = hs.LINF_EPSILONS if args.norm == "linf" else hs.L2_EPSILONS
    campaign = hs.Campaign(n_inputs=args.n_inputs, split=args.split, norm=args.norm, epsilons=eps,
                           ablations=() if args.no_ablations else ABLATIONS)
    runner = hs.Runner(zoo, campaign)
    report = hs.run_campaign(zoo, campaign, runner=runner)
    out = Path(args.out or Path(args.workdir) / f"campaign_{args.norm}")
    hs.emit_reports(report, out)

    print(f"source {report.source}, {len(report.victims)} victims, {campaign.n_inputs} inputs")
    for method in report.methods:
        for e in report.epsilons(method):
            s = report.stat(method, e)
            print(f"  {method:22s} eps={e:.4f}  source {100 * s.source_success:6.2f}%  "
                  f"victims {100 * report.victim_average(method, e):6.2f}%  |d| {s.mean_discrepancy:.3f}")
    sweep = hs.run_sweep(zoo, replace(campaign, ablations=()), "lambda1", [0.05, 0.1, 0.5, 1.0],
                         guide="en", runner=runner)
    hs.emit_sweep(sweep, out / "l1")
    print(f"reports under {out}")


if __name__ == "__main__":
    main()
