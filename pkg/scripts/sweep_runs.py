"""Victim-average success against the number of randomly started PGD runs R.

    python scripts/sweep_runs.py --workdir work --runs 1,2,5,10
"""

import argparse
import logging
from pathlib import Path

from ilalab import harness as hs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="work")
    ap.add_argument("--runs", default="1,2,5,10")
    ap.add_argument("--guides", default="rr,svr,en")
    ap.add_argument("--base", choices=("pgd", "linbp"), default="pgd")
    ap.add_argument("--n-inputs", type=int, default=hs.Campaign.n_inputs)
    ap.add_argument("--split", type=int, default=2, help="feature split depth k")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    zoo = hs.ensure_zoo(args.workdir)
    runs = [int(r) for r in args.runs.split(",")]
    campaign = hs.Campaign(n_inputs=args.n_inputs, split=args.split)
    runner = hs.Runner(zoo, campaign)  # shared, so R=10 reuses the runs made for R=5
    reports = []
    for guide in args.guides.split(","):
        for r in runs:
            c = hs.Campaign(n_inputs=args.n_inputs, split=args.split, methods=(f"{args.base}x{r}+{guide}",),
                            epsilons=(campaign.mid_epsilon,))
            rep = hs.run_campaign(zoo, c, runner=runner)
            rep.provenance["sweep"] = {"key": "runs", "value": r}
            reports.append(rep)
            print(f"{rep.methods[0]:16s} {100 * rep.victim_average(rep.methods[0], campaign.mid_epsilon):6.2f}%")
    print("wrote", hs.emit_sweep(reports, Path(args.workdir) / f"sweep_{args.base}_runs"))


if __name__ == "__main__":
    main()
