"""PWC approximation error of the interior loss versus the number of seeds.

Trains one pwc-loss run on a desk config and, every ``--every`` iterations,
measures how well S seeds reproduce the per-point residual losses.

    python scripts/seed_study.py --seeds 10 50 100 500 1000 --out results/seeds.csv
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from pinn_is.cli import load_config
from pinn_is.geometry import nearest_seed
from pinn_is.problems import LossGraph
from pinn_is.trainer import pwc_approximation_error, train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(CONFIGS / "elasticity_desk.cfg"))
    p.add_argument("--seeds", type=int, nargs="+", default=[10, 50, 100, 500, 1000])
    p.add_argument("--every", type=int, default=10)
    p.add_argument("--out", default="results/seeds.csv")
    args = p.parse_args(argv)
    cfg = load_config(args.config).train
    rows, graph = [], {}

    def probe(i, params, td, elapsed):
        if i % args.every:
            return
        if "g" not in graph:
            graph["g"] = LossGraph(cfg.problem, cfg.network, td.seed_data)
        interior = td.points["interior"].points
        row = [i]
        for s in args.seeds:
            seeds = {g: d.take(slice(0, s)) for g, d in td.data.items()}
            rho = nearest_seed(interior, interior[:s])
            row.append(pwc_approximation_error(params, graph["g"], td.collocation(), seeds, rho))
        rows.append(row)

    train(cfg, callback=probe)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", *(f"S={s}" for s in args.seeds)])
        w.writerows(rows)
    med = np.median(np.array(rows)[:, 1:], axis=0)
    for s, e in zip(args.seeds, med):
        print(f"S={s:<6d} median relative L2 error {e:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
