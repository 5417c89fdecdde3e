"""Train the diffusion problem and report its error against the series solution.

    python scripts/diffusion_accuracy.py --seeds 0 1 2 3 4
"""
import argparse
import sys
from dataclasses import replace
from pathlib import Path

from pinn_is.cli import load_config
from pinn_is.trainer import evaluate_error, train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(CONFIGS / "diffusion_desk.cfg"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--mode", default=None)
    p.add_argument("--n-eval", type=int, default=20_000)
    args = p.parse_args(argv)
    base = load_config(args.config).train
    if args.mode:
        base = replace(base, sampling_mode=args.mode)
    for r in args.seeds:
        cfg = replace(base, rng_seed=base.rng_seed + r,
                      network=replace(base.network, init_seed=base.network.init_seed + r))
        params, recs = train(cfg)
        err = evaluate_error(params, cfg.problem, cfg.network.activation, args.n_eval)
        print(f"seed {r}: final loss {recs[-1].total_loss:.4g}  relative L2 error {100 * err:.2f}%"
              f"  ({recs[-1].wall_clock_seconds:.0f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
