"""Median loss curves of several sampling modes on the desk-scale configs.

    python scripts/compare_modes.py --problems elasticity diffusion --repeats 5

Writes one ``pinn-is compare`` output directory per problem under ``--out``.
"""
import argparse
import sys
from pathlib import Path

from pinn_is.cli import cmd_compare

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--problems", nargs="+", default=["elasticity", "diffusion", "planestress"])
    p.add_argument("--modes", default="uniform,pwc-loss,exact-loss")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--scale", choices=["desk", "paper"], default="desk")
    p.add_argument("--out", default="results/compare")
    args = p.parse_args(argv)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for name in args.problems:
        suffix = "_desk" if args.scale == "desk" else ""
        cfg = CONFIGS / f"{name}{suffix}.cfg"
        print(f"== {cfg.name}")
        code = cmd_compare(cfg, modes, args.repeats, Path(args.out) / name)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
