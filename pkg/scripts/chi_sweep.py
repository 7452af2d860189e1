"""Sweep the chemotactic strength and emit a region table (growth-condition verdict vs observed floor).

    python3 scripts/chi_sweep.py --config configs/sweep_chi.json --out runs/chi_sweep --parallelism 2
"""
import argparse
import json
from pathlib import Path

from kslab.run import emit_plotdata, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path(__file__).parent.parent / "configs" / "sweep_chi.json")
    ap.add_argument("--chi", type=float, nargs="+", help="override the chi grid")
    ap.add_argument("--out", type=Path, default=Path("runs/chi_sweep"))
    ap.add_argument("--parallelism", type=int, default=1)
    args = ap.parse_args()

    raw = json.loads(args.config.read_text())
    axes = dict(raw.get("sweep", {}).get("axes", {}))
    if args.chi:
        axes["coefficients.chi"] = args.chi
    led = sweep(raw, axes, parallelism=args.parallelism, out_dir=args.out, base_dir=args.config.parent)
    region = emit_plotdata(led.out_dir, "region")
    print(region.read_text(), end="")


if __name__ == "__main__":
    main()
