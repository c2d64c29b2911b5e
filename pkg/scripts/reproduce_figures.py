"""Write the jump-boundary and regime-switching figure data as CSV and JSON."""

import argparse
import json
from pathlib import Path

from fellerstop.experiments import FIGURES


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="figures_out")
    p.add_argument("--grid-n", type=int, default=None)
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, run in FIGURES.items():
        summary = run(out, grid_n=args.grid_n)
        print(name, json.dumps(summary["exercise_points"]))


if __name__ == "__main__":
    main()
