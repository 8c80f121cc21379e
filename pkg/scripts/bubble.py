"""Rising bubble benchmark; writes the CSV time series and VTK snapshots.

    python3 scripts/bubble.py [bubble1|bubble2] [--out out/bubble]
"""

import argparse

from levelflow.cli import load_scenario
from levelflow.runner import run

ap = argparse.ArgumentParser()
ap.add_argument("case", nargs="?", default="bubble1")
ap.add_argument("--out", default="out/bubble")
args = ap.parse_args()


def report(state, row):
    if row.step % 50 == 0:
        print(f"step {row.step:5d} t={row.t:.4f} area={row.area:.6f} y_c={row.y_c:.5f} u_c={row.u_c:.5f} "
              f"cells={row.n_cells}", flush=True)


res = run(load_scenario(args.case), out_dir=args.out, callback=report)
print(f"status {res.status} {res.message} csv {res.csv_path}")
