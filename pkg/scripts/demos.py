"""Short runs of the jet scenarios (bouncing_newtonian, kaye, buckling2d).

    python3 scripts/demos.py [names...] [--steps 500] [--out out/demos]
"""

import argparse

from levelflow.cli import load_scenario
from levelflow.runner import run

ap = argparse.ArgumentParser()
ap.add_argument("names", nargs="*", default=["bouncing_newtonian", "kaye", "buckling2d"])
ap.add_argument("--steps", type=int, default=500)
ap.add_argument("--out", default="out/demos")
args = ap.parse_args()

for name in args.names:
    def report(state, row):
        if row.step % 25 == 0:
            print(f"{name} step {row.step:4d} t={row.t:.4g} dt={row.dt:.3g} div={row.div_norm:.3g} "
                  f"cells={row.n_cells} rho=[{row.rho_min:.4g}, {row.rho_max:.4g}] "
                  f"mu=[{row.mu_min:.4g}, {row.mu_max:.4g}]", flush=True)

    res = run(load_scenario(name), out_dir=f"{args.out}/{name}", max_steps=args.steps, callback=report)
    print(f"{name}: status {res.status} {res.message}")
