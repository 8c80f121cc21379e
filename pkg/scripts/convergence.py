"""Single-vortex level-set convergence for scenarios (i), (ii), (iii).

    python3 scripts/convergence.py [--rungs 4]
"""

import argparse

from levelflow.cli import load_scenario
from levelflow.runner import convergence_study, default_ladder

ap = argparse.ArgumentParser()
ap.add_argument("--rungs", type=int, default=4)
args = ap.parse_args()

ladder = default_ladder(32, 1e-2, args.rungs)
for name in ("convergence_i", "convergence_ii", "convergence_iii"):
    print(name)
    print(convergence_study(load_scenario(name), ladder).format(), flush=True)
