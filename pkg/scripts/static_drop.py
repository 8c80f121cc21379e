"""Static drop: pressure jump and spurious currents over time.

    python3 scripts/static_drop.py [--steps 100] [--h0 0.03125]
"""

import argparse
from dataclasses import replace

from levelflow.cli import load_scenario
from levelflow.runner import run

ap = argparse.ArgumentParser()
ap.add_argument("--steps", type=int, default=100)
ap.add_argument("--h0", type=float)
args = ap.parse_args()

cfg = load_scenario("static_drop")
if args.h0:
    cfg = replace(cfg, h0=args.h0)
sigma, radius, mu = cfg.physical.sigma, 0.25, cfg.physical.mu_minus


def report(state, row):
    if row.step % 10:
        return
    q = state.disc.quad_p
    phi = state.ls.phi.at_qp(q)
    p = state.disc.pressure_at_qp(state.ns.P_n.values)
    w = state.ls.phi.space.jxw(q)
    inside, outside = phi > 0.9 * state.ls.beta, phi < -0.9 * state.ls.beta
    jump = (p * w)[inside].sum() / w[inside].sum() - (p * w)[outside].sum() / w[outside].sum()
    print(f"step {row.step:4d} t={row.t:.4f} jump={jump:.4f} (sigma/R={sigma / radius:.4f}) "
          f"max|u|={state.ns.U_n.max_abs() * mu / sigma:.4g} sigma/mu", flush=True)


run(cfg, write_files=False, max_steps=args.steps, callback=report)
