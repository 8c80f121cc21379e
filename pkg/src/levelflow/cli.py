"""Command line entry point.

    levelflow run <scenario> [--out DIR] [--t-final X] [--dt-max X] [--every N]
    levelflow study <scenario> --ladder N
    levelflow list-scenarios

``<scenario>`` is a path or the name of a built-in scenario.  Exit status
is 0 on success, 2 for configuration errors and 3 for solver failures.
``LEVELFLOW_OUT`` sets the default output directory and
``LEVELFLOW_THREADS`` caps the BLAS/OpenMP thread count.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .config import ConfigError, ScenarioConfig, parse_scenario

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def builtin_scenarios() -> list[str]:
    root = resources.files("levelflow") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_scenario(ref: str) -> ScenarioConfig:
    """Parse a scenario file, falling back to the built-in of that name."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    elif ref in builtin_scenarios():
        text = (resources.files("levelflow") / "scenarios" / f"{ref}.cfg").read_text(encoding="utf-8")
    else:
        raise ConfigError(f"no scenario file or built-in scenario named {ref!r}")
    return parse_scenario(text)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="levelflow", description="Two-phase level-set flow solver")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write CSV/VTK output")
    r.add_argument("scenario")
    r.add_argument("--out", help="output directory")
    r.add_argument("--t-final", type=float)
    r.add_argument("--dt-max", type=float)
    r.add_argument("--every", type=int, help="VTK snapshot interval in steps (0 disables)")
    r.add_argument("--max-steps", type=int)
    s = sub.add_parser("study", help="level-set convergence study on a paired dt/h ladder")
    s.add_argument("scenario")
    s.add_argument("--ladder", type=int, required=True, help="number of rungs")
    sub.add_parser("list-scenarios", help="print the built-in scenario names")
    return ap


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    kw = {}
    if args.t_final is not None:
        kw["t_final"] = args.t_final
    if args.dt_max is not None:
        kw["dt_max"] = args.dt_max
    if args.every is not None:
        kw["output_every"] = args.every
    return replace(cfg, **kw).validate() if kw else cfg


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("LEVELFLOW_OUT")
    return Path(env) if env else Path(cfg.output_dir)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    threads = os.environ.get("LEVELFLOW_THREADS")
    if threads:
        # must happen before numpy is first imported
        for var in _THREAD_VARS:
            os.environ[var] = threads

    if args.command == "list-scenarios":
        print("\n".join(builtin_scenarios()))
        return EXIT_OK

    from .fem import SolverError
    from .runner import convergence_study, run

    try:
        cfg = load_scenario(args.scenario)
        if args.command == "run":
            cfg = _apply_overrides(cfg, args)
            out = _out_dir(args, cfg)
            res = run(cfg, out_dir=out, max_steps=args.max_steps)
            if res.status != EXIT_OK:
                print(res.message, file=sys.stderr)
                return res.status
            last = res.rows[-1]
            print(f"{cfg.name}: {last.step} steps to t={last.t:.6g}, csv {res.csv_path}")
            return EXIT_OK
        if args.ladder < 2:
            raise ConfigError("--ladder needs at least 2 rungs")
        ladder = [(cfg.dt_fixed or cfg.dt_max, cfg.h0)]
        if not ladder[0][0] < float("inf"):
            raise ConfigError("the study needs time.dt or time.dt_max in the scenario")
        for _ in range(args.ladder - 1):
            dt, h = ladder[-1]
            ladder.append((dt / 2, h / 2))
        table = convergence_study(cfg, ladder)
        print(table.format())
        return EXIT_OK
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
