"""``dilute-cw <experiment> --config <path> [--out <dir>] [--seed <u64>] [--threads <k>]``.

Exit status: 0 when every declared check passes, 1 on a check failure, 2 on a
configuration error (including theorem-mode and cap violations).
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import EXPERIMENTS, ConfigError, load_config, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dilute-cw", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", help="output directory (default: config 'out' or runs/<experiment>)")
    ap.add_argument("--seed", type=int, help="master seed override (decimal, 64-bit)")
    ap.add_argument("--threads", type=int, help="worker threads for the replica pool")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, threads=args.threads, out=args.out)
        if cfg.experiment != args.experiment:
            raise ConfigError(f"config is for {cfg.experiment!r} but {args.experiment!r} was requested")
        status, result = run(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for c in result.checks:
        mark = "PASS" if c.passed else "FAIL"
        if c.relation == "holds":
            print(f"{mark} {c.name}")
        else:
            print(f"{mark} {c.name}: {c.value:.6g} {c.relation} {c.threshold:.6g}")
    print(json.dumps({"experiment": cfg.experiment, "passed": result.passed}))
    return status


if __name__ == "__main__":
    sys.exit(main())
