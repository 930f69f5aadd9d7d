"""Command line: ``starris run`` and ``starris trace``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .experiments import ConfigError, ExperimentConfig, emit_results, run_sweep, summarize, trace, write_trace


def _seed_range(text: str):
    """``a..b`` (inclusive) or a comma list."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; expected a..b or a,b,c") from None


def _parser():
    p = argparse.ArgumentParser(prog="starris", description="STAR-RIS max-min energy efficiency simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo sweep")
    run.add_argument("--config", required=True, help="experiment JSON")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--threads", type=int, default=1, help="worker processes")
    run.add_argument("--seeds", type=_seed_range, help="override seeds, e.g. 0..19")

    tr = sub.add_parser("trace", help="per-iteration objective trace of one trial")
    tr.add_argument("--config", required=True)
    tr.add_argument("--seed", type=int, required=True)
    tr.add_argument("--sweep-value", type=float, help="sweep point (default: first)")
    tr.add_argument("--out", help="directory for trace.csv (default: stdout)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.command == "run":
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            if args.seeds is not None:
                cfg = cfg.with_seeds(args.seeds)
            rows = run_sweep(cfg, threads=args.threads)
            csv_path, _ = emit_results(rows, args.out)
            print(json.dumps(summarize(rows)["points"]))
            print(f"wrote {csv_path}", file=sys.stderr)
        else:
            records = trace(cfg, args.seed, args.sweep_value)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                with open(os.path.join(args.out, "trace.csv"), "w", newline="") as fh:
                    write_trace(records, fh)
            else:
                write_trace(records, sys.stdout)
    except (ConfigError, OSError, json.JSONDecodeError) as err:
        print(f"starris: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
