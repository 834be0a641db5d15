"""Command line entry point: ``distlab <kind> --config path.json [--seeds 0..9] [--out dir]``."""

from __future__ import annotations

import argparse
import json
import sys

from ..errors import AlgorithmFailure
from .config import KINDS, ConfigError, ExperimentConfig, parse_seeds
from .runner import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_ALGORITHM, EXIT_IO = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distlab", description="Run seeded distributional bandit / RL experiments.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="path to the experiment JSON")
    ap.add_argument("--seeds", help='seed range "0..9" or list "1,2,3" (overrides the config)')
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as e:
        print(f"error: cannot read config {args.config}: {e.strerror}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as e:
        print(f"error: {args.config} is not valid JSON: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = dict(raw)
        if raw.get("kind", args.kind) != args.kind:
            raise ConfigError(f"config kind {raw['kind']!r} does not match the command {args.kind!r}")
        raw["kind"] = args.kind
        if args.seeds:
            raw["seeds"] = parse_seeds(args.seeds)
        if args.out:
            raw["out"] = args.out
        cfg = ExperimentConfig.from_dict(raw)
        summary = run_experiment(cfg, workers=args.workers)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AlgorithmFailure as e:
        print(f"algorithm failure: {e}", file=sys.stderr)
        return EXIT_ALGORITHM
    except OSError as e:
        print(f"I/O error: {e.filename}: {e.strerror}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for row in summary.aggregate:
        print(f"{row['metric']}: {row['mean']:.6g} (sem {row['sem']:.3g}, n={row['n']})")
    if summary.failed:
        for r in summary.results:
            if r.failure:
                print(f"seed {r.seed}: {r.failure}", file=sys.stderr)
        return EXIT_ALGORITHM
    print(f"wrote results to {summary.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
