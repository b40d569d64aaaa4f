#!/usr/bin/env python3
"""
p-spin hardness lab
Command-line entry point for the experiments
"""

import sys
import logging
import argparse

import pandas as pd

from config import EXPERIMENTS, LOG_LEVEL, PRESETS
from harness.experiment_config import ALGORITHMS, FOLLOW_MODES, ConfigError, load_config
from harness.experiments import run_experiment

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_ACCEPTANCE_FAILED = 3


def print_table(data, title="Data"):
    """Print data in a formatted table"""
    print(f"\n📊 {title}")
    print("=" * (len(title) + 3))

    if isinstance(data, pd.DataFrame) and not data.empty:
        print(data.to_string(index=False))
    elif isinstance(data, list) and data:
        print(pd.DataFrame(data).to_string(index=False))
    elif isinstance(data, dict):
        for key, value in data.items():
            print(f"{key}: {value}")
    else:
        print("No data to display")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Numerical experiments on pure spherical p-spin glasses")
    parser.add_argument("command", choices=EXPERIMENTS, help="Experiment to run")

    parser.add_argument("--config", type=str, help="Key-value config file")
    parser.add_argument("--preset", type=str, choices=list(PRESETS), help="Named parameter preset")
    parser.add_argument("--seed", type=int, help="Base seed; replica seeds derive from it")
    parser.add_argument("--jobs", type=int, help="Replica worker pool size")
    parser.add_argument("--out", type=str, help="Output directory")

    parser.add_argument("--N", type=int, help="Dimension")
    parser.add_argument("--p", type=int, help="Interaction order")
    parser.add_argument("--K", type=int, help="Chain length")
    parser.add_argument("--epsilon", type=float, help="Chain step")
    parser.add_argument("--replicas", type=int, help="Number of replicas")
    parser.add_argument("--mode", type=str, choices=FOLLOW_MODES, help="Mode for the follow command")
    parser.add_argument("--algorithm", type=str, choices=ALGORITHMS, help="Optimizer for spectrum/optimize")
    parser.add_argument("--check", action="store_true",
                        help="Exit with code 3 when the acceptance check fails")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else LOG_LEVEL,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    overrides = {
        "experiment": args.command, "preset": args.preset, "seed": args.seed, "jobs": args.jobs,
        "out": args.out, "N": args.N, "p": args.p, "K": args.K, "epsilon": args.epsilon,
        "replicas": args.replicas, "mode": args.mode, "algorithm": args.algorithm,
    }

    print("🔧 Loading experiment config...")
    try:
        config = load_config(args.config, overrides=overrides)
    except ConfigError as e:
        print(f"❌ Invalid config: {e}")
        return EXIT_CONFIG_ERROR

    try:
        result = run_experiment(config)
    except Exception as e:
        print(f"❌ Command failed: {e}")
        import traceback
        traceback.print_exc()
        return EXIT_FAILED

    print_table(result.table, f"{result.name} results")
    print_table(result.summary, f"{result.name} summary")

    if result.acceptance is False:
        print("⚠️ Acceptance check failed")
        if args.check:
            return EXIT_ACCEPTANCE_FAILED
    elif result.acceptance:
        print("✅ Acceptance check passed")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
