"""Run every registered experiment (or one module) and print the manifest verdicts.

    python3 scripts/run_registry.py --module estimator_suite --out results/suite --workers 2
"""
import argparse
import sys

from stochflow.harness import ExperimentConfig, list_experiments, run_many


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--module", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    cfgs = [ExperimentConfig(e["id"], args.seed, args.out) for e in list_experiments(args.module)]
    manifest = run_many(cfgs, workers=args.workers)
    for e in manifest.experiments:
        print(f"{e['verdict']:13s} {e['id']:32s} {e['seconds']:7.1f}s")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
