"""Command line: ``stochflow run|list|plot``."""
from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, ViewError
from .runner import VIEWS, configs_from, emit_plot_data, list_experiments, run_many


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochflow", description="run and inspect verification experiments")
    sub = ap.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="run one experiment id or 'all'")
    run.add_argument("target", help="experiment id, or 'all'")
    run.add_argument("--config", help="flat TOML config or a previous run manifest")
    run.add_argument("--seed", type=int, help="override the seed of every experiment")
    run.add_argument("--out", default=None, help="output directory (default: results)")
    run.add_argument("--workers", type=int, default=None, help="worker processes (default: $STOCHFLOW_WORKERS or 1)")
    ls = sub.add_parser("list", help="list registered experiments")
    ls.add_argument("--module", help="only this module's experiments")
    plot = sub.add_parser("plot", help="emit tidy CSV for a view")
    plot.add_argument("view", choices=sorted(VIEWS))
    plot.add_argument("--from", dest="sources", nargs="+", required=True, help="run directories or manifests")
    plot.add_argument("--out", help="write the CSV here instead of stdout")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "list":
            for e in list_experiments(args.module):
                print(f"{e['id']:32s} {e['module']:18s} {e['description']}  [{e['anchor']}]")
            return 0
        if args.verb == "plot":
            text = emit_plot_data(args.sources, args.view, args.out)
            if args.out is None:
                sys.stdout.write(text)
            return 0
        ids = None if args.target == "all" else [args.target]
        cfgs = configs_from(args.config, ids, args.seed)
        manifest = run_many(cfgs, args.out or (cfgs[0].out if args.config else "results"),
                            workers=args.workers)
        for e in manifest.experiments:
            extra = f"  ({e['error']})" if "error" in e else ""
            print(f"{e['verdict']:13s} {e['id']}  {e['seconds']:.1f}s{extra}")
        return 0 if manifest.passed else 1
    except (ConfigError, ViewError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
