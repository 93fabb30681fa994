"""Command line entry point: ``spde-lab run <config.toml> [--seed] [--out] [--replicas]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError
from .experiments import EXIT_CONFIG, library_version, load_config, run

log = logging.getLogger("spde_lab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spde-lab",
                                     description="Parabolic SPDE numerics laboratory.")
    parser.add_argument("--version", action="version", version=library_version())
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment described by a TOML config")
    r.add_argument("config", help="path to the experiment configuration")
    r.add_argument("--seed", type=int, help="override the seed base")
    r.add_argument("--out", help="override the output directory")
    r.add_argument("--replicas", type=int, help="override the replica count")
    r.add_argument("--workers", type=int, help="worker processes for replicas")
    r.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, replicas=args.replicas,
                          workers=args.workers)
    except ConfigError as exc:
        print(f"spde-lab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("running %s (config %s)", cfg.kind, cfg.config_hash()[:12])
    result = run(cfg)
    if result.status:
        print(f"spde-lab: {result.summary.get('error')}: {result.summary.get('message')}",
              file=sys.stderr)
    print(json.dumps({"status": result.status, "manifest": str(result.manifest)}))
    return result.status


if __name__ == "__main__":
    sys.exit(main())
