"""``simulate`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import KINDS, ConfigError, parse_config
from .runner import EXIT_IO, EXIT_OK, EXIT_VALIDATION, run

WORKERS_ENV = "TODACHAIN_WORKERS"
log = logging.getLogger("todachain")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simulate", description=__doc__)
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--out", help="output directory (overrides [experiment] out)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--workers", type=int,
                    help=f"worker processes (overrides ${WORKERS_ENV} and the config)")
    return ap


def resolve_workers(flag: int | None, configured: int) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return configured


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as e:
        log.error("cannot read config: %s", e)
        return EXIT_IO
    try:
        cfg = parse_config(text, args.kind)
        cfg = cfg.with_overrides(seed=args.seed,
                                 workers=resolve_workers(args.workers, cfg.workers))
    except ConfigError as e:
        log.error("%s: %s", args.config, e)
        return EXIT_VALIDATION
    outcome = run(cfg, args.out)
    if outcome.exit_code != EXIT_OK:
        log.error("%s", outcome.error)
    else:
        log.info("wrote %d files and %s", len(outcome.files), outcome.manifest)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
