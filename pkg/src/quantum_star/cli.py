"""Command line entry point: ``quantum-star {spectrum,verify,evolve,sweep}``."""

import argparse
import logging
import sys

from . import config as cfg, scenario
from .errors import SchemaError, StarGraphError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def build_parser():
    ap = argparse.ArgumentParser(prog="quantum-star", description=__doc__)
    ap.add_argument("command", choices=["spectrum", "verify", "evolve", "sweep"])
    ap.add_argument("--config", help="JSON run config or a previous run's manifest.json")
    ap.add_argument("--preset", choices=sorted(cfg.PRESETS), help="scenario preset")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for sweeps and verification")
    ap.add_argument("--strict-oracle", action="store_true",
                    help="fail on any analytic/quadrature mismatch instead of logging it")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load(args):
    if args.config:
        config = cfg.load_config(args.config)
        if args.preset and config.preset != args.preset:
            raise SchemaError(f"--preset {args.preset} conflicts with the config's preset {config.preset!r}")
        return config
    if args.preset:
        return cfg.preset_config(args.preset)
    raise SchemaError("give --config PATH or --preset NAME")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load(args)
        manifest = scenario.run(config, args.command, out_dir=args.out, threads=max(1, args.threads),
                                strict_oracle=args.strict_oracle)
    except SchemaError as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StarGraphError as exc:
        print(f"[{exc.module}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"[io] {exc}", file=sys.stderr)
        return EXIT_IO
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
