"""Command-line entry point: ``rsalab <experiment> [flags]``."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

import jsonschema

from rsalab.config import KINDS, ConfigError, ExperimentConfig
from rsalab.packing import ConeCapError
from rsalab.schemas import validate_config_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsalab",
                                     description="Random sequential adsorption laboratory")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", metavar="PATH", help="YAML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="worker processes (default $RSALAB_WORKERS or 1)")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--dim", type=int)
        p.add_argument("--tau", type=float)
        p.add_argument("--lambda", dest="lambdas", type=float, action="append",
                       metavar="L", help="repeat for a grid")
        p.add_argument("--replicates", type=int)
        p.add_argument("--mode", choices=["infinite", "finite"])
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        import yaml
        try:
            with open(args.config) as fh:
                data = yaml.safe_load(fh)
        except OSError:
            raise
        except yaml.YAMLError as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        if data.get("kind", args.kind) != args.kind:
            raise ConfigError(f"config is for {data['kind']!r}, not {args.kind!r}")
    else:
        data = {}
    data["kind"] = args.kind
    for flag, key in (("seed", "seed"), ("out", "out"), ("dim", "dimension"), ("tau", "tau"),
                      ("lambdas", "lambdas"), ("replicates", "replicates"), ("mode", "mode")):
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    try:
        validate_config_dict(data)
    except jsonschema.ValidationError as exc:
        raise ConfigError(exc.message) from exc
    return ExperimentConfig.from_dict(data)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    from rsalab import runner

    try:
        cfg = config_from_args(args)
        manifest = runner.run(cfg, workers=args.workers, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConeCapError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {', '.join(sorted(manifest['files']))} and manifest.json to {args.out or cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
