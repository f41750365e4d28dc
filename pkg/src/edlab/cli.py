"""Command-line front end: ``edlab run|list|validate``."""

import argparse
import logging
import sys

from . import scenarios

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3


def _resolve(path):
    if path.startswith("builtin:"):
        return scenarios.builtin_config_path(path.split(":", 1)[1])
    return path


def _load(path):
    try:
        return scenarios.load_config(_resolve(path))
    except OSError as err:
        raise scenarios.ConfigError("<file>", str(err)) from None


def cmd_list(args):
    sys.stdout.write(scenarios.catalog())
    return EXIT_OK


def cmd_validate(args):
    try:
        cfg, _ = _load(args.config)
    except scenarios.ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {cfg.scenario}")
    return EXIT_OK


def cmd_run(args):
    try:
        cfg, params = _load(args.config)
        if args.label:
            cfg = cfg.model_copy(update={"label": args.label})
        if args.seed is not None:
            cfg = scenarios.ScenarioConfig.model_validate({**cfg.model_dump(), "seed": args.seed})
    except scenarios.ValidationError as err:
        print(f"invalid config: {err.errors()[0]['msg']} (seed)", file=sys.stderr)
        return EXIT_INVALID
    except scenarios.ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_INVALID
    try:
        summary, out = scenarios.run(cfg, params, base=args.output_dir)
    except scenarios.ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # module errors surface with their type and context
        print(f"{cfg.scenario} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary)
    print(f"artifacts: {out}", file=sys.stderr)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="edlab", description="Entropic dynamics scenario runner")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario config")
    p.add_argument("config", help="YAML config path or builtin:<kind>")
    p.add_argument("-o", "--output-dir", help=f"artifact root (default: ${scenarios.OUTPUT_ENV} or ./{scenarios.DEFAULT_OUTPUT})")
    p.add_argument("--label", help="fixed run label instead of a timestamp")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("list", help="print the scenario catalog")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
