"""Command-line interface.

Subcommands:
  render    scene config in, PNG out (deterministic; timings on stderr)
  validate  schema/cross-reference check, machine-readable findings
  gen-field write an analytic test field as an SFG file
  serve     start the HTTP render service

Exit codes: 0 ok, 2 config error, 3 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import field as field_mod
from .scene import ConfigError, PipelineError, run_scene, validate_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3


def _parse_dims(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("dims must be x,y,z")
    return tuple(int(p) for p in parts)


def _parse_param(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError("params look like name=value")
    k, v = text.split("=", 1)
    return k, float(v)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamstyle",
                                 description="Illustrative streamline rendering")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render a scene config to PNG")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=0,
                   help="raster worker count (0 = auto); output is identical "
                        "for any value")
    r.add_argument("--output", default=None, help="override the config output path")
    r.add_argument("--phase", type=float, default=None,
                   help="override every pattern phase (animation frames)")
    r.add_argument("--cache-lines", default=None,
                   help="SLS cache path: load traced lines from it, or trace "
                        "once and reuse")

    v = sub.add_parser("validate", help="validate a scene config")
    v.add_argument("config")

    g = sub.add_parser("gen-field", help="write an analytic field as SFG")
    g.add_argument("kind", choices=field_mod.ANALYTIC_KINDS)
    g.add_argument("output")
    g.add_argument("--dims", type=_parse_dims, default=(32, 32, 32))
    g.add_argument("--param", type=_parse_param, action="append", default=[])

    s = sub.add_parser("serve", help="start the HTTP render service")
    s.add_argument("--addr", default=os.environ.get("SS_ADDR", "127.0.0.1"))
    s.add_argument("--port", type=int,
                   default=int(os.environ.get("SS_PORT", "8077")))
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)

    if args.command == "render":
        try:
            out, _stats = run_scene(
                args.config, threads=args.threads,
                output_override=args.output, phase_override=args.phase,
                cache_lines=args.cache_lines)
        except ConfigError as exc:
            _print_report(exc.report)
            return EXIT_CONFIG
        except PipelineError as exc:
            print(f"pipeline error: {exc}", file=sys.stderr)
            return EXIT_PIPELINE
        print(out)
        return EXIT_OK

    if args.command == "validate":
        report = validate_config(args.config)
        _print_report(report)
        return EXIT_OK if report.ok else EXIT_CONFIG

    if args.command == "gen-field":
        try:
            grid = field_mod.gen_analytic_field(args.kind, args.dims,
                                                dict(args.param))
            field_mod.save_grid(grid, args.output)
        except field_mod.FieldError as exc:
            print(f"gen-field error: {exc}", file=sys.stderr)
            return EXIT_PIPELINE
        print(args.output)
        return EXIT_OK

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.addr, port=args.port,
                    log_level="warning")
        return EXIT_OK
    return EXIT_CONFIG


def _print_report(report) -> None:
    print(json.dumps(report.as_dict(), indent=2))


if __name__ == "__main__":
    sys.exit(main())
