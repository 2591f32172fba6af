"""Command line entry point.

Exit codes: 0 success (or quiescent run), 1 run hit its horizon with work
left, 2 validation/usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

from . import expr
from .errors import ConfigError
from .model import parse_config, render_config
from .poolsim import parse_scenario, run_scenario

EXIT_OK, EXIT_INCOMPLETE, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _read(path: str) -> str | None:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        _err(f"{path}: cannot read: {e}")
        return None


def _diag(path: str, e: ConfigError) -> str:
    return f"{path}:{e.line}: {e.message}" if e.line else f"{path}: {e.message}"


def cmd_validate_config(args) -> int:
    text = _read(args.path)
    if text is None:
        return EXIT_IO
    try:
        config = parse_config(text)
    except ConfigError as e:
        _err(_diag(args.path, e))
        return EXIT_INVALID
    sys.stdout.write(render_config(config))
    return EXIT_OK


def cmd_eval_expr(args) -> int:
    try:
        node = expr.parse(args.expression)
    except expr.ExprSyntaxError as e:
        _err(f"syntax error: {e}")
        return EXIT_INVALID
    attrs = []
    for item in args.attr:
        name, sep, value = item.partition("=")
        name = name.strip()
        if not sep or not expr.ATTR_NAME_RE.match(name):
            _err(f"bad --attr {item!r}, expected NAME=VALUE")
            return EXIT_INVALID
        attrs.append((name, expr.parse_value(value)))
    print(expr.describe_value(expr.eval_expr(node, expr.AttrBag(attrs))))
    return EXIT_OK


def _write_atomically(outdir: Path, files: dict[str, str]) -> None:
    """Write every file to a temp name first, then rename them all; on
    failure nothing from this run is left under the final names."""
    outdir.mkdir(parents=True, exist_ok=True)
    temps = {}
    placed = []
    try:
        for name, content in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=outdir)
            temps[name] = tmp
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(content)
        for name, tmp in temps.items():
            os.replace(tmp, outdir / name)
            placed.append(outdir / name)
    except BaseException:
        for path in [*temps.values(), *placed]:
            if os.path.exists(path):
                os.unlink(path)
        raise


def cmd_run(args) -> int:
    config_text = _read(args.config)
    scenario_text = _read(args.scenario)
    if config_text is None or scenario_text is None:
        return EXIT_IO
    try:
        config = parse_config(config_text)
    except ConfigError as e:
        _err(_diag(args.config, e))
        return EXIT_INVALID
    try:
        scenario = parse_scenario(scenario_text)
        result = run_scenario(
            scenario,
            config,
            backend_override=args.backend_override,
            seed_override=args.seed_override,
            until=args.until,
        )
    except ConfigError as e:
        _err(_diag(args.scenario, e))
        return EXIT_INVALID
    try:
        _write_atomically(
            Path(args.out),
            {
                "metrics.csv": result.metrics_csv(),
                "audit.jsonl": result.audit_jsonl(),
                "trace.jsonl": result.trace_jsonl(),
            },
        )
    except OSError as e:
        _err(f"{args.out}: cannot write outputs: {e}")
        return EXIT_IO
    print(result.summary())
    return EXIT_OK if result.quiescent else EXIT_INCOMPLETE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilotprov", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-config", help="check a provisioner config and print it normalized")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_config)

    p = sub.add_parser("eval-expr", help="evaluate a requirement expression")
    p.add_argument("expression")
    p.add_argument("-a", "--attr", action="append", default=[], metavar="NAME=VALUE")
    p.set_defaults(func=cmd_eval_expr)

    p = sub.add_parser("run", help="simulate a scenario end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--until", type=int, help="stop at this virtual time instead of the scenario horizon")
    p.add_argument("--seed-override", type=int)
    p.add_argument("--backend-override", choices=("simkube", "simlancium"))
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
