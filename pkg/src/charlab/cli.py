"""Command line entry point: ``charlab run|validate|list-cases``."""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .errors import CharlabError, ExpressionSyntaxError, ScenarioParseError, UnknownFunction, ValidationError
from .runner import EXIT_OK, EXIT_RUNTIME, EXIT_SPEC, run
from .scenario import load_spec, loads

SPEC_ERRORS = (ScenarioParseError, ValidationError, ExpressionSyntaxError, UnknownFunction)


def bundled_cases() -> list:
    folder = resources.files("charlab") / "cases"
    return sorted(p.name[: -len(".case")] for p in folder.iterdir() if p.name.endswith(".case"))


def _load(name):
    """A path on disk, or the name of a bundled case (with or without .case)."""
    path = Path(name)
    if path.is_file():
        return load_spec(path)
    stem = name[: -len(".case")] if name.endswith(".case") else name
    if "/" not in name and stem in bundled_cases():
        text = (resources.files("charlab") / "cases" / f"{stem}.case").read_text(encoding="utf-8")
        return loads(text, f"{stem}.case")
    raise FileNotFoundError(f"no scenario file or bundled case named {name!r}")


def _spec_error(err) -> int:
    print(f"spec error: {err}", file=sys.stderr)
    return EXIT_SPEC


def cmd_run(args) -> int:
    try:
        spec = _load(args.spec).override(dt=args.dt, t_end=args.t_end)
    except (OSError, *SPEC_ERRORS) as err:
        return _spec_error(err)
    try:
        report = run(spec)
    except (CharlabError, ArithmeticError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    out = args.out or spec.get("output", "dir") or str(Path("charlab_out") / Path(spec.source).stem)
    report.write(out)
    if not args.quiet:
        sys.stdout.write(report.text())
    return report.exit_code


def cmd_validate(args) -> int:
    try:
        spec = _load(args.spec)
    except (OSError, *SPEC_ERRORS) as err:
        return _spec_error(err)
    print(f"ok: {spec.title} ({spec.kind}, dim {spec.dim})")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled_cases():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="charlab", description="Characteristics, Hamiltonian flows and closure diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write CSVs plus report.txt")
    p.add_argument("spec", help="scenario file or bundled case name")
    p.add_argument("--out", help="output directory (default: the file's [output] dir, else charlab_out/<name>)")
    p.add_argument("--dt", type=float, help="override the step size")
    p.add_argument("--t-end", type=float, dest="t_end", help="override t_end (length for general PDEs)")
    p.add_argument("--quiet", action="store_true", help="do not echo the report")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="parse and validate a scenario without running it")
    p.add_argument("spec")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("list-cases", help="list bundled scenario files")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
