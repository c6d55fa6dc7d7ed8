"""Command line interface: ``run``, ``verify`` and ``presets``.

Exit codes: 0 success, 1 invalid configuration, 2 numerical abort,
3 failed verification.
"""

import argparse
import logging
import sys

from .errors import ConfigurationError, SurfChnsError
from .geometry import PRESET_KINDS, GeometryPreset

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_VERIFY = 0, 1, 2, 3


def _build_parser():
    p = argparse.ArgumentParser(prog="surfchns", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation from a TOML configuration")
    r.add_argument("--config", required=True, help="configuration file")
    r.add_argument("--out", required=True, help="output directory")

    v = sub.add_parser("verify", help="run verification oracles")
    from .oracles import SUITES
    v.add_argument("--suite", choices=SUITES, default="all")

    sub.add_parser("presets", help="list geometry presets and their parameters")
    return p


def _cmd_run(args):
    from .fileio import parse_config, run_to_directory

    try:
        config = parse_config(args.config)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        traj, manifest = run_to_directory(config, args.out)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SurfChnsError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    if traj.abort is not None:
        a = traj.abort
        print(f"aborted at step {a['step']} (t = {a['t']:.6g}): {a['error']}: {a['message']}", file=sys.stderr)
        return EXIT_ABORT
    last = traj.rows[-1]
    print(f"completed {config.n_steps} steps to t = {last.t:.6g}; outputs in {args.out}")
    return EXIT_OK


def _cmd_verify(args):
    from .oracles import run_suite

    ok = True
    for report in run_suite(args.suite):
        print(report.summary())
        ok = ok and report.passed
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_presets(_args):
    for kind in PRESET_KINDS:
        kw = {"normal_field": "0"} if kind == "custom_normal_field" else {}
        print(GeometryPreset(kind, **kw).describe())
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "verify": _cmd_verify, "presets": _cmd_presets}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
