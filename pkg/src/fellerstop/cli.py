"""Command-line entry point: ``fellerstop {solve,figure,crosscheck,validate}``.

Exit codes: 0 success, 1 crosscheck failure or internal error, 2 invalid
input, 3 solver warning (results are still written).
"""

from __future__ import annotations

import argparse
import json
import sys

from .core import FellerStopError, InvalidInput
from .experiments import (
    FIGURES,
    ExperimentConfig,
    build_generator,
    output_dir,
    run_crosscheck,
    run_solve,
)
from .generators import validate_generator

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
EXIT_WARNING = 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Monte Carlo seed (unsigned 64-bit)")
    common.add_argument("--grid-n", type=int, help="override the number of grid nodes")
    common.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")
    common.add_argument("--out", help="output directory (default: config 'outputs', then $FELLER_STOP_OUT)")

    p = argparse.ArgumentParser(prog="fellerstop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "solve a configured stopping problem"),
        ("crosscheck", "compare solver, closed form and Monte Carlo"),
        ("validate", "validate a config and its generator matrix"),
    ):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("config")
    f = sub.add_parser("figure", parents=[common], help="write figure data")
    f.add_argument("name", choices=sorted(FIGURES))
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    d = cfg.to_dict()
    if args.grid_n is not None:
        d["grid"]["n"] = args.grid_n
    if args.seed is not None:
        d["mc"]["rng_seed"] = args.seed
    return ExperimentConfig.from_dict(d)


def _say(args, obj) -> None:
    if not args.quiet:
        print(json.dumps(obj, sort_keys=True, indent=2))


def _run(args) -> int:
    if args.command == "figure":
        out = output_dir(args.out)
        summary = FIGURES[args.name](out, grid_n=args.grid_n)
        _say(args, summary)
        return EXIT_WARNING if any(summary["warnings"]) else EXIT_OK

    cfg = _load(args)
    if args.command == "validate":
        G = build_generator(cfg)
        report = validate_generator(G)
        _say(args, {"config": "ok", "generator": report.to_dict()})
        return EXIT_OK if report.ok else EXIT_INVALID

    out = output_dir(args.out, cfg)
    if args.command == "solve":
        res = run_solve(cfg, out)
        vf = res.value
        _say(args, {"files": [str(f) for f in res.files], "boundaries": [list(b) for b in vf.exercise_boundaries], "warning": vf.warning})
        if vf.warning:
            print(f"warning: {vf.warning}; best iterate written", file=sys.stderr)
            return EXIT_WARNING
        return EXIT_OK

    verdict = run_crosscheck(cfg, out)
    _say(args, {"pass": verdict["pass"], "checks": verdict["checks"]})
    return EXIT_OK if verdict["pass"] else EXIT_FAIL


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except InvalidInput as exc:
        where = f" (field: {exc.field})" if exc.field else ""
        print(f"error [{exc.code}]{where}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FellerStopError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
