"""Command-line entry point: run, validate, compare, synth.

Exit codes: 0 success, 2 configuration or input error, 3 a pipeline stage
failed (partial reports are still written).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from .composer import compare_csv, compare_runs, default_jobs, emit_report, load_report, run_pipeline
from .config import load_config
from .data import synth_biased, synth_to_frame
from .errors import ConfigError, DataError, FairComposeError, ParameterError, SchemaError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

log = logging.getLogger("faircompose")


def _fail(message: str, code: int = EXIT_CONFIG) -> int:
    print(f"faircompose: error: {message}", file=sys.stderr)
    return code


def _env_seed():
    value = os.environ.get("FAIRCOMPOSE_SEED")
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"FAIRCOMPOSE_SEED must be an integer, got {value!r}") from None


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, seed_override=_env_seed())
        jobs = args.jobs if args.jobs is not None else default_jobs()
        if jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        result = run_pipeline(cfg, jobs=jobs)
    except (ConfigError, SchemaError, DataError, ParameterError) as exc:
        return _fail(str(exc))
    if not result.reports:
        # nothing survived, not even a baseline
        for err in result.errors:
            print(f"faircompose: {err['model']} failed at {err['stage']}: {err['message']}", file=sys.stderr)
        return EXIT_STAGE
    emit_report(result, args.out, args.format)
    if result.errors:
        for err in result.errors:
            print(f"faircompose: {err['model']} aborted at {err['stage']}: {err['message']}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config, seed_override=_env_seed())
    except ConfigError as exc:
        return _fail(str(exc))
    sys.stdout.write(yaml.safe_dump(cfg.echo(), sort_keys=False, default_flow_style=False))
    return EXIT_OK


def cmd_compare(args) -> int:
    for d in (args.a, args.b):
        if not Path(d).is_dir():
            return _fail(f"report directory not found: {d}")
    try:
        rows = compare_runs(load_report(args.a), load_report(args.b))
    except (ConfigError, KeyError) as exc:
        return _fail(f"cannot compare reports: {exc}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(compare_csv(rows), encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        ds = synth_biased(args.n, args.d, args.gap, args.noise, args.seed)
    except ParameterError as exc:
        return _fail(str(exc))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    synth_to_frame(ds).to_csv(out, index=False, float_format="%.17g", lineterminator="\n")
    stanza = {
        "dataset": {
            "path": str(out),
            "schema": {"label": "label", "favorable": 1, "protected": "group", "privileged": 1, "categorical": []},
        }
    }
    sys.stdout.write(yaml.safe_dump(stanza, sort_keys=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faircompose", description="Compose fairness interventions and report per stage.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a pipeline config and write reports")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--format", choices=("json", "csv", "both"), default="both")
    run.add_argument("--jobs", type=int, default=None, help="concurrent model runs (default: available CPUs)")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="parse and check a config, print it normalized")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)

    cmp_ = sub.add_parser("compare", help="metric deltas (B - A) between two report directories")
    cmp_.add_argument("--a", required=True)
    cmp_.add_argument("--b", required=True)
    cmp_.add_argument("--out", required=True)
    cmp_.set_defaults(func=cmd_compare)

    syn = sub.add_parser("synth", help="write a synthetic biased dataset as CSV")
    syn.add_argument("--n", type=int, default=5000)
    syn.add_argument("--d", type=int, default=5)
    syn.add_argument("--gap", type=float, default=-0.3)
    syn.add_argument("--noise", type=float, default=0.5)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", required=True)
    syn.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except FairComposeError as exc:
        return _fail(str(exc), EXIT_STAGE)


if __name__ == "__main__":
    sys.exit(main())
