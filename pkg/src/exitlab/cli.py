"""Command line interface.

Subcommands: validate, predict, estimate, sweep (alias of estimate), flow,
diagnose.  Exit codes: 0 success, 1 config parse/validation failure,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import parse_config
from .errors import ExitlabError, ParseError, ValidationError
from .harness import (
    density_csv_text,
    emit_outputs,
    run_density_report,
    run_estimate,
    run_flow_report,
    run_predict,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exitlab",
        description="Exit-time tail predictions and Monte Carlo verification "
                    "for small-noise diffusions near a repelling equilibrium.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("validate", "parse the config and report problems"),
        ("predict", "emit theory-only rows (exponent, prefactor, bracket)"),
        ("estimate", "run the configured Monte Carlo sweep"),
        ("sweep", "alias of estimate"),
        ("flow", "deterministic exit times and travel-time bounds"),
        ("diagnose", "fluctuation density against the finite-time law"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to key=value config")
        p.add_argument("--out", default=None, help="directory for output files")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.seed")
        p.add_argument("--workers", type=int, default=None,
                       help="override run.workers")
    return parser


def _print_rows(record) -> None:
    for row in record.rows:
        bits = [f"eps={row.epsilon!r}", f"x={';'.join(repr(c) for c in row.x)}",
                f"beta={row.beta!r}", f"psi={row.psi!r}",
                f"phi=[{row.phi_minus!r}, {row.phi_plus!r}]"]
        if row.p_hat is not None:
            bits += [f"p_hat={row.p_hat!r}", f"stderr={row.stderr!r}",
                     f"rescaled={row.rescaled!r}"]
        print("  ".join(bits))
    for pi, fit in enumerate(record.slope_fits):
        if fit is None:
            print(f"point {pi}: slope fit degenerate (needs >= 3 positive estimates)")
        else:
            print(f"point {pi}: slope={fit.slope!r} +- {fit.slope_stderr!r} "
                  f"intercept={fit.intercept!r}")
    for warning in record.warnings:
        print(f"warning: {warning}", file=sys.stderr)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text)
        if args.seed is not None or args.workers is not None:
            cfg = cfg.with_overrides(seed=args.seed, workers=args.workers)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "validate":
            print(f"config ok: d={cfg.model.spectrum.d} "
                  f"variant={cfg.model.variant} method={cfg.method} "
                  f"epsilons={len(cfg.epsilons)} points={len(cfg.points)}")
            for warning in cfg.warnings:
                print(f"warning: {warning}", file=sys.stderr)
            return 0
        if args.command == "predict":
            record = run_predict(cfg)
            _print_rows(record)
        elif args.command in ("estimate", "sweep"):
            record = run_estimate(cfg)
            _print_rows(record)
        elif args.command == "flow":
            report = run_flow_report(cfg)
            print(json.dumps(report, indent=2, sort_keys=True))
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "flow.json").write_text(
                    json.dumps(report, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
            return 0
        else:  # diagnose
            diag = run_density_report(cfg)
            print(f"sup_diff={diag.sup_diff!r} l1_diff={diag.l1_diff!r} "
                  f"mass={diag.mass!r}")
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "density.csv").write_text(density_csv_text(diag),
                                                 encoding="utf-8")
            return 0
        if args.out:
            paths = emit_outputs(record, args.out)
            for kind, path in sorted(paths.items()):
                print(f"wrote {kind}: {path}")
        return 0
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ExitlabError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        partial = getattr(exc, "partial_record", None)
        if partial is not None and args.out:
            paths = emit_outputs(partial, args.out)
            for kind, path in sorted(paths.items()):
                print(f"wrote partial {kind}: {path}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last resort
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
