"""Command-line entry points: run a sweep, fit a column, re-emit a report.

Exit codes: 0 all rules pass, 2 computed but some rule failed, 1 execution
error.  LAB_OUTPUT_ROOT overrides the root of relative output directories.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .lab import ConvergenceReport, SweepConfig, emit_report, fit_rate, run_sweep

OUTPUT_ROOT_ENV = "LAB_OUTPUT_ROOT"


def _resolve_output(path_str: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    p = Path(path_str)
    if root and not p.is_absolute():
        return str(Path(root) / p)
    return str(p)


def _cmd_run(args) -> int:
    config = SweepConfig.from_json(args.config)
    config.output_dir = _resolve_output(config.output_dir)
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)

    def progress(row):
        status = row.get("status", "?")
        extra = f" ({row.get('skip_reason')})" if status != "ok" else ""
        print(f"  eps={row['epsilon']:<8g} {status}{extra}", flush=True)

    print(f"running sweep: problem={config.problem} -> {config.output_dir}")
    report = run_sweep(config, progress=progress)
    files = emit_report(report)
    print(files["summary"].read_text())
    return 0 if report.passed() else 2


def _cmd_fit(args) -> int:
    pairs = []
    header = None
    with open(args.run_csv) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if header is None:
                header = parts
                if args.column not in header:
                    raise SystemExit(f"column {args.column!r} not in {args.run_csv}")
                ei = header.index("epsilon")
                ci = header.index(args.column)
                continue
            try:
                pairs.append((float(parts[ei]), float(parts[ci])))
            except (ValueError, IndexError):
                continue
    fit = fit_rate(pairs)
    print(json.dumps({"column": args.column, **fit}, indent=1))
    return 0 if np.isfinite(fit["slope"]) else 1


def _cmd_report(args) -> int:
    run_dir = Path(_resolve_output(args.run_dir))
    rows = []
    config = None
    for art in sorted(run_dir.glob("eps_*.json")):
        with open(art) as fh:
            stored = json.load(fh)
        rows.append(stored["row"])
    if not rows:
        raise SystemExit(f"no per-epsilon artifacts in {run_dir}")
    cfg_path = run_dir / "config.json"
    if cfg_path.exists():
        config = SweepConfig.from_json(cfg_path)
        config.output_dir = str(run_dir)
    else:
        # minimal reconstruction: rows alone are enough for rates
        problem = "homogenization" if rows[0].get("norm_ratio") else "synthetic"
        config = SweepConfig(
            problem=problem,
            epsilons=[r["epsilon"] for r in rows],
            output_dir=str(run_dir),
        )
    report = ConvergenceReport(config=config, rows=rows)
    from .lab import _fit_all, evaluate_rules

    _fit_all(report)
    report.rules = evaluate_rules(report)
    files = emit_report(report, out_dir=run_dir)
    print(files["summary"].read_text())
    return 0 if report.passed() else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lab", description="attractor convergence-rate laboratory"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a sweep from a JSON config")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)
    p_fit = sub.add_parser("fit", help="fit a log-log rate to a run.csv column")
    p_fit.add_argument("run_csv")
    p_fit.add_argument("--column", required=True)
    p_fit.set_defaults(func=_cmd_fit)
    p_rep = sub.add_parser("report", help="re-emit report files from a run directory")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(func=_cmd_report)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
