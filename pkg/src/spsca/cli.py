"""Command-line entry point (``spsca``).

Every subcommand prints a one-line JSON status object on stdout and exits 0.
Failures print ``{"error": ..., "message": ...}`` on stderr and exit 1
(argument errors exit 2).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .cpa import attack
from .design import (DesignSpec, StateRegisterConfig, StrengthPolicy, area,
                     generate_baseline, generate_design)
from .leakage import default_table, read_table
from .sampling import SamplingPlan, estimate_nttd
from .simulate import SimOptions, generate_traces
from .traceio import export_csv, read_traces, write_traces

_EXPERIMENT_FLAGS = {
    "datasets": int, "pool_size": int, "coarse_trials": int, "thorough_trials": int,
    "success_threshold": float, "coarse_steps": int, "coarse_min": int,
    "refine_points": int, "spacing": str, "clk_level": int, "noise_sigma": float,
    "background_offset": float, "key": str, "seed": int, "library": str,
    "output_dir": str, "workers": int,
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def _table(args):
    return default_table() if getattr(args, "library", None) is None else read_table(args.library)


def _load_design(path) -> StateRegisterConfig:
    try:
        return StateRegisterConfig.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read design {path}: {exc}") from exc


def _write(path, text: str):
    ex.atomic_write(path, text)


def cmd_gen_design(args) -> dict:
    table = _table(args)
    if args.baseline_lvt is not None:
        config = generate_baseline(args.baseline_lvt, args.seed)
    else:
        spec = DesignSpec(args.half_a, args.half_b, args.policy_a, args.policy_b,
                          args.paths_a, args.paths_b, args.mix, args.seed)
        config = generate_design(spec)
    _write(args.output, config.dumps())
    report = area(config, table, generate_baseline(0, 0))
    return {"design": str(args.output), "label": config.label,
            "area": report.absolute, "overhead": report.overhead}


def cmd_simulate(args) -> dict:
    config = _load_design(args.design)
    options = SimOptions(args.clk_level, args.noise_sigma, args.background_offset, args.seed)
    key = ex.resolve_key(args.key)
    traces = generate_traces(config, _table(args), key, args.n, options, workers=args.workers)
    write_traces(args.output, traces, {"design": str(args.design)})
    out = {"traces": str(args.output), "n_traces": len(traces), "key": key.hex()}
    if args.csv:
        export_csv(args.csv, traces)
        out["csv"] = str(args.csv)
    return out


def cmd_attack(args) -> dict:
    traces = read_traces(args.traces)
    if args.n is not None:
        traces = traces.subset(slice(0, args.n))
    result = attack(traces, args.model)
    if args.output:
        _write(args.output, result.dumps())
    return {"success": result.success, "degenerate": result.degenerate,
            "recovered_last_round_key": result.recovered_key.hex(),
            "cipher_key": result.cipher_key.hex(), "n_traces": result.n_traces,
            "model": result.model.value}


def cmd_nttd(args) -> dict:
    traces = read_traces(args.traces)
    n = len(traces) if args.pool_size is None else args.pool_size
    if n > len(traces):
        raise CliError(f"pool size {n} exceeds the {len(traces)} stored traces")
    traces = traces.subset(slice(0, n))
    plan = SamplingPlan(n, args.coarse_trials, args.thorough_trials, args.success_threshold,
                        args.coarse_steps, min(args.coarse_min, n), args.refine_points,
                        args.spacing, args.plan_seed)
    est = estimate_nttd(traces, plan, args.model)
    if args.curve:
        _write(args.curve, est.curve_csv())
    return {"nttd": est.nttd, "label": est.label(), "disclosed": est.disclosed,
            "model": est.model, "pool_size": n, "warnings": list(est.warnings)}


def _experiment_config(args, study) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig.load(args.config) if args.config else ex.ExperimentConfig()
    overrides = {k: getattr(args, k) for k in _EXPERIMENT_FLAGS if getattr(args, k) is not None}
    if args.models:
        overrides["models"] = tuple(args.models.split(","))
    if getattr(args, "lvt_counts", None):
        overrides["lvt_counts"] = tuple(int(v) for v in args.lvt_counts.split(","))
    if getattr(args, "cells", None):
        overrides["grid_cells"] = tuple(tuple(int(v) for v in c.split(","))
                                        for c in args.cells.split(";"))
    return replace(cfg, study=study, **overrides)


def cmd_sweep_baseline(args) -> dict:
    cfg = _experiment_config(args, ex.Study.BASELINE_SWEEP)
    curve = ex.run_baseline_sweep(cfg)
    _write(Path(cfg.output_dir) / "baseline_config.json",
           json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return {"output_dir": cfg.output_dir,
            "curve": [{"lvt": lvt, "mean_nttd": m, "censored": c}
                      for lvt, m, c, _ in curve.points()]}


def cmd_grid(args) -> dict:
    mode = ex.GridMode(args.mode)
    study = ex.Study.GRID_LVT_ONLY if mode is ex.GridMode.LVT_ONLY else ex.Study.GRID_LVT_STRENGTH
    cfg = _experiment_config(args, study)
    result = ex.run_grid(cfg, mode)
    _write(Path(cfg.output_dir) / f"grid_{mode.value}_config.json",
           json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return {"output_dir": cfg.output_dir, "mode": mode.value, "cells": len(result.cells)}


def cmd_report(args) -> dict:
    out = Path(args.input_dir)
    runs = out / "baseline_runs.csv"
    try:
        pool = args.pool_size
        if pool is None:
            with open(out / "baseline_curve.csv", encoding="utf-8") as fh:
                pool = int(next(csv.DictReader(fh))["pool_size"])
        baseline = ex.read_baseline_runs(runs.read_text(encoding="utf-8"), pool)
        grids = [ex.GridResult.loads((out / f"grid_{m.value}.json").read_text(encoding="utf-8"))
                 for m in ex.GridMode if (out / f"grid_{m.value}.json").exists()]
    except (OSError, StopIteration, KeyError) as exc:
        raise CliError(f"cannot read study results in {out}: {exc}") from exc
    summary = ex.summary_from_results(baseline, grids, args.baseline_lvt, _table(args))
    target = Path(args.output) if args.output else out / "summary.csv"
    _write(target, summary.csv())
    return {"summary": str(target), "rows": len(summary.rows)}


def _add_experiment_flags(p):
    p.add_argument("--config", help="experiment config JSON (flags override it)")
    for name, typ in _EXPERIMENT_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--models", help="comma-separated subset of HD,HW")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="spsca", description="Static-power side-channel study tool")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-design", help="generate a state-register design")
    p.add_argument("--half-a", type=int, default=0)
    p.add_argument("--half-b", type=int, default=0)
    p.add_argument("--paths-a", type=int, default=1)
    p.add_argument("--paths-b", type=int, default=1)
    policies = [s.value for s in StrengthPolicy]
    p.add_argument("--policy-a", choices=policies, default=StrengthPolicy.FIXED_X2.value)
    p.add_argument("--policy-b", choices=policies, default=StrengthPolicy.FIXED_X2.value)
    p.add_argument("--mix", type=float, default=0.0, help="LVT fraction of plain bits")
    p.add_argument("--baseline-lvt", type=int, help="emit a baseline with N LVT bits per byte")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--library")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_design)

    p = sub.add_parser("simulate", help="simulate a static-power trace pool")
    p.add_argument("--design", required=True)
    p.add_argument("--key", default="000102030405060708090a0b0c0d0e0f")
    p.add_argument("-n", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clk-level", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--background-offset", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--library")
    p.add_argument("--csv", help="also export the traces as CSV")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="run last-round CPA on a trace file")
    p.add_argument("--traces", required=True)
    p.add_argument("--model", choices=["HD", "HW", "hd", "hw"], default="HD")
    p.add_argument("-n", type=int, help="use only the first N traces")
    p.add_argument("-o", "--output", help="write the per-byte JSON report here")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("nttd", help="estimate traces to disclosure")
    p.add_argument("--traces", required=True)
    p.add_argument("--model", choices=["HD", "HW", "hd", "hw"], default="HD")
    p.add_argument("--pool-size", type=int)
    p.add_argument("--coarse-trials", type=int, default=16)
    p.add_argument("--thorough-trials", type=int, default=64)
    p.add_argument("--success-threshold", type=float, default=0.90)
    p.add_argument("--coarse-steps", type=int, default=20)
    p.add_argument("--coarse-min", type=int, default=20)
    p.add_argument("--refine-points", type=int, default=8)
    p.add_argument("--spacing", choices=["log", "linear"], default="log")
    p.add_argument("--plan-seed", type=int, default=0)
    p.add_argument("--curve", help="write the success curve CSV here")
    p.set_defaults(func=cmd_nttd)

    p = sub.add_parser("sweep-baseline", help="NTTD versus LVT bits per byte")
    _add_experiment_flags(p)
    p.add_argument("--lvt-counts", help="comma-separated LVT counts (default 0..8)")
    p.set_defaults(func=cmd_sweep_baseline)

    p = sub.add_parser("grid", help="primitive-count grid study")
    p.add_argument("--mode", choices=[m.value for m in ex.GridMode], required=True)
    _add_experiment_flags(p)
    p.add_argument("--cells", help="restrict to cells, e.g. '8,0;6,0'")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="NTTD/area summary from a study directory")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--pool-size", type=int, help="default: read from baseline_curve.csv")
    p.add_argument("--baseline-lvt", type=int, help="baseline row (default: most resilient)")
    p.add_argument("--library")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:  # reported as a machine-readable error
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "command": args.command}), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": args.command, **result}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
