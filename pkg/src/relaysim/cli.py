"""Command-line front end: run / sweep / oracle / validate.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
Artifacts land in --out-dir: a config snapshot, summary.csv with a fixed
column order, optional trace.csv, and SVG plots for sweeps.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from .config import (
    ConfigError,
    ExperimentConfig,
    config_to_dict,
    emit_config,
    load_config,
)
from .harness import AXES, RunSummary, compare_with_oracle, run_episode, sweep
from .plots import emit_sweep_plots, plot_value_trace

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _check_finite(value, context: str):
    if isinstance(value, float) and not math.isfinite(value):
        raise RuntimeError(f"non-finite value in {context}: {value!r}")
    return value


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _check_finite(row.get(k), str(path)) for k in columns})


def _write_trace(path, trace_rows, n_relays: int):
    gammas = ["gamma_sd", "gamma_sp"] + [f"gamma_rp_{m}" for m in range(n_relays)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "node", "q", "value"] + gammas)
        for row in trace_rows:
            writer.writerow([_check_finite(x, str(path)) for x in row])


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.run.seed = args.seed
    if getattr(args, "frames", None) is not None:
        cfg.run.frames = args.frames
    if getattr(args, "policy", None):
        cfg.policy.kind = args.policy
    if getattr(args, "trace", False):
        cfg.run.trace = True
    return cfg.validate()


def cmd_run(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary, traces = run_episode(cfg)
    emit_config(cfg, out_dir / "config_snapshot.yaml")
    _write_csv(out_dir / "summary.csv", [summary.summary_row()], RunSummary.SUMMARY_COLUMNS)
    if cfg.run.trace and traces.rows:
        _write_trace(out_dir / "trace.csv", traces.rows, cfg.system.n_relays)
        plot_value_trace(traces.rows, out_dir / "value_trace.svg")
    print(
        f"{cfg.policy.kind}: delay={summary.avg_delay_frames:.3f} frames, "
        f"throughput={summary.throughput_pps:.1f} pps, drop={summary.drop_rate:.4f}, "
        f"P_src={summary.avg_power_src:.3f}, converged={summary.converged}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = [float(v) for v in args.values.split(",")]
    policies = args.policies.split(",") if args.policies else None
    rows, failures = sweep(
        cfg, args.axis, values, repetitions=args.repetitions, policies=policies
    )
    emit_config(cfg, out_dir / "config_snapshot.yaml")
    columns = ("axis",) + RunSummary.SUMMARY_COLUMNS
    _write_csv(out_dir / "summary.csv", rows, columns)
    plots = emit_sweep_plots(out_dir / "summary.csv", args.axis, out_dir)
    for f in failures:
        print(f"FAILED cell {f['policy']} @ {f['axis_value']}: {f['error']}", file=sys.stderr)
    print(
        f"sweep over {args.axis}: {len(rows)} runs -> {out_dir / 'summary.csv'}, "
        + ", ".join(str(p) for p in plots)
    )
    return EXIT_RUNTIME if failures and not rows else EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = compare_with_oracle(cfg)
    emit_config(cfg, out_dir / "config_snapshot.yaml")
    rows = [
        {
            "theta": report["theta"],
            "learned_cost": report["learned_cost"],
            "gap": report["gap"],
            "max_bellman_residual": report["max_bellman_residual"],
            "oracle_delay_frames": report["oracle_metrics"]["avg_delay_frames"],
            "learned_delay_frames": report["learned_metrics"]["avg_delay_frames"],
        }
    ]
    _write_csv(out_dir / "oracle_report.csv", rows, list(rows[0]))
    print(
        f"oracle theta={report['theta']:.6f}, learned={report['learned_cost']:.6f}, "
        f"gap={100 * report['gap']:.2f}%, max residual={report['max_bellman_residual']:.4f}"
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"config OK: {len(config_to_dict(cfg))} sections")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relaysim",
        description="Two-hop buffered MIMO relay simulator and policy library",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--frames", type=int, help="override run.frames")
        p.add_argument("--policy", help="override policy.kind")
        p.add_argument("--out-dir", default="out", help="artifact directory")

    p_run = sub.add_parser("run", help="single seeded episode")
    common(p_run)
    p_run.add_argument("--trace", action="store_true", help="write learning trace")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid of runs over one axis")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.add_argument("--repetitions", type=int, default=1)
    p_sweep.add_argument("--policies", help="comma-separated policy kinds")
    p_sweep.set_defaults(func=cmd_sweep)

    p_oracle = sub.add_parser("oracle", help="tiny-instance exact comparison")
    common(p_oracle)
    p_oracle.set_defaults(func=cmd_oracle)

    p_val = sub.add_parser("validate", help="check a config file")
    common(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses its own exit codes
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
