"""Static SVG plot emission from result tables; byte-deterministic output."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

matplotlib.rcParams["svg.hashsalt"] = "relaysim"

_SAVE_KW = dict(format="svg", metadata={"Date": None})


def _finite(x) -> float:
    x = float(x)
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError(f"non-finite value {x!r} in plot data")
    return x


def _grouped(rows, ykey):
    """policy -> sorted [(axis_value, mean y)] with repetition averaging."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        acc[r["policy"]][_finite(r["axis_value"])].append(_finite(r[ykey]))
    out = {}
    for policy, by_x in acc.items():
        out[policy] = sorted((x, sum(ys) / len(ys)) for x, ys in by_x.items())
    return out


def plot_metric_vs_axis(rows, ykey, ylabel, xlabel, path, logy=False):
    fig, ax = plt.subplots(figsize=(6, 4))
    for policy, pts in sorted(_grouped(rows, ykey).items()):
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, marker="o", label=policy)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_value_trace(trace_rows, path, max_cells: int = 12):
    """Per-node value entries versus frame index (learning convergence view)."""
    series = defaultdict(list)
    for row in trace_rows:
        t, node, q, value = row[0], row[1], row[2], row[3]
        series[(node, q)].append((t, _finite(value)))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (node, q), pts in sorted(series.items())[:max_cells]:
        label = ("src" if node == 0 else f"relay{node - 1}") + f" q={q}"
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=label, linewidth=0.9)
    ax.set_xlabel("frame")
    ax.set_ylabel("per-node value")
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def read_rows(csv_path) -> list:
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_sweep_plots(csv_path, axis: str, out_dir) -> list:
    """Re-plottable from the summary table alone; returns written paths."""
    rows = read_rows(csv_path)
    out_dir = Path(out_dir)
    written = []
    xlabel = {"snr": "SNR (dB)", "m": "relays", "n_r": "relay antennas", "n_b": "packet bits"}[axis]
    p = out_dir / f"delay_vs_{axis}.svg"
    plot_metric_vs_axis(rows, "avg_delay_frames", "avg end-to-end delay (frames)", xlabel, p, logy=True)
    written.append(p)
    if axis == "snr":
        p = out_dir / "throughput_vs_snr.svg"
        plot_metric_vs_axis(rows, "throughput_pps", "throughput (packets/s)", xlabel, p)
        written.append(p)
    return written
