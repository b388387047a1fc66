"""CSV, JSON report and SVG chart output.

Column orders here are a public contract; tests lock them.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .simulation import RunSummary

ROUNDS_CSV_COLUMNS = ["round", "server", "accuracy", "train_size", "connected", "e_dt_J", "e_cp_J",
                      "in_neighbors", "round_total_J"]
AGG_CSV_COLUMNS = ["round", "receiver", "sender", "l", "q"]
REGRET_CSV_COLUMNS = ["round", "selected", "utility", "oracle_utility", "cum_utility", "cum_oracle", "regret"]
BOUND_CSV_COLUMNS = ["R_K", "bound", "ratio"]
SWEEP_RUNS_COLUMNS = ["parameter", "value", "repeat", "seed", "status", "avg_acc", "var_acc", "best_acc",
                      "worst_acc", "tot_cost_MJ", "mt_cost_MJ"]
SWEEP_SUMMARY_COLUMNS = ["parameter", "value", "runs", "avg_acc_mean", "avg_acc_std", "tot_cost_MJ_mean",
                         "tot_cost_MJ_std", "mt_cost_MJ_mean", "mt_cost_MJ_std"]


def _write(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_rounds_csv(summary: RunSummary, path: Path) -> None:
    rows = []
    for m in summary.series:
        for i in range(len(m.accuracy)):
            senders = ";".join(str(int(j)) for j in np.flatnonzero(m.topology[i]))
            rows.append([m.k, i, repr(float(m.accuracy[i])), int(m.train_size[i]), int(m.connected[i]),
                         repr(float(m.e_dt[i])), repr(float(m.e_cp[i])), senders, repr(float(m.round_total))])
    _write(path, ROUNDS_CSV_COLUMNS, rows)


def write_agg_csv(summary: RunSummary, path: Path) -> None:
    rows = [[m.k, i, j, repr(l), repr(q)] for m in summary.series for i, j, l, q in m.agg_debug]
    _write(path, AGG_CSV_COLUMNS, rows)


def write_summary(summary: RunSummary, path: Path, extra: Dict = None) -> None:
    data = summary.as_dict()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_run_outputs(summary: RunSummary, out_dir: Path, extra: Dict = None, debug_agg: bool = False) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "rounds.csv", out_dir / "energy.csv", out_dir / "summary.json"]
    write_rounds_csv(summary, paths[0])
    summary.ledger.write_csv(paths[1])
    write_summary(summary, paths[2], extra)
    if debug_agg:
        paths.append(out_dir / "aggregation.csv")
        write_agg_csv(summary, paths[-1])
    return paths


def write_regret_csv(run, path: Path) -> None:
    cum_u = np.cumsum(run.gained)
    cum_o = np.cumsum(run.optimal)
    rows = [[k + 1, ";".join(map(str, sel)), repr(float(run.gained[k])), repr(float(run.optimal[k])),
             repr(float(cum_u[k])), repr(float(cum_o[k])), repr(float(cum_o[k] - cum_u[k]))]
            for k, sel in enumerate(run.selections)]
    _write(path, REGRET_CSV_COLUMNS, rows)


def write_bound_csv(run, path: Path) -> str:
    line = [repr(run.regret), repr(run.bound), repr(run.regret / run.bound)]
    _write(path, BOUND_CSV_COLUMNS, [line])
    return f"R_K={run.regret:.3f} bound={run.bound:.3f} ratio={run.regret / run.bound:.4f}"


# ------------------------------------------------------------------ charts

def read_rounds_csv(path: Path):
    """Per-round mean accuracy and cumulative energy (MJ) from a rounds.csv."""
    acc: Dict[int, List[float]] = {}
    total: Dict[int, float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            k = int(row["round"])
            acc.setdefault(k, []).append(float(row["accuracy"]))
            total[k] = float(row["round_total_J"])
    rounds = sorted(acc)
    mean_acc = [float(np.mean(acc[k])) for k in rounds]
    cum_mj = np.cumsum([total[k] for k in rounds]) / 1e6
    return rounds, mean_acc, cum_mj.tolist()


def _polyline(xs, ys, x0, y0, w, h, ymin, ymax, color):
    xmax = max(xs) if max(xs) > min(xs) else min(xs) + 1
    span = (ymax - ymin) or 1.0
    pts = " ".join(f"{x0 + w * (x - min(xs)) / (xmax - min(xs)):.2f},{y0 + h - h * (y - ymin) / span:.2f}"
                   for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


def render_chart(rounds, mean_acc, cum_mj, path: Path, title: str = "") -> None:
    """Two stacked panels: mean accuracy and cumulative energy per round."""
    w, h, pad = 560, 160, 50
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2 * pad}" height="{2 * h + 3 * pad}" '
             f'font-family="sans-serif" font-size="11">',
             f'<text x="{pad}" y="20">{title}</text>']
    panels = [("mean test accuracy", mean_acc, 0.0, 1.0, "#1f77b4"),
              ("cumulative energy (MJ)", cum_mj, 0.0, max(cum_mj) if cum_mj else 1.0, "#d62728")]
    for n, (label, ys, lo, hi, color) in enumerate(panels):
        y0 = pad + n * (h + pad)
        parts.append(f'<rect x="{pad}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#888"/>')
        parts.append(f'<text x="{pad}" y="{y0 - 5}">{label}: {lo:.3g} to {hi:.3g}</text>')
        if ys:
            parts.append(_polyline(rounds, ys, pad, y0, w, h, lo, hi, color))
    parts.append(f'<text x="{pad + w - 60}" y="{2 * h + 3 * pad - 15}">round</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
