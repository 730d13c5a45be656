"""Figure rendering for experiment outputs.

Consumes the delimited results table and optional trajectory logs and
writes matplotlib figures next to them: feasibility probability against
the rate target, and the convergence behavior of the multiplier ascent.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_MARKERS = ("o", "s", "d", ">", "v", "^", "*", "x")


def read_results_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("gamma", "rate", "rate_feasible"):
            row[key] = float(row[key])
        for key in ("feasible", "drops", "excluded"):
            row[key] = int(row[key])
    return rows


def feasibility_figure(rows: list, out_path) -> None:
    """Probability of feasibility vs. minimum rate, per precoder and mode."""
    curves = defaultdict(list)
    for row in rows:
        curves[(row["precoder"], row["mode"])].append(
            (row["rate"], row["rate_feasible"]))
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for i, (key, points) in enumerate(sorted(curves.items())):
        points.sort()
        rates, feas = zip(*points)
        ax.plot(rates, feas, "-" + _MARKERS[i % len(_MARKERS)],
                label=f"{key[0]} / {key[1]}")
    ax.set_xlabel("Minimum rate [b/s/Hz]")
    ax.set_ylabel("Probability of feasibility")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def read_trajectories(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def convergence_figure(records: list, out_path, max_runs: int = 4) -> None:
    """Dual value and worst per-AP power per outer iteration.

    One curve per ascent run (drop/gamma/precoder/restart), capped at
    ``max_runs`` to keep the panels readable.
    """
    runs = defaultdict(list)
    for rec in records:
        key = (rec.get("drop"), rec.get("gamma"), rec.get("precoder"),
               rec.get("restart", 0))
        runs[key].append(rec)
    fig, (ax_d, ax_p) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    for i, (key, recs) in enumerate(sorted(runs.items())[:max_runs]):
        recs.sort(key=lambda r: r["iter"])
        iters = [r["iter"] for r in recs]
        label = f"drop {key[0]}, gamma {key[1]:g}, {key[2]}, restart {key[3]}"
        ax_d.plot(iters, [r["d_tilde"] for r in recs],
                  "-" + _MARKERS[i % len(_MARKERS)], ms=4, label=label)
        ax_p.plot(iters, [r["max_ap_power"] for r in recs],
                  "-" + _MARKERS[i % len(_MARKERS)], ms=4, label=label)
    ax_d.set_xlabel("Outer iteration")
    ax_d.set_ylabel("Dual value")
    ax_p.set_xlabel("Outer iteration")
    ax_p.set_ylabel("Max per-AP power [W]")
    for ax in (ax_d, ax_p):
        ax.grid(True, alpha=0.4)
    ax_d.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
