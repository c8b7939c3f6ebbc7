"""Matplotlib rendering of schedules and traces to image files.

Used by the CLI report path: whenever a delimited report is written to a
directory, a figure lands next to it.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 (backend must be set first)
from matplotlib.patches import Patch  # noqa: E402

from .broker import Schedule
from .gridsim import ExecutionTrace

_COMPUTE = "#4878cf"
_TRANSFER = "#d8a44c"
_CACHED = "#8bb87f"


def render_gantt(schedule: Schedule, path) -> None:
    """Write a per-node Gantt chart of a schedule to `path` (PNG)."""
    nodes = sorted({a.node_id for a in schedule.assignments})
    lanes = {node: i for i, node in enumerate(nodes)}
    fig, ax = plt.subplots(figsize=(9, 1.0 + 0.6 * max(len(nodes), 1)))
    for a in schedule.assignments:
        y = lanes[a.node_id]
        if a.cached:
            ax.plot([a.start_s], [y], marker="D", color=_CACHED, markersize=7)
            continue
        if a.transfer_in_s > 0:
            ax.barh(
                y,
                a.transfer_in_s,
                left=a.start_s - a.transfer_in_s,
                height=0.5,
                color=_TRANSFER,
                edgecolor="black",
                linewidth=0.4,
            )
        ax.barh(
            y,
            max(a.end_s - a.start_s, 1e-9),
            left=a.start_s,
            height=0.5,
            color=_COMPUTE,
            edgecolor="black",
            linewidth=0.4,
        )
        ax.text(
            a.start_s,
            y + 0.33,
            f"{a.process_id}.{a.chunk_index}",
            fontsize=7,
            va="bottom",
        )
    ax.set_yticks(range(len(nodes)))
    ax.set_yticklabels(nodes)
    ax.set_xlabel("time (s)")
    ax.set_title(
        f"schedule: makespan {schedule.makespan_s:.3f} s, cost {schedule.total_cost:.3f}"
    )
    ax.legend(
        handles=[
            Patch(color=_TRANSFER, label="transfer"),
            Patch(color=_COMPUTE, label="compute"),
            Patch(color=_CACHED, label="cache hit"),
        ],
        loc="upper right",
        fontsize=8,
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_trace_figure(trace: ExecutionTrace, path) -> None:
    """Write an event timeline of an execution trace to `path` (PNG)."""
    kinds = ["transfer_start", "transfer_end", "task_start", "task_end", "node_fail", "retry"]
    markers = {"transfer_start": "^", "transfer_end": "v", "task_start": "o",
               "task_end": "s", "node_fail": "x", "retry": "*"}
    lanes = {kind: i for i, kind in enumerate(kinds)}
    fig, ax = plt.subplots(figsize=(9, 3.2))
    for e in trace.events:
        ax.plot(
            [e.time_s],
            [lanes[e.kind]],
            marker=markers[e.kind],
            linestyle="none",
            color="#333333",
            markersize=6,
        )
    ax.set_yticks(range(len(kinds)))
    ax.set_yticklabels(kinds)
    ax.set_xlabel("time (s)")
    ax.set_title(f"execution trace: wall makespan {trace.wall_makespan_s:.3f} s")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
