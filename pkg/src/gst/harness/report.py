"""Seed aggregation, run summaries and SVG charts built from run logs."""
from __future__ import annotations

import csv
import math
from pathlib import Path

from ..schedule import average_cr
from .runner import NUMERIC, read_runlog

RUNLOG = "runlog.csv"
STATS = ("mean", "min", "max")


def aggregate(runs: list[list[dict]]) -> list[dict]:
    """Per-timestep mean/min/max of every numeric column across runs.

    Runs may stop at different times (episode limits); each timestep
    aggregates the runs that logged it, and ``n`` records how many did.
    Blank cells (no completed episode, no evaluation) are skipped.
    """
    if not runs:
        raise ValueError("nothing to aggregate")
    by_t: dict[int, list[dict]] = {}
    for rows in runs:
        for row in rows:
            by_t.setdefault(row["timestep"], []).append(row)
    out = []
    for t in sorted(by_t):
        rows = by_t[t]
        agg: dict = {"timestep": t, "n": len(rows)}
        for col in NUMERIC:
            vals = [r[col] for r in rows if r[col] is not None]
            if vals:
                agg[f"{col}_mean"] = math.fsum(vals) / len(vals)
                agg[f"{col}_min"] = min(vals)
                agg[f"{col}_max"] = max(vals)
            else:
                agg.update({f"{col}_{s}": None for s in STATS})
        out.append(agg)
    return out


def aggregate_columns() -> list[str]:
    return ["timestep", "n"] + [f"{c}_{s}" for c in NUMERIC for s in STATS]


def write_rows(path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def find_runlogs(root) -> list[Path]:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(root.rglob(RUNLOG))


def series_label(path: Path, root: Path) -> tuple[str, str]:
    """(series, run) labels; seeds of one sweep (``seed-N`` dirs) share a series."""
    rel = path.parent.relative_to(root) if path.parent != root else Path(path.parent.name)
    parts = rel.parts or (path.parent.name,)
    run = "/".join(parts)
    series = "/".join(parts[:-1]) if parts[-1].startswith("seed-") and len(parts) > 1 else run
    return series, run


def _last(rows: list[dict], col: str):
    vals = [r[col] for r in rows if r[col] is not None]
    return vals[-1] if vals else None


def summarize(rows: list[dict]) -> dict:
    evals = [r["eval_return"] for r in rows if r["eval_return"] is not None]
    return {
        "log_rows": len(rows),
        "last_timestep": rows[-1]["timestep"],
        "average_cr": average_cr([r["cr_formula"] for r in rows]),
        "average_cr_exact": average_cr([r["cr_exact"] for r in rows]),
        "final_s_now": rows[-1]["s_now"],
        "final_phase": rows[-1]["phase"],
        "last_episode_return": _last(rows, "episode_return"),
        "last_eval_return": evals[-1] if evals else None,
        "max_eval_return": max(evals) if evals else None,
    }


SUMMARY_COLUMNS = [
    "series",
    "run",
    "log_rows",
    "last_timestep",
    "average_cr",
    "average_cr_exact",
    "final_s_now",
    "final_phase",
    "last_episode_return",
    "last_eval_return",
    "max_eval_return",
]


def _chart(series: dict[str, list[dict]], column: str, ylabel: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "gst", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        for label, agg in series.items():
            pts = [(a["timestep"], a[f"{column}_mean"], a[f"{column}_min"], a[f"{column}_max"]) for a in agg]
            pts = [p for p in pts if p[1] is not None]
            if not pts:
                continue
            t, mean, lo, hi = zip(*pts)
            (line,) = ax.plot(t, mean, label=label, linewidth=1.2)
            if any(a["n"] > 1 for a in agg):
                ax.fill_between(t, lo, hi, color=line.get_color(), alpha=0.2, linewidth=0)
        ax.set_xlabel("timestep")
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        if ax.lines:
            ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def reward_column(aggs: list[list[dict]]) -> str:
    """Evaluation return when any run evaluated, otherwise the training episode return."""
    has_eval = any(a["eval_return_mean"] is not None for agg in aggs for a in agg)
    return "eval_return" if has_eval else "episode_return"


def report(runs_dir, out_dir) -> list[dict]:
    root = Path(runs_dir)
    paths = find_runlogs(root)
    if not paths:
        raise FileNotFoundError(f"no {RUNLOG} under {root}")
    base = root if root.is_dir() else root.parent
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grouped: dict[str, list[list[dict]]] = {}
    summary = []
    for path in paths:
        rows = read_runlog(path)
        if not rows:
            raise ValueError(f"{path}: empty run log")
        series, run = series_label(path, base)
        grouped.setdefault(series, []).append(rows)
        summary.append({"series": series, "run": run, **summarize(rows)})
    write_rows(out / "summary.csv", SUMMARY_COLUMNS, summary)
    aggs = {label: aggregate(runs) for label, runs in grouped.items()}
    col = reward_column(list(aggs.values()))
    _chart(aggs, col, col.replace("_", " "), out / "reward.svg")
    _chart(aggs, "cr_formula", "compression ratio", out / "cr.svg")
    return summary
