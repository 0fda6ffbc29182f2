"""
Training metrics, convergence detection and run outputs.

Outputs of a run directory:

- metrics.csv        iteration,seconds,avg_total_reward,collect_s,update_s
- summary.txt        convergence iteration/time/reward and final reward
- reward_curve.svg   average total reward against iteration
"""

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["iteration", "seconds", "avg_total_reward", "collect_s", "update_s"]
CONVERGENCE_WINDOW = 90
CONVERGENCE_TOLERANCE = 0.02
FLOAT_FORMAT = "%.17g"


@dataclass
class MetricsRow:
    iteration: int
    seconds: float
    avg_total_reward: float
    collect_s: float
    update_s: float

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError("iteration index must be >= 0")
        if min(self.seconds, self.collect_s, self.update_s) < 0:
            raise ValueError("timings must be >= 0")


def metrics_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(row) for row in rows], columns=METRICS_COLUMNS)
    if not frame["iteration"].is_monotonic_increasing or frame["iteration"].duplicated().any():
        raise ValueError("metrics rows must have strictly increasing iteration indices")
    return frame


def log_metrics_row(row: MetricsRow):
    logger.info(f"METRICS_ROW: {json.dumps(asdict(row))}")


def detect_convergence(rewards, window=CONVERGENCE_WINDOW, tolerance=CONVERGENCE_TOLERANCE) -> Optional[int]:
    """
    Earliest window end (1-based count of series points) where the population
    variance of the last ``window`` rewards is at most ``tolerance`` times the
    absolute window mean. None if the series never converges.
    """
    series = pd.Series(np.asarray(rewards, dtype=np.float64))
    if len(series) < window:
        return None
    rolling = series.rolling(window)
    variance = rolling.var(ddof=0)
    mean = rolling.mean()
    hits = np.flatnonzero((variance <= tolerance * mean.abs()).to_numpy())
    if hits.size == 0:
        return None
    return int(hits[0]) + 1


@dataclass
class RunSummary:
    iterations: int
    final_reward: Optional[float]
    converged: bool
    convergence_point: Optional[int]
    convergence_iteration: Optional[int]
    convergence_seconds: Optional[float]
    convergence_reward: Optional[float]


def summarize(rows: Sequence[MetricsRow]) -> RunSummary:
    rewards = [row.avg_total_reward for row in rows]
    point = detect_convergence(rewards)
    at = rows[point - 1] if point is not None else None
    return RunSummary(
        iterations=len(rows),
        final_reward=rewards[-1] if rewards else None,
        converged=point is not None,
        convergence_point=point,
        convergence_iteration=at.iteration if at else None,
        convergence_seconds=at.seconds if at else None,
        convergence_reward=at.avg_total_reward if at else None,
    )


def write_metrics_csv(rows, path):
    metrics_frame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_metrics_csv(path) -> List[MetricsRow]:
    frame = pd.read_csv(path, dtype={"iteration": np.int64}, float_precision="round_trip")
    if list(frame.columns) != METRICS_COLUMNS:
        raise ValueError(f"unexpected metrics header {list(frame.columns)}")
    return [MetricsRow(int(r.iteration), float(r.seconds), float(r.avg_total_reward),
                       float(r.collect_s), float(r.update_s)) for r in frame.itertuples(index=False)]


def format_summary(summary: RunSummary, label=""):
    lines = []
    if label:
        lines.append(f"run: {label}")
    lines.append(f"evaluation points: {summary.iterations}")
    lines.append(f"final avg total reward: {summary.final_reward!r}")
    if summary.converged:
        lines.append(f"converged at iteration: {summary.convergence_iteration}")
        lines.append(f"convergence time (s): {summary.convergence_seconds!r}")
        lines.append(f"convergence reward: {summary.convergence_reward!r}")
    else:
        lines.append(f"converged: no (window {CONVERGENCE_WINDOW}, tolerance {CONVERGENCE_TOLERANCE})")
    return "\n".join(lines) + "\n"


def plot_reward_curve(rows, path):
    """Line plot of avg_total_reward against iteration."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot([row.iteration for row in rows], [row.avg_total_reward for row in rows], color="steelblue")
    ax.set_title("Average total reward during training")
    ax.set_xlabel("Iteration")
    ax.set_ylabel("Average total reward")
    ax.grid(True)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_outputs(rows: Sequence[MetricsRow], output_dir, label=""):
    """Write metrics.csv, summary.txt and reward_curve.svg; returns the summary."""
    os.makedirs(output_dir, exist_ok=True)
    write_metrics_csv(rows, os.path.join(output_dir, "metrics.csv"))
    summary = summarize(rows)
    with open(os.path.join(output_dir, "summary.txt"), "w", encoding="utf-8") as f:
        f.write(format_summary(summary, label))
    plot_reward_curve(rows, os.path.join(output_dir, "reward_curve.svg"))
    logger.info(f"RUN_SUMMARY: {json.dumps(asdict(summary))}")
    return summary


def aggregate_runs(runs: Sequence[Sequence[MetricsRow]]) -> List[MetricsRow]:
    """Per-iteration mean across runs, over the iterations every run reported."""
    frames = [metrics_frame(rows).set_index("iteration") for rows in runs]
    if not frames:
        return []
    stacked = pd.concat(frames, keys=range(len(frames)), names=["run", "iteration"])
    counts = stacked.groupby(level="iteration").size()
    shared = counts[counts == len(frames)].index
    means = stacked.groupby(level="iteration").mean().loc[shared]
    return [MetricsRow(int(k), float(r.seconds), float(r.avg_total_reward), float(r.collect_s), float(r.update_s))
            for k, r in means.iterrows()]


def write_bench_csv(records, path):
    """records: dicts with algorithm, M, iteration_s, collect_s, update_s (plus ratio columns)."""
    frame = pd.DataFrame(records)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return frame
