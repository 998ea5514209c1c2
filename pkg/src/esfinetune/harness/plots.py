"""Aligned CSV series and matplotlib figures from training/fine-tuning logs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


class LogSchemaError(ValueError):
    pass


# metric read from each log kind when none is requested explicitly
DEFAULT_METRIC = {"train": ("t_s", "score"), "finetune": ("best_metric", "best_so_far")}


def read_log(path) -> tuple[str, list[dict]]:
    """Load a line-delimited log and classify it as ``train`` or ``finetune``."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise LogSchemaError(f"{path}:{lineno}: not a JSON record") from exc
    kinds = {"train" if "episode" in r else "finetune" if "generation" in r else None for r in records}
    if None in kinds or len(kinds) != 1:
        raise LogSchemaError(f"{path}: records do not share one schema")
    kind = kinds.pop()
    if kind == "train" and any("error" in r for r in records):
        records = [r for r in records if "error" not in r]
    return kind, records


def series(kind: str, records: list[dict], metric=None) -> list:
    if metric is None:
        for candidate in DEFAULT_METRIC[kind]:
            if any(candidate in r for r in records):
                metric = candidate
                break
        else:
            raise LogSchemaError(f"no known metric in {kind} log")
    return [r.get(metric) for r in records if (kind != "train" or "eval_key" in r or metric in r)]


def export(logs, labels=None, out_dir=".", metric=None, name="series", title=None) -> dict:
    """Write ``<name>.csv`` and ``<name>.png`` comparing several logs.

    Rows are aligned by position; a shorter series is padded with empty
    cells. Both the episode and the generation index are emitted.
    """
    logs = [Path(p) for p in logs]
    labels = list(labels) if labels else [p.stem for p in logs]
    if len(labels) != len(logs):
        raise LogSchemaError("one label per log is required")
    loaded = [read_log(p) for p in logs]
    columns = [series(kind, records, metric) for kind, records in loaded]
    episodes = [
        [r["episode"] for r in records if "eval_key" in r or (metric and metric in r)] for kind, records in loaded if kind == "train"
    ]
    gens = [[r["generation"] for r in records] for kind, records in loaded if kind == "finetune"]
    n_rows = max((len(c) for c in columns), default=0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    ep_index = max(episodes, key=len) if episodes else []
    gen_index = max(gens, key=len) if gens else []
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "episode", "generation", *labels])
        for i in range(n_rows):
            row = [i, ep_index[i] if i < len(ep_index) else "", gen_index[i] if i < len(gen_index) else ""]
            for col in columns:
                value = col[i] if i < len(col) else None
                row.append("" if value is None else repr(float(value)))
            writer.writerow(row)

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, (kind, _), col in zip(labels, loaded, columns):
        xs = [i for i, v in enumerate(col) if v is not None]
        ax.plot(xs, [col[i] for i in xs], label=label, linestyle="-" if kind == "train" else "--")
    ax.set_xlabel("evaluation index (episode / generation)")
    ax.set_ylabel(metric or "metric")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    png_path = out / f"{name}.png"
    fig.savefig(png_path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return {"csv": csv_path, "png": png_path, "rows": n_rows}


def plot_trajectory(traj, path, title=None):
    """State and input trajectories of one rollout."""
    fig, axes = plt.subplots(3, 1, figsize=(6.0, 6.0), sharex=True)
    t = traj.times
    axes[0].plot(t, traj.states[:, 0], label="q1")
    axes[0].plot(t, traj.states[:, 1], label="q2")
    axes[0].set_ylabel("position")
    axes[1].plot(t, traj.states[:, 2], label="qdot1")
    axes[1].plot(t, traj.states[:, 3], label="qdot2")
    axes[1].set_ylabel("velocity")
    axes[2].step(t[:-1], traj.actions[:, 0], where="post")
    axes[2].set_ylabel("input")
    axes[2].set_xlabel("time [s]")
    for ax in axes[:2]:
        ax.legend(frameon=False, loc="upper right")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return Path(path)
