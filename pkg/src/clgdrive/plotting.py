"""Static SVG line charts for training curves and labeled reward traces."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import split_episodes  # noqa: E402
from .trajectory import read_rows  # noqa: E402

plt.rcParams["svg.hashsalt"] = "clgdrive"
_SVG_META = {"Date": None, "Creator": None}

TRACE_KEYS = ("raw", "normalized", "r_synthesis", "reward")


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def plot_curves(csv_path: Union[str, Path], out_dir: Union[str, Path]) -> List[Path]:
    """One chart per curve column against the step count."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{csv_path} has no data rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = [float(r["step"]) for r in rows]
    paths = []
    for col in rows[0]:
        if col in ("step", "episode"):
            continue
        ys = [float(r[col]) if r[col] not in ("", "nan") else math.nan for r in rows]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(steps, ys, marker="o", linewidth=1.2)
        ax.set_xlabel("environment step")
        ax.set_ylabel(col)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        paths.append(_save(fig, out_dir / f"curve_{col}.svg"))
    return paths


def plot_trace(jsonl_path: Union[str, Path], out_dir: Union[str, Path], max_episodes: int = 10,
               keys: Sequence[str] = TRACE_KEYS) -> List[Path]:
    """Per-episode reward components against time, one chart per episode."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rows in split_episodes(read_rows(jsonl_path))[:max_episodes]:
        t = [r["time_s"] for r in rows]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for k in keys:
            ys = [math.nan if r[k] is None else r[k] for r in rows]
            if not all(math.isnan(y) for y in ys):
                ax.plot(t, ys, label=k, linewidth=1.2)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("value")
        ax.set_title(f"episode {rows[0]['episode']}")
        ax.grid(alpha=0.3)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        paths.append(_save(fig, out_dir / f"trace_episode_{rows[0]['episode']}.svg"))
    return paths
