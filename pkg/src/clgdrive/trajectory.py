"""Trajectory logs as JSON Lines, one object per environment step.

Every row carries the same keys in the same order (``ROW_KEYS``). Infinite
gaps and undefined reward components are written as ``null``. Floats use
Python's shortest round-trip repr, so read -> write reproduces a file byte for
byte.
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Union

from .embeddings import SceneDescriptor
from .reward_stack import RewardRecord, RewardStack
from .synthesis import VehicleStateSnapshot

REWARD_KEYS = ("sim_pos", "sim_neg", "raw", "normalized", "r_speed", "f_center", "f_angle",
               "f_stability", "r_synthesis", "v_target", "r_task", "reward")

ROW_KEYS = (
    "episode", "step", "time_s", "frame_id", "x", "y", "heading_rad", "speed_mps",
    "steer", "throttle_brake", "lateral_offset_m", "heading_error_rad", "lateral_history",
    "v_max", "collision", "collision_speed_kmh", "nearest_vehicle_gap_m", "off_road",
    "distance_m", "route_progress_m", "route_length_m", "route_completed", "route_completions",
    "terminated", "reason",
) + REWARD_KEYS


class TrajectoryFormatError(ValueError):
    pass


def _num(x: Optional[float]):
    if x is None:
        return None
    x = float(x)
    return None if (math.isnan(x) or math.isinf(x)) else x


def make_row(result, action, record: Optional[RewardRecord] = None, ego=None) -> Dict:
    """Row for one ``DrivingEnv.step`` result; reward keys stay null until labeled."""
    info, scene = result.info, result.scene
    row = {
        "episode": info.episode, "step": info.step, "time_s": info.time_s, "frame_id": info.frame_id,
        "x": ego.x if ego is not None else None, "y": ego.y if ego is not None else None,
        "heading_rad": ego.heading if ego is not None else None,
        "speed_mps": info.speed, "steer": float(action[0]), "throttle_brake": float(action[1]),
        "lateral_offset_m": info.lateral_offset, "heading_error_rad": info.heading_error,
        "lateral_history": [float(v) for v in info.vehicle.lateral_offset_history],
        "v_max": info.vehicle.v_max, "collision": bool(scene.collision),
        "collision_speed_kmh": info.collision_speed_kmh,
        "nearest_vehicle_gap_m": _num(scene.nearest_vehicle_gap), "off_road": bool(scene.off_road),
        "distance_m": info.distance_m, "route_progress_m": info.route_progress_m,
        "route_length_m": info.route_length_m, "route_completed": bool(info.route_completed),
        "route_completions": info.route_completions, "terminated": bool(result.terminated),
        "reason": result.reason,
    }
    for k in REWARD_KEYS:
        row[k] = None
    row["r_task"] = info.task_reward
    if record is not None:
        apply_record(row, record)
    return row


def apply_record(row: Dict, record: RewardRecord) -> Dict:
    for k, v in record.as_dict().items():
        row[k] = _num(v)
    return row


def row_scene(row: Dict) -> SceneDescriptor:
    gap = row["nearest_vehicle_gap_m"]
    return SceneDescriptor(bool(row["collision"]), math.inf if gap is None else float(gap),
                           float(row["lateral_offset_m"]), bool(row["off_road"]))


def row_vehicle(row: Dict) -> VehicleStateSnapshot:
    return VehicleStateSnapshot(float(row["speed_mps"]), float(row["lateral_offset_m"]),
                                float(row["heading_error_rad"]),
                                tuple(float(v) for v in row["lateral_history"]), float(row["v_max"]))


def label_rows(rows: Iterable[Dict], stack: RewardStack) -> List[Dict]:
    """Recompute every row's reward components under ``stack``."""
    out = []
    for row in rows:
        rec = stack.label(row["frame_id"], row_scene(row), row_vehicle(row), float(row["r_task"] or 0.0))
        out.append(apply_record(dict(row), rec))
    return out


def dumps_row(row: Dict) -> str:
    missing = [k for k in ROW_KEYS if k not in row]
    if missing:
        raise TrajectoryFormatError(f"row is missing keys {missing}")
    return json.dumps({k: row[k] for k in ROW_KEYS}, allow_nan=False, separators=(",", ":"))


def write_rows(path: Union[str, Path], rows: Iterable[Dict]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_row(row) + "\n")
    os.replace(tmp, path)


class RowWriter:
    """Append rows to an open JSONL file (used for streaming during training)."""

    def __init__(self, path: Union[str, Path]):
        self._fh = open(path, "w", encoding="utf-8", newline="\n")

    def write(self, row: Dict) -> None:
        self._fh.write(dumps_row(row) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iter_rows(path: Union[str, Path]) -> Iterator[Dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TrajectoryFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            missing = [k for k in ROW_KEYS if k not in row]
            if missing:
                raise TrajectoryFormatError(f"{path}:{lineno}: missing keys {missing}")
            yield row


def read_rows(path: Union[str, Path]) -> List[Dict]:
    return list(iter_rows(path))
