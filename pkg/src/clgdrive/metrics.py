"""Driving metrics from episode logs, plus the fixed-route evaluation harness.

Metric names follow the usual driving-benchmark abbreviations: AS average
speed (km/h), RC route completion, TD traveled distance (m), CS collision
speed (km/h), CR collision rate, ICT inter-collision time steps, DCF
collisions per km, TCF collisions per 1000 steps, SR success rate.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

MODES = ("train", "test")
FAILURE_REASONS = ("collision", "off_lane", "stuck", "timeout", "budget_done")


@dataclass(frozen=True)
class StepRecord:
    time_s: float
    speed_kmh: float
    distance_m: float
    collision: bool = False
    collision_speed_kmh: float = 0.0
    route_completions: int = 0
    lateral_offset: float = 0.0
    reward: float = 0.0
    route_progress_m: float = 0.0

    def __post_init__(self):
        if self.distance_m < 0:
            raise ValueError("distance increments must be non-negative")
        if not self.collision and self.collision_speed_kmh:
            raise ValueError("collision speed given for a step without a collision")


@dataclass
class EpisodeLog:
    steps: List[StepRecord]
    termination: str = "none"
    route_length_m: Optional[float] = None
    discounted_return: Optional[float] = None

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def distance_m(self) -> float:
        return math.fsum(s.distance_m for s in self.steps)

    @property
    def duration_s(self) -> float:
        return self.steps[-1].time_s if self.steps else 0.0

    @property
    def collision_steps(self) -> List[int]:
        """1-based step indices at which a collision was flagged."""
        return [i for i, s in enumerate(self.steps, 1) if s.collision]

    @property
    def completions(self) -> int:
        return self.steps[-1].route_completions if self.steps else 0

    @property
    def reached(self) -> bool:
        return self.termination == "route_completed"

    @property
    def completion_fraction(self) -> float:
        if self.reached:
            return 1.0
        if not self.route_length_m or not self.steps:
            return 0.0
        return min(1.0, max(0.0, self.steps[-1].route_progress_m / self.route_length_m))

    @classmethod
    def from_rows(cls, rows: Sequence[Dict]) -> "EpisodeLog":
        steps = [StepRecord(r["time_s"], r["speed_mps"] * 3.6, r["distance_m"], bool(r["collision"]),
                            r["collision_speed_kmh"], r["route_completions"], r["lateral_offset_m"],
                            0.0 if r["reward"] is None else r["reward"], r["route_progress_m"])
                 for r in rows]
        last = rows[-1] if rows else {}
        return cls(steps, last.get("reason", "none"), last.get("route_length_m"))


def split_episodes(rows: Iterable[Dict]) -> List[List[Dict]]:
    out: List[List[Dict]] = []
    current = None
    for r in rows:
        if current is None or r["episode"] != current:
            out.append([])
            current = r["episode"]
        out[-1].append(r)
    return out


@dataclass
class MetricReport:
    mode: str
    episodes: int
    as_kmh: float
    rc: float
    td_m: float
    cs_kmh: float
    cr_fraction: float
    ict_steps: float
    dcf_per_km: float
    tcf_per_1000steps: float
    sr_fraction: Optional[float]
    collisions: int
    total_km: float
    total_steps: int

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, indent=2)


def inter_collision_gaps(log: EpisodeLog) -> List[int]:
    """Step gaps between consecutive collisions; a lone collision counts from step 0."""
    steps = log.collision_steps
    if len(steps) == 1:
        return [steps[0]]
    return [b - a for a, b in zip(steps, steps[1:])]


def compute_metrics(logs: Sequence[EpisodeLog], mode: str = "train") -> MetricReport:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    logs = list(logs)
    if not logs:
        raise ValueError("compute_metrics needs at least one episode log")
    total_m = math.fsum(l.distance_m for l in logs)
    total_s = math.fsum(l.duration_s for l in logs)
    total_steps = sum(l.n_steps for l in logs)
    speeds = [s.collision_speed_kmh for l in logs for s in l.steps if s.collision]
    collisions = len(speeds)
    gaps = [g for l in logs for g in inter_collision_gaps(l)]
    total_km = total_m / 1000.0
    if mode == "train":
        rc = float(np.mean([l.completions for l in logs]))
    else:
        rc = float(np.mean([l.completion_fraction for l in logs]))
    return MetricReport(
        mode=mode,
        episodes=len(logs),
        as_kmh=total_m / total_s * 3.6 if total_s > 0 else 0.0,
        rc=rc,
        td_m=total_m / len(logs),
        cs_kmh=float(np.mean(speeds)) if speeds else 0.0,
        cr_fraction=sum(1 for l in logs if l.collision_steps) / len(logs),
        ict_steps=float(np.mean(gaps)) if gaps else 0.0,
        dcf_per_km=collisions / total_km if total_km > 0 else 0.0,
        tcf_per_1000steps=1000.0 * collisions / total_steps if total_steps else 0.0,
        sr_fraction=sum(1 for l in logs if l.reached) / len(logs) if mode == "test" else None,
        collisions=collisions,
        total_km=total_km,
        total_steps=total_steps,
    )


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    total, scale = 0.0, 1.0
    for r in rewards:
        total += scale * r
        scale *= gamma
    return total


def load_routes(path: Union[str, Path, None] = None) -> List[Tuple[str, str]]:
    if path is None:
        text = resources.files("clgdrive.data").joinpath("test_routes.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    routes = [tuple(r) for r in doc["routes"]]
    for r in routes:
        if len(r) != 2:
            raise ValueError(f"route entry {r!r} is not a start/goal pair")
    return routes


def evaluate_policy(policy: Callable[[np.ndarray], np.ndarray], features: Callable, env_factory: Callable,
                    routes: Sequence[Tuple[str, str]], seed: int = 0, stack=None, gamma: float = 0.99):
    """Roll ``policy`` once along each route and score the episodes in test mode.

    ``env_factory()`` must build an environment that ends episodes at the
    destination. With a reward stack, every row is labeled and each log carries
    its discounted return. Returns ``(report, logs, rows_per_episode)``.
    """
    from .trajectory import make_row

    logs, all_rows = [], []
    env = env_factory()
    for i, route in enumerate(routes):
        obs = env.reset(seed=seed + i, route=tuple(route))
        rows, rewards = [], []
        while True:
            action = np.asarray(policy(features(obs)), dtype=np.float64)
            res = env.step(action)
            rec = None
            if stack is not None:
                rec = stack.label(res.info.frame_id, res.scene, res.info.vehicle, res.info.task_reward)
                rewards.append(rec.reward)
            rows.append(make_row(res, action, rec, env.ego))
            obs = res.observation
            if res.terminated:
                break
        log = EpisodeLog.from_rows(rows)
        if stack is not None:
            log.discounted_return = discounted_return(rewards, gamma)
        logs.append(log)
        all_rows.append(rows)
    return compute_metrics(logs, "test"), logs, all_rows
