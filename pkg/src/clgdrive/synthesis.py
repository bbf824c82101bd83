"""Multiplicative synthesis of the semantic score with vehicle-state factors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

from .rewards import SemanticScore

DEFAULT_V_MAX = 8.33  # 30 km/h


@dataclass(frozen=True)
class SynthesisConfig:
    v_max: float = DEFAULT_V_MAX
    rho: float = 1.0
    center_limit: float = 3.0
    angle_limit: float = math.pi / 2
    stability_rate: float = 4.0
    stability_window: int = 10

    def __post_init__(self):
        if self.v_max <= 0 or self.rho <= 0:
            raise ValueError("v_max and rho must be positive")
        if self.center_limit <= 0 or self.angle_limit <= 0 or self.stability_window < 1:
            raise ValueError("synthesis limits must be positive")


@dataclass(frozen=True)
class VehicleStateSnapshot:
    speed: float
    lateral_offset: float
    heading_error: float
    lateral_offset_history: Tuple[float, ...] = ()
    v_max: float = DEFAULT_V_MAX


@dataclass(frozen=True)
class SynthesisBreakdown:
    r_speed: float
    f_center: float
    f_angle: float
    f_stability: float
    r_synthesis: float
    v_target: float


def target_speed(normalized_clg: float, v_max: float) -> float:
    return normalized_clg * v_max


def speed_alignment(v: float, v_target: float, v_max: float) -> float:
    v = min(max(v, 0.0), v_max)
    return max(0.0, 1.0 - abs(v - v_target) / v_max)


def center_factor(lateral_offset: float, limit: float = 3.0) -> float:
    return max(0.0, 1.0 - abs(lateral_offset) / limit)


def angle_factor(heading_error: float, limit: float = math.pi / 2) -> float:
    return max(0.0, 1.0 - abs(heading_error) / limit)


def stability_factor(history: Sequence[float], rate: float = 4.0) -> float:
    """``exp(-rate * sigma)`` of the lateral-offset window; 1 below two samples."""
    n = len(history)
    if n < 2:
        return 1.0
    mean = math.fsum(history) / n
    sigma = math.sqrt(math.fsum((x - mean) ** 2 for x in history) / n)
    return math.exp(-rate * sigma)


def synthesize(score: SemanticScore, vs: VehicleStateSnapshot,
               cfg: SynthesisConfig = SynthesisConfig()) -> SynthesisBreakdown:
    v_target = target_speed(score.normalized, vs.v_max)
    r_speed = speed_alignment(vs.speed, v_target, vs.v_max)
    f_center = center_factor(vs.lateral_offset, cfg.center_limit)
    f_angle = angle_factor(vs.heading_error, cfg.angle_limit)
    window = vs.lateral_offset_history[-cfg.stability_window:]
    f_stab = stability_factor(window, cfg.stability_rate)
    return SynthesisBreakdown(r_speed, f_center, f_angle, f_stab,
                              r_speed * f_center * f_angle * f_stab, v_target)


def final_reward(r_task: float, r_synthesis: float, rho: float = 1.0) -> float:
    if rho <= 0:
        raise ValueError("rho must be positive")
    return r_task + rho * r_synthesis
