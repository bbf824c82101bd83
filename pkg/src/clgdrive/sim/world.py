"""Deterministic 2D kinematic driving environment.

Action ``(steer, throttle_brake)`` in ``[-1, 1]^2``; steering maps to
``steer * 0.6`` rad, the second component to ``+3 m/s^2`` throttle or
``-8 m/s^2`` brake. Ego dynamics follow the kinematic bicycle model with a
2.5 m wheelbase.

The world frame is left-handed as in CARLA: with heading 0 along +x, +y is to
the vehicle's right, so a positive heading rate (positive steer) turns right
and negative lateral offsets lie left of the lane centre.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from ..embeddings import SceneDescriptor
from ..synthesis import DEFAULT_V_MAX, VehicleStateSnapshot
from .bev import DrivableRaster, render_bev
from .geometry import VEHICLE_LENGTH, boxes_overlap, wrap_angle
from .roadgraph import RoadGraph, Route, load_map, plan_route, project

WHEELBASE = 2.5
MAX_STEER = 0.6
MAX_ACCEL = 3.0
MAX_BRAKE = 8.0
TOP_SPEED = 20.0
N_WAYPOINTS = 15
GAP_HORIZON = 30.0
LANE_MATCH = 2.0
TRAFFIC_SPEED = 5.0
TRAFFIC_SLOW_GAP = 8.0
TRAFFIC_STOP_GAP = 3.0
SPAWN_SPACING = 10.0
COMPLETION_TOL = 1.0
HISTORY_WINDOW = 10

REASONS = ("collision", "off_lane", "stuck", "budget_done", "route_completed", "timeout", "none")


class ConfigurationError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n_traffic: int = 20
    episode_distance_budget: float = 3000.0
    stuck_speed_kmh: float = 1.0
    stuck_duration_s: float = 90.0
    deviation_limit: float = 3.0
    dt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_traffic < 0:
            raise ConfigurationError("n_traffic must be non-negative")
        for name in ("episode_distance_budget", "stuck_speed_kmh", "stuck_duration_s", "deviation_limit", "dt"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def stuck_steps(self) -> int:
        return int(round(self.stuck_duration_s / self.dt))


@dataclass
class EgoState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    steer_cmd: float = 0.0
    accel_cmd: float = 0.0


@dataclass
class Observation:
    bev_grid: Optional[np.ndarray]
    ego_features: np.ndarray
    waypoints: np.ndarray


@dataclass
class TerminationCounters:
    stuck_steps: int = 0
    distance_m: float = 0.0


@dataclass
class StepInfo:
    episode: int
    step: int
    time_s: float
    frame_id: str
    task_reward: float
    route_completed: bool
    route_completions: int
    distance_m: float
    total_distance_m: float
    route_progress_m: float
    route_length_m: float
    lateral_offset: float
    heading_error: float
    speed: float
    collision_speed_kmh: float
    vehicle: VehicleStateSnapshot


class StepResult(NamedTuple):
    observation: Observation
    scene: SceneDescriptor
    info: StepInfo
    terminated: bool
    reason: str


def bicycle_step(ego: EgoState, steer_cmd: float, accel_cmd: float, dt: float) -> EgoState:
    """One explicit-Euler kinematic bicycle update; speed never goes negative."""
    steer_cmd = min(max(float(steer_cmd), -1.0), 1.0)
    accel_cmd = min(max(float(accel_cmd), -1.0), 1.0)
    delta = steer_cmd * MAX_STEER
    accel = accel_cmd * (MAX_ACCEL if accel_cmd >= 0 else MAX_BRAKE)
    v = ego.speed
    x = ego.x + v * math.cos(ego.heading) * dt
    y = ego.y + v * math.sin(ego.heading) * dt
    heading = ego.heading + v / WHEELBASE * math.tan(delta) * dt
    speed = min(max(v + accel * dt, 0.0), TOP_SPEED)
    return EgoState(x, y, heading, speed, steer_cmd, accel_cmd)


def check_termination(collision: bool, lateral_offset: float, counters: TerminationCounters,
                      cfg: ScenarioConfig) -> Tuple[bool, str]:
    if collision:
        return True, "collision"
    if abs(lateral_offset) > cfg.deviation_limit:
        return True, "off_lane"
    if counters.stuck_steps >= cfg.stuck_steps:
        return True, "stuck"
    if counters.distance_m >= cfg.episode_distance_budget:
        return True, "budget_done"
    return False, "none"


class TrafficVehicle:
    """Lane follower on an ever-extending random route."""

    def __init__(self, points: np.ndarray, last_node: str, s: float, speed: float = 0.0,
                 hold_until: float = -math.inf, target_speed: float = TRAFFIC_SPEED):
        self.points = points
        self.last_node = last_node
        self._reindex()
        self.s = s
        self.speed = speed
        self.hold_until = hold_until
        self.target_speed = target_speed

    def _reindex(self):
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.cumlen = np.concatenate([[0.0], np.cumsum(seg)])

    def extend(self, graph: RoadGraph, rng: np.random.Generator, horizon: float = 60.0):
        while self.cumlen[-1] - self.s < horizon:
            choices = [p for p in graph.spawn_points if p != self.last_node]
            goal = choices[int(rng.integers(len(choices)))]
            route = plan_route(graph, self.last_node, goal)
            self.points = np.concatenate([self.points, route.waypoints[1:]])
            self.last_node = goal
            self._reindex()
        # drop consumed path so arrays stay small
        cut = int(np.searchsorted(self.cumlen, self.s - 20.0)) - 1
        if cut > 0:
            shift = self.cumlen[cut]
            self.points = self.points[cut:]
            self._reindex()
            self.s -= shift

    def at(self, s) -> np.ndarray:
        return np.stack([np.interp(s, self.cumlen, self.points[:, 0]),
                         np.interp(s, self.cumlen, self.points[:, 1])], axis=-1)

    @property
    def position(self) -> np.ndarray:
        return self.at(self.s)

    @property
    def heading(self) -> float:
        i = min(int(np.searchsorted(self.cumlen, self.s, side="right")) - 1, len(self.points) - 2)
        d = self.points[i + 1] - self.points[i]
        return math.atan2(d[1], d[0])


def _gap_along(points: np.ndarray, along: np.ndarray, others: np.ndarray) -> float:
    """Bumper gap to the first of ``others`` lying on the lookahead ``points``."""
    if len(others) == 0 or len(points) == 0:
        return math.inf
    d = np.linalg.norm(others[:, None, :] - points[None, :, :], axis=2)
    hit = d < LANE_MATCH
    if not hit.any():
        return math.inf
    first = np.where(hit.any(axis=0))[0][0]
    return max(0.0, float(along[first]) - VEHICLE_LENGTH)


class DrivingEnv:
    """Kinematic driving world with A* routes, regeneration, and gap-following traffic.

    With ``regenerate_routes=True`` a new route is planned each time the current
    one is completed (task reward 1 for that step) until the distance budget is
    spent. With ``False`` the episode ends as ``route_completed`` instead.
    """

    def __init__(self, graph: Optional[RoadGraph] = None, cfg: ScenarioConfig = ScenarioConfig(),
                 v_max: float = DEFAULT_V_MAX, regenerate_routes: bool = True,
                 max_steps: Optional[int] = None, render: bool = True):
        self.graph = graph if graph is not None else load_map()
        if len(self.graph.spawn_points) < 2:
            raise ConfigurationError("map needs at least two spawn points")
        self.cfg = cfg
        self.v_max = v_max
        self.regenerate_routes = regenerate_routes
        self.max_steps = max_steps
        self.render = render
        self.raster = DrivableRaster(self.graph) if render else None
        self.rng = np.random.default_rng(cfg.seed)
        self.episode = -1
        self._done = True
        self.traffic: List[TrafficVehicle] = []

    # -- episode control -------------------------------------------------
    def reset(self, seed: Optional[int] = None, route: Optional[Tuple[str, str]] = None) -> Observation:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.episode += 1
        if route is None:
            start, goal = self._random_pair()
        else:
            start, goal = route
        self.route = plan_route(self.graph, start, goal)
        wp = self.route.waypoints
        heading = float(self.route.headings[0]) if len(wp) > 1 else 0.0
        self.ego = EgoState(float(wp[0, 0]), float(wp[0, 1]), heading)
        self.route_index = 0
        self.progress = 0.0
        self.step_count = 0
        self.time_s = 0.0
        self.completions = 0
        self.counters = TerminationCounters()
        self.history: deque = deque([0.0], maxlen=HISTORY_WINDOW)
        self.lateral_offset = 0.0
        self.heading_error = 0.0
        self.traffic = []
        self._spawn_traffic(self.cfg.n_traffic)
        self._done = False
        return self._observe()

    def _random_pair(self) -> Tuple[str, str]:
        sp = self.graph.spawn_points
        i = int(self.rng.integers(len(sp)))
        j = int(self.rng.integers(len(sp) - 1))
        if j >= i:
            j += 1
        return sp[i], sp[j]

    def _spawn_traffic(self, n: int):
        occupied = [np.array([self.ego.x, self.ego.y])]
        sp = self.graph.spawn_points
        for _ in range(n):
            for _attempt in range(200):
                a = sp[int(self.rng.integers(len(sp)))]
                route = plan_route(self.graph, a, sp[int(self.rng.integers(len(sp)))])
                if route.length < 1.0:
                    continue
                s = float(self.rng.uniform(0.0, route.length))
                veh = TrafficVehicle(route.waypoints.copy(), route.goal, s)
                pos = veh.position
                if all(np.linalg.norm(pos - o) >= SPAWN_SPACING for o in occupied):
                    veh.extend(self.graph, self.rng)
                    self.traffic.append(veh)
                    occupied.append(pos)
                    break

    def place_vehicle(self, distance_ahead: float, hold_until: float = math.inf,
                      target_speed: float = TRAFFIC_SPEED) -> TrafficVehicle:
        """Put a (by default parked) vehicle on the ego route ahead of the ego."""
        veh = TrafficVehicle(self.route.waypoints.copy(), self.route.goal,
                             self.progress + distance_ahead, 0.0, hold_until, target_speed)
        veh.extend(self.graph, self.rng)
        self.traffic.append(veh)
        return veh

    # -- stepping ----------------------------------------------------------
    def step(self, action) -> StepResult:
        if self._done:
            raise UsageError("step() called on a terminated episode; call reset() first")
        dt = self.cfg.dt
        self._step_traffic(dt)
        self.ego = bicycle_step(self.ego, action[0], action[1], dt)
        self.step_count += 1
        self.time_s = self.step_count * dt
        pos = np.array([self.ego.x, self.ego.y])

        distance = 0.0
        task_reward = 0.0
        completed = False
        s, lat, tangent = self._track(pos)
        if s > self.progress:
            distance += s - self.progress
            self.progress = s
        terminal_route = False
        if self.progress >= self.route.length - COMPLETION_TOL:
            completed = True
            task_reward = 1.0
            self.completions += 1
            distance += self.route.length - self.progress
            if self.regenerate_routes:
                self._next_route()
                s, lat, tangent = self._track(pos)
                self.progress = max(s, 0.0)
                distance += self.progress
            else:
                self.progress = self.route.length
                terminal_route = True
        self.lateral_offset = lat
        self.heading_error = wrap_angle(self.ego.heading - tangent)
        self.history.append(lat)
        self.counters.distance_m += distance
        if self.ego.speed < self.cfg.stuck_speed_kmh / 3.6:
            self.counters.stuck_steps += 1
        else:
            self.counters.stuck_steps = 0

        collision = self._collides(pos)
        gap = self._ego_gap()
        scene = SceneDescriptor(collision, gap, lat, abs(lat) > self.graph.lane_width / 2)
        done, reason = check_termination(collision, lat, self.counters, self.cfg)
        if not done and terminal_route:
            done, reason = True, "route_completed"
        if not done and self.max_steps is not None and self.step_count >= self.max_steps:
            done, reason = True, "timeout"
        self._done = done

        vehicle = VehicleStateSnapshot(self.ego.speed, lat, self.heading_error,
                                       tuple(self.history), self.v_max)
        info = StepInfo(
            episode=self.episode, step=self.step_count, time_s=self.time_s,
            frame_id=f"{self.episode}:{self.step_count}", task_reward=task_reward,
            route_completed=completed, route_completions=self.completions,
            distance_m=distance, total_distance_m=self.counters.distance_m,
            route_progress_m=self.progress, route_length_m=self.route.length,
            lateral_offset=lat, heading_error=self.heading_error, speed=self.ego.speed,
            collision_speed_kmh=self.ego.speed * 3.6 if collision else 0.0, vehicle=vehicle)
        return StepResult(self._observe(), scene, info, done, reason)

    def _track(self, pos: np.ndarray):
        lo = max(0, self.route_index - 3)
        s, lat, tangent, idx = project(self.route, pos, lo, self.route_index + 12)
        self.route_index = idx
        return s, lat, tangent

    def _next_route(self):
        sp = [p for p in self.graph.spawn_points if p != self.route.goal]
        goal = sp[int(self.rng.integers(len(sp)))]
        self.route = plan_route(self.graph, self.route.goal, goal)
        self.route_index = 0

    def _step_traffic(self, dt: float):
        if not self.traffic:
            return
        ego_pos = np.array([[self.ego.x, self.ego.y]])
        positions = np.array([v.position for v in self.traffic])
        look = np.arange(1.0, 21.0)
        for i, veh in enumerate(self.traffic):
            if self.time_s < veh.hold_until:
                veh.speed = 0.0
                continue
            others = np.concatenate([ego_pos, np.delete(positions, i, axis=0)])
            gap = _gap_along(veh.at(veh.s + look), look, others)
            if gap < TRAFFIC_STOP_GAP:
                veh.speed = 0.0
            elif gap < TRAFFIC_SLOW_GAP:
                veh.speed = max(0.0, veh.speed - 4.0 * dt)
            else:
                veh.speed = min(veh.target_speed, veh.speed + 2.0 * dt)
            veh.s += veh.speed * dt
            veh.extend(self.graph, self.rng)

    def _collides(self, pos: np.ndarray) -> bool:
        for veh in self.traffic:
            p = veh.position
            if abs(p[0] - pos[0]) < 6.0 and abs(p[1] - pos[1]) < 6.0:
                if boxes_overlap(pos, self.ego.heading, p, veh.heading):
                    return True
        return False

    def _ego_gap(self) -> float:
        if not self.traffic:
            return math.inf
        along = np.arange(1.0, GAP_HORIZON + 1.0)
        s = np.minimum(self.progress + along, self.route.length)
        keep = self.progress + along <= self.route.length + 1e-9
        pts = np.stack([np.interp(s[keep], self.route.cumlen, self.route.waypoints[:, 0]),
                        np.interp(s[keep], self.route.cumlen, self.route.waypoints[:, 1])], axis=1)
        others = np.array([v.position for v in self.traffic])
        return _gap_along(pts, along[keep], others)

    def _observe(self) -> Observation:
        wp = self.route.waypoints
        ahead = wp[self.route_index + 1:self.route_index + 1 + N_WAYPOINTS]
        rel = np.zeros((N_WAYPOINTS, 2))
        if len(ahead):
            c, s = math.cos(self.ego.heading), math.sin(self.ego.heading)
            d = ahead - np.array([self.ego.x, self.ego.y])
            rel[:len(ahead), 0] = d[:, 0] * c + d[:, 1] * s
            rel[:len(ahead), 1] = -d[:, 0] * s + d[:, 1] * c
        ego_features = np.array([self.ego.steer_cmd, self.ego.accel_cmd, self.ego.speed])
        grid = None
        if self.render:
            s_ahead = np.arange(self.progress, min(self.progress + 40.0, self.route.length), 0.5)
            route_pts = np.stack([np.interp(s_ahead, self.route.cumlen, wp[:, 0]),
                                  np.interp(s_ahead, self.route.cumlen, wp[:, 1])], axis=1)
            vehicles = [(*v.position, v.heading) for v in self.traffic]
            grid = render_bev(self.raster, (self.ego.x, self.ego.y), self.ego.heading, vehicles, route_pts)
        return Observation(grid, ego_features, rel)
