"""Policies for recorded rollouts: random, trained checkpoints, and scripted drivers.

The scripted drivers read the simulator state directly (route, gap to the
vehicle ahead) and recreate two reward-trace scenarios:

``approach-and-stop``
    A vehicle is parked 40 m ahead on a straight route and pulls away after
    20 s. The ego cruises at 6 m/s, brakes to a stop behind it, and once the
    gap opens beyond 15 m follows at 4.5 m/s.
``side-pass``
    A vehicle is parked 30 m ahead for the whole episode. The ego steers onto
    a path 2.5 m left of the lane centre to pass it, then returns.
"""
from __future__ import annotations

import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from .features import extract_features
from .sac import SACAgent
from .sim.geometry import to_local
from .sim.world import MAX_ACCEL, MAX_BRAKE, MAX_STEER, WHEELBASE, DrivingEnv

STRAIGHT_ROUTE = ("B020", "B140")


def pure_pursuit(env: DrivingEnv, offset: float = 0.0) -> float:
    """Steering command toward a route point ahead, shifted ``offset`` m to the right."""
    route, ego = env.route, env.ego
    lookahead = max(4.0, 1.5 * ego.speed)
    s = min(env.progress + lookahead, route.length)
    target = np.array([np.interp(s, route.cumlen, route.waypoints[:, 0]),
                       np.interp(s, route.cumlen, route.waypoints[:, 1])])
    i = min(int(np.searchsorted(route.cumlen, s, side="right")) - 1, len(route.headings) - 1)
    h = route.headings[max(i, 0)] if len(route.headings) else ego.heading
    target = target + offset * np.array([-math.sin(h), math.cos(h)])
    fwd, right = to_local(target, np.array([ego.x, ego.y]), ego.heading)
    dist = math.hypot(fwd, right)
    if dist < 1e-6:
        return 0.0
    delta = math.atan2(2.0 * WHEELBASE * right / dist, dist)
    return float(np.clip(delta / MAX_STEER, -1.0, 1.0))


def speed_command(v: float, v_des: float, gain: float = 1.0) -> float:
    """Throttle/brake in [-1, 1] that closes the speed error within about one second."""
    err = v_des - v
    scale = MAX_ACCEL if err >= 0 else MAX_BRAKE
    return float(np.clip(gain * err / scale * 3.0, -1.0, 1.0))


class Policy:
    route: Optional[Tuple[str, str]] = None

    def setup(self, env: DrivingEnv) -> None:
        """Called right after ``env.reset``; may add scenario vehicles."""

    def act(self, env: DrivingEnv, obs) -> np.ndarray:
        raise NotImplementedError


class RandomPolicy(Policy):
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def act(self, env, obs):
        return self.rng.uniform(-1.0, 1.0, size=2)


class CheckpointPolicy(Policy):
    """Deterministic ``tanh(mean)`` actions of a saved agent."""

    def __init__(self, agent: SACAgent):
        self.agent = agent
        self.bev_size = int(agent.metadata.get("bev_size", 16))

    def act(self, env, obs):
        return self.agent.act(extract_features(obs, env.v_max, self.bev_size), deterministic=True)


class ApproachAndStop(Policy):
    route = STRAIGHT_ROUTE

    def __init__(self, lead_distance: float = 40.0, hold_s: float = 20.0, cruise: float = 6.0,
                 resume_speed: float = 4.5, resume_gap: float = 15.0, stop_gap: float = 3.0):
        self.lead_distance, self.hold_s = lead_distance, hold_s
        self.cruise, self.resume_speed = cruise, resume_speed
        self.resume_gap, self.stop_gap = resume_gap, stop_gap

    def setup(self, env):
        env.place_vehicle(self.lead_distance, hold_until=self.hold_s)
        self.stopped = False

    def act(self, env, obs):
        gap = env._ego_gap()
        v = env.ego.speed
        if not self.stopped:
            v_des = min(self.cruise, max(0.0, 0.5 * (gap - self.stop_gap)))
            if v < 0.05 and gap < self.resume_gap:
                self.stopped = True
        if self.stopped:
            v_des = self.resume_speed if gap > self.resume_gap else 0.0
        return np.array([pure_pursuit(env, 0.0), speed_command(v, v_des)])


class SidePass(Policy):
    route = STRAIGHT_ROUTE

    def __init__(self, lead_distance: float = 30.0, offset: float = -2.5, cruise: float = 5.0,
                 trigger_gap: float = 20.0, clear_after: float = 8.0):
        self.lead_distance, self.offset, self.cruise = lead_distance, offset, cruise
        self.trigger_gap, self.clear_after = trigger_gap, clear_after

    def setup(self, env):
        self.lead = env.place_vehicle(self.lead_distance)
        self.lead_s = env.progress + self.lead_distance

    def act(self, env, obs):
        ahead = self.lead_s - env.progress
        passing = -self.clear_after < ahead < self.trigger_gap + 5.0
        return np.array([pure_pursuit(env, self.offset if passing else 0.0),
                         speed_command(env.ego.speed, self.cruise)])


SCRIPTED = {"approach-and-stop": ApproachAndStop, "side-pass": SidePass}


def make_policy(spec: str, seed: int = 0) -> Policy:
    """``random``, ``scripted:<name>`` or ``checkpoint:<path>``."""
    if spec == "random":
        return RandomPolicy(seed)
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        if arg not in SCRIPTED:
            raise ValueError(f"unknown scripted policy {arg!r}; choose from {sorted(SCRIPTED)}")
        return SCRIPTED[arg]()
    if kind == "checkpoint" and arg:
        return CheckpointPolicy(SACAgent.load(arg))
    raise ValueError(f"policy must be random, scripted:<name> or checkpoint:<path>, not {spec!r}")


def rollout(env: DrivingEnv, policy: Policy, episodes: int = 1, seed: int = 0, stack=None) -> List[Dict]:
    """Trajectory rows for ``episodes`` episodes; rewards are labeled when ``stack`` is given."""
    from .trajectory import make_row

    rows: List[Dict] = []
    for ep in range(episodes):
        obs = env.reset(seed=seed + ep, route=policy.route)
        policy.setup(env)
        while True:
            action = np.asarray(policy.act(env, obs), dtype=np.float64)
            res = env.step(action)
            rec = None
            if stack is not None:
                rec = stack.label(res.info.frame_id, res.scene, res.info.vehicle, res.info.task_reward)
            rows.append(make_row(res, action, rec, env.ego))
            obs = res.observation
            if res.terminated:
                break
    return rows
