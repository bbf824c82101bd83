"""Flatten an observation into the policy's input vector.

The BEV grid is block-averaged down to ``bev_size x bev_size`` cells per
channel (``bev_size=0`` drops it), then ego features and route waypoints are
appended. Speed is divided by ``v_max`` and waypoints by ``WAYPOINT_SCALE`` so
every input stays roughly within [-3, 3].
"""
from __future__ import annotations

import numpy as np

from .sim.bev import GRID
from .sim.world import N_WAYPOINTS, Observation

WAYPOINT_SCALE = 10.0
EGO_DIM = 3


def feature_dim(bev_size: int) -> int:
    return 4 * bev_size * bev_size + EGO_DIM + 2 * N_WAYPOINTS


def downsample_bev(grid: np.ndarray, size: int) -> np.ndarray:
    k = GRID // size
    return grid.reshape(size, k, size, k, grid.shape[-1]).mean(axis=(1, 3), dtype=np.float64)


def extract_features(obs: Observation, v_max: float, bev_size: int = 16) -> np.ndarray:
    ego = np.array([obs.ego_features[0], obs.ego_features[1], obs.ego_features[2] / v_max])
    wp = obs.waypoints.ravel() / WAYPOINT_SCALE
    if not bev_size:
        return np.concatenate([ego, wp])
    if obs.bev_grid is None:
        raise ValueError("observation has no BEV grid; build the environment with render=True or set bev_size=0")
    return np.concatenate([downsample_bev(obs.bev_grid, bev_size).ravel(), ego, wp])
