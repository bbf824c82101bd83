"""Ego-centric bird's-eye-view occupancy raster (64 x 64 x 4 at 0.5 m)."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import ndimage

from .geometry import VEHICLE_LENGTH, VEHICLE_WIDTH, to_local
from .roadgraph import RoadGraph, fillet_polyline

GRID = 64
CELL = 0.5
CH_DRIVABLE, CH_EGO, CH_VEHICLES, CH_ROUTE = range(4)

# cell centres in the ego frame (forward, right): row 0 is furthest ahead, column 0 furthest left
_rows, _cols = np.meshgrid(np.arange(GRID), np.arange(GRID), indexing="ij")
CELL_FWD = (GRID / 2 - _rows - 0.5) * CELL
CELL_RIGHT = (_cols - GRID / 2 + 0.5) * CELL
_EGO_MASK = (np.abs(CELL_FWD) <= VEHICLE_LENGTH / 2) & (np.abs(CELL_RIGHT) <= VEHICLE_WIDTH / 2)


class DrivableRaster:
    """World-frame drivable mask covering every lane and junction turn."""

    def __init__(self, graph: RoadGraph, res: float = CELL, margin: float = 30.0):
        pts = np.array(list(graph.nodes.values()))
        self.origin = pts.min(axis=0) - margin
        extent = pts.max(axis=0) + margin - self.origin
        self.res = res
        self.shape = (int(math.ceil(extent[0] / res)), int(math.ceil(extent[1] / res)))
        centre = np.zeros(self.shape, dtype=bool)
        for path in _lane_paths(graph):
            idx = np.floor((path - self.origin) / res).astype(int)
            centre[idx[:, 0], idx[:, 1]] = True
        dist = ndimage.distance_transform_edt(~centre) * res
        self.mask = dist <= graph.lane_width / 2

    def sample(self, xy: np.ndarray) -> np.ndarray:
        idx = np.floor((xy - self.origin) / self.res).astype(int)
        inside = (idx[..., 0] >= 0) & (idx[..., 0] < self.shape[0]) & (idx[..., 1] >= 0) & (idx[..., 1] < self.shape[1])
        out = np.zeros(xy.shape[:-1], dtype=bool)
        out[inside] = self.mask[idx[..., 0][inside], idx[..., 1][inside]]
        return out


def _lane_paths(graph: RoadGraph):
    incoming = {n: [] for n in graph.nodes}
    for (a, b) in graph.edges:
        incoming[b].append(a)
    for e in graph.edges.values():
        yield fillet_polyline(e.polyline, 0.0)
    for node, preds in incoming.items():
        for a in preds:
            for b in graph.successors(node):
                raw = np.concatenate([graph.edges[(a, node)].polyline, graph.edges[(node, b)].polyline[1:]])
                yield fillet_polyline(raw, graph.corner_radius)


def render_bev(raster: DrivableRaster, ego_xy, ego_heading: float,
               vehicles: Sequence, route_points: np.ndarray) -> np.ndarray:
    """Rasterize drivable area, ego, other vehicles, and upcoming route.

    ``vehicles`` holds ``(x, y, heading)`` triples; ``route_points`` are world
    points of the route ahead. Pure function of its inputs.
    """
    grid = np.zeros((GRID, GRID, 4), dtype=np.uint8)
    c, s = math.cos(ego_heading), math.sin(ego_heading)
    wx = ego_xy[0] + CELL_FWD * c - CELL_RIGHT * s
    wy = ego_xy[1] + CELL_FWD * s + CELL_RIGHT * c
    world = np.stack([wx, wy], axis=-1)
    grid[..., CH_DRIVABLE] = raster.sample(world)
    grid[..., CH_EGO] = _EGO_MASK
    reach = GRID * CELL * 0.75 + VEHICLE_LENGTH
    occ = np.zeros((GRID, GRID), dtype=bool)
    for vx, vy, vh in vehicles:
        if abs(vx - ego_xy[0]) > reach or abs(vy - ego_xy[1]) > reach:
            continue
        local = to_local(world, np.array([vx, vy]), vh)
        occ |= (np.abs(local[..., 0]) <= VEHICLE_LENGTH / 2) & (np.abs(local[..., 1]) <= VEHICLE_WIDTH / 2)
    grid[..., CH_VEHICLES] = occ
    if len(route_points):
        local = to_local(route_points, np.asarray(ego_xy, dtype=np.float64), ego_heading)
        r = np.floor(GRID / 2 - local[:, 0] / CELL).astype(int)
        col = np.floor(GRID / 2 + local[:, 1] / CELL).astype(int)
        ok = (r >= 0) & (r < GRID) & (col >= 0) & (col < GRID)
        grid[r[ok], col[ok], CH_ROUTE] = 1
    return grid
