from __future__ import annotations

import math

import numpy as np

VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 2.0


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def _axes(heading: float):
    c, s = math.cos(heading), math.sin(heading)
    return np.array([c, s]), np.array([-s, c])


def _radius(axis, ux, uy, half_len, half_wid) -> float:
    return half_len * abs(float(np.dot(ux, axis))) + half_wid * abs(float(np.dot(uy, axis)))


def boxes_overlap(c1, h1: float, c2, h2: float,
                  length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH) -> bool:
    """Separating-axis test for two oriented rectangles of the same size."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    hl, hw = length / 2, width / 2
    a1, b1 = _axes(h1)
    a2, b2 = _axes(h2)
    d = c2 - c1
    for axis in (a1, b1, a2, b2):
        ra = _radius(axis, a1, b1, hl, hw)
        rb = _radius(axis, a2, b2, hl, hw)
        if abs(float(np.dot(d, axis))) > ra + rb:
            return False
    return True


def to_local(points: np.ndarray, origin, heading: float) -> np.ndarray:
    """World points into the frame at ``origin`` with x along ``heading``.

    The second coordinate is the rotated y axis (the vehicle's right side in
    the left-handed world frame).
    """
    c, s = math.cos(heading), math.sin(heading)
    d = np.asarray(points, dtype=np.float64) - origin
    return np.stack([d[..., 0] * c + d[..., 1] * s, -d[..., 0] * s + d[..., 1] * c], axis=-1)
