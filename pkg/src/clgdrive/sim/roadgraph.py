"""Road network, A* routing, and route geometry (fillets, 2 m waypoints)."""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

WAYPOINT_SPACING = 2.0
_FINE_STEP = 0.25


class PlanningError(RuntimeError):
    pass


class MapFormatError(ValueError):
    pass


@dataclass
class Edge:
    src: str
    dst: str
    polyline: np.ndarray

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1)))


@dataclass
class RoadGraph:
    nodes: Dict[str, Tuple[float, float]]
    edges: Dict[Tuple[str, str], Edge]
    spawn_points: List[str]
    lane_width: float = 3.5
    corner_radius: float = 8.0
    name: str = "unnamed"
    _adj: Dict[str, List[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._adj = {n: [] for n in self.nodes}
        for (a, b), e in self.edges.items():
            if a not in self.nodes or b not in self.nodes:
                raise MapFormatError(f"edge {a}->{b} references an unknown node")
            if not (np.allclose(e.polyline[0], self.nodes[a]) and np.allclose(e.polyline[-1], self.nodes[b])):
                raise MapFormatError(f"edge {a}->{b} polyline endpoints do not match its nodes")
            self._adj[a].append(b)
        for s in self.spawn_points:
            if s not in self.nodes:
                raise MapFormatError(f"spawn point {s!r} is not a node")

    def successors(self, node: str) -> List[str]:
        return self._adj[node]

    def position(self, node: str) -> np.ndarray:
        return np.asarray(self.nodes[node], dtype=np.float64)

    def is_strongly_connected(self, subset: Optional[Sequence[str]] = None) -> bool:
        subset = list(self.spawn_points if subset is None else subset)
        for s in subset:
            seen = {s}
            stack = [s]
            while stack:
                for nxt in self._adj[stack.pop()]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            if not set(subset) <= seen:
                return False
        return True


def load_map(path: Union[str, Path, None] = None) -> RoadGraph:
    """Load a map file; ``None`` loads the shipped desk loop."""
    if path is None:
        text = resources.files("clgdrive.data").joinpath("desk_loop.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    try:
        nodes = {k: (float(v[0]), float(v[1])) for k, v in doc["nodes"].items()}
        edges = {}
        for e in doc["edges"]:
            edges[(e["from"], e["to"])] = Edge(e["from"], e["to"], np.asarray(e["polyline"], dtype=np.float64))
        graph = RoadGraph(nodes, edges, list(doc["spawn_points"]),
                          float(doc.get("lane_width", 3.5)), float(doc.get("corner_radius", 8.0)),
                          doc.get("name", "unnamed"))
    except (KeyError, TypeError, IndexError) as exc:
        raise MapFormatError(f"malformed map file: {exc}") from exc
    if len(graph.spawn_points) >= 2 and not graph.is_strongly_connected():
        raise MapFormatError("map is not strongly connected over its spawn points")
    return graph


def astar(graph: RoadGraph, start: str, goal: str) -> Tuple[List[str], float]:
    """Shortest node path under polyline-length costs, straight-line heuristic."""
    for n in (start, goal):
        if n not in graph.nodes:
            raise PlanningError(f"unknown node {n!r}")
    goal_xy = graph.position(goal)

    def h(n: str) -> float:
        return float(np.linalg.norm(graph.position(n) - goal_xy))

    best = {start: 0.0}
    parent: Dict[str, Optional[str]] = {start: None}
    tie = 0
    frontier = [(h(start), tie, start)]
    closed = set()
    while frontier:
        _, _, node = heapq.heappop(frontier)
        if node == goal:
            path = [node]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1], best[goal]
        if node in closed:
            continue
        closed.add(node)
        for nxt in graph.successors(node):
            g = best[node] + graph.edges[(node, nxt)].length
            if g < best.get(nxt, math.inf) - 1e-12:
                best[nxt] = g
                parent[nxt] = node
                tie += 1
                heapq.heappush(frontier, (g + h(nxt), tie, nxt))
    raise PlanningError(f"goal {goal!r} is unreachable from {start!r}")


def fillet_polyline(points: np.ndarray, radius: float) -> np.ndarray:
    """Densely sampled polyline with circular fillets at interior vertices."""
    pts = [points[0]]
    for p in points[1:]:
        if np.linalg.norm(p - pts[-1]) > 1e-9:
            pts.append(p)
    pts = np.asarray(pts)
    if len(pts) < 2:
        return pts.copy()
    out = [pts[0]]
    cursor = pts[0]
    for i in range(1, len(pts) - 1):
        a, b, c = pts[i - 1], pts[i], pts[i + 1]
        d1, d2 = b - a, c - b
        l1, l2 = np.linalg.norm(d1), np.linalg.norm(d2)
        u1, u2 = d1 / l1, d2 / l2
        turn = math.atan2(u1[0] * u2[1] - u1[1] * u2[0], float(np.dot(u1, u2)))
        if abs(turn) < 1e-6 or radius <= 0:
            out.extend(_segment(cursor, b))
            cursor = b
            continue
        t = min(radius * math.tan(abs(turn) / 2), 0.5 * l1, 0.5 * l2)
        r = t / math.tan(abs(turn) / 2)
        p_in, p_out = b - u1 * t, b + u2 * t
        out.extend(_segment(cursor, p_in))
        sign = 1.0 if turn > 0 else -1.0
        normal = np.array([-u1[1], u1[0]]) * sign
        center = p_in + normal * r
        a0 = math.atan2(p_in[1] - center[1], p_in[0] - center[0])
        n = max(2, int(math.ceil(abs(turn) * r / _FINE_STEP)))
        for k in range(1, n + 1):
            ang = a0 + sign * abs(turn) * k / n
            out.append(center + r * np.array([math.cos(ang), math.sin(ang)]))
        cursor = p_out
    out.extend(_segment(cursor, pts[-1]))
    return np.asarray(out)


def _segment(p: np.ndarray, q: np.ndarray) -> List[np.ndarray]:
    length = float(np.linalg.norm(q - p))
    n = max(1, int(math.ceil(length / _FINE_STEP)))
    return [p + (q - p) * (k / n) for k in range(1, n + 1)]


def resample(path: np.ndarray, spacing: float) -> np.ndarray:
    """Points every ``spacing`` meters of arc length, always ending at the last point."""
    if len(path) < 2:
        return path.copy()
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = np.arange(0.0, total, spacing)
    if total - targets[-1] > 1e-6:
        targets = np.append(targets, total)
    else:
        targets[-1] = total
    x = np.interp(targets, s, path[:, 0])
    y = np.interp(targets, s, path[:, 1])
    return np.stack([x, y], axis=1)


@dataclass
class Route:
    nodes: List[str]
    waypoints: np.ndarray
    cost: float

    def __post_init__(self):
        seg = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1) if len(self.waypoints) > 1 else np.zeros(0)
        self.cumlen = np.concatenate([[0.0], np.cumsum(seg)])
        d = np.diff(self.waypoints, axis=0)
        self.headings = np.arctan2(d[:, 1], d[:, 0]) if len(d) else np.zeros(0)

    @property
    def length(self) -> float:
        return float(self.cumlen[-1])

    @property
    def start(self) -> str:
        return self.nodes[0]

    @property
    def goal(self) -> str:
        return self.nodes[-1]


def plan_route(graph: RoadGraph, start: str, goal: str, spacing: float = WAYPOINT_SPACING) -> Route:
    """A* node path densified to ``spacing``-meter waypoints along filleted lanes."""
    nodes, cost = astar(graph, start, goal)
    if len(nodes) == 1:
        return Route(nodes, graph.position(start)[None, :].copy(), 0.0)
    raw = [graph.edges[(nodes[0], nodes[1])].polyline[0]]
    for a, b in zip(nodes, nodes[1:]):
        raw.extend(graph.edges[(a, b)].polyline[1:])
    fine = fillet_polyline(np.asarray(raw), graph.corner_radius)
    return Route(nodes, resample(fine, spacing), cost)


def project(route: Route, pos: np.ndarray, lo: int = 0, hi: Optional[int] = None):
    """Closest point on the route polyline within segments ``[lo, hi)``.

    Returns ``(arc_length, signed_lateral, tangent_heading, segment_index)``.
    In the left-handed world frame a positive cross product means the point is
    right of the direction of travel, so lateral is negative on the left.
    """
    wp = route.waypoints
    nseg = len(wp) - 1
    if nseg < 1:
        d = pos - wp[0]
        return 0.0, float(np.hypot(d[0], d[1])), 0.0, 0
    hi = nseg if hi is None else min(hi, nseg)
    lo = max(0, min(lo, hi - 1))
    a = wp[lo:hi]
    ab = wp[lo + 1:hi + 1] - a
    ap = pos - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / L2, 0.0, 1.0)
    closest = a + ab * t[:, None]
    dist2 = np.sum((pos - closest) ** 2, axis=1)
    k = int(np.argmin(dist2))
    i = lo + k
    seg_len = math.sqrt(L2[k])
    cross = ab[k, 0] * ap[k, 1] - ab[k, 1] * ap[k, 0]
    lateral = cross / seg_len
    # outside an interior vertex the lateral distance is the full Euclidean
    # distance; before the start and past the goal the end segments extend
    before_start = i == 0 and t[k] <= 0.0
    past_goal = i == nseg - 1 and t[k] >= 1.0
    if (t[k] <= 0.0 or t[k] >= 1.0) and not (before_start or past_goal):
        lateral = math.copysign(math.sqrt(dist2[k]), lateral if lateral != 0 else 1.0)
    s = route.cumlen[i] + t[k] * seg_len
    return float(s), float(lateral), float(route.headings[i]), i
