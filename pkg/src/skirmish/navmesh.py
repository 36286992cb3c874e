"""Convex-cell navigation mesh: build, query, and the path-following controller.

Free space (map bounds shrunk by the agent radius, minus obstacles inflated by
the same radius) is rasterized on a uniform grid and greedily merged into
axis-aligned rectangles - convex cells with exact integer adjacency.  Path
queries run A* over portal sample points between adjacent cells, then tighten
the polyline by greedy shortcutting (both endpoints of a shortcut must see
each other through walkable cells only).

The controller turns "request a path" actions into per-tick movement:
requests are honored only on slice-boundary ticks, and following ends when
the goal is reached, the opponent becomes visible, or the per-path step
budget runs out.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .actions import PathType
from .mapdef import MapDef
from .world import AGENT, CombatantState, WorldState, world_los

log = logging.getLogger(__name__)

REACH_TOLERANCE = 0.5  # meters: goal counts as reached within this distance
_EPS = 1e-9


class NavmeshError(RuntimeError):
    """Raised when a map has no walkable space to mesh."""


@dataclass(frozen=True)
class NavCell:
    cell_id: int
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def centroid(self) -> geometry.Vec2:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, px: float, py: float, eps: float = _EPS) -> bool:
        return (
            self.x0 - eps <= px <= self.x1 + eps
            and self.y0 - eps <= py <= self.y1 + eps
        )

    def closest_point(self, px: float, py: float) -> geometry.Vec2:
        return (min(max(px, self.x0), self.x1), min(max(py, self.y0), self.y1))


@dataclass(frozen=True)
class Portal:
    cell_a: int
    cell_b: int
    p0: geometry.Vec2
    p1: geometry.Vec2
    midpoint: geometry.Vec2
    cost: float  # centroid-to-centroid traversal cost, > 0


@dataclass(frozen=True)
class NavPath:
    waypoints: tuple[geometry.Vec2, ...]
    total_cost: float
    goal_snapshot: geometry.Vec2


class NavMesh:
    """Immutable after build; safe to share across environment instances."""

    def __init__(
        self,
        cells: list[NavCell],
        portals: list[Portal],
        nodes: list[geometry.Vec2],
        node_cells: list[tuple[int, int]],
        agent_radius: float,
    ):
        self.cells = cells
        self.portals = portals
        self.nodes = nodes
        self.node_cells = node_cells
        self.agent_radius = agent_radius
        self.cell_nodes: dict[int, list[int]] = {c.cell_id: [] for c in cells}
        for nid, (ca, cb) in enumerate(node_cells):
            self.cell_nodes[ca].append(nid)
            self.cell_nodes[cb].append(nid)
        self.adjacency: dict[int, list[int]] = {c.cell_id: [] for c in cells}
        for pid, portal in enumerate(portals):
            self.adjacency[portal.cell_a].append(pid)
            self.adjacency[portal.cell_b].append(pid)
        self._areas = np.array([c.area for c in cells])

    @property
    def walkable_area(self) -> float:
        return float(self._areas.sum())

    def node_neighbors(self, nid: int) -> list[int]:
        ca, cb = self.node_cells[nid]
        out = []
        for cell in (ca, cb):
            for other in self.cell_nodes[cell]:
                if other != nid:
                    out.append(other)
        return out


def rasterize_walkable(
    m: MapDef, agent_radius: float, grid: float
) -> tuple[np.ndarray, float, float]:
    """Conservative occupancy grid of free space.

    A cell is walkable only if its rectangle does not intersect any obstacle
    inflated by the agent radius; the lattice exactly tiles the inner bounds
    (map shrunk by the radius).  Returns (walkable[j, i], cell_w, cell_h);
    cell (i, j) spans [r + i*cw, r + (i+1)*cw] x [r + j*ch, r + (j+1)*ch].
    """
    r = agent_radius
    inner_w = m.width - 2.0 * r
    inner_h = m.height - 2.0 * r
    if inner_w <= 0 or inner_h <= 0:
        raise NavmeshError("degenerate map: bounds smaller than twice the agent radius")
    cols = max(1, math.ceil(inner_w / grid - 1e-9))
    rows = max(1, math.ceil(inner_h / grid - 1e-9))
    cw = inner_w / cols
    ch = inner_h / rows
    walkable = np.ones((rows, cols), dtype=bool)
    for obs in m.obstacles:
        poly = geometry.inflate_convex(obs.vertices, r)
        xs = [p[0] for p in poly]
        ys = [p[1] for p in poly]
        i0 = max(0, int((min(xs) - r) / cw) - 1)
        i1 = min(cols - 1, int((max(xs) - r) / cw) + 1)
        j0 = max(0, int((min(ys) - r) / ch) - 1)
        j1 = min(rows - 1, int((max(ys) - r) / ch) + 1)
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                if not walkable[j, i]:
                    continue
                clipped = geometry.clip_polygon_to_rect(
                    poly, r + i * cw, r + j * ch, r + (i + 1) * cw, r + (j + 1) * ch
                )
                if len(clipped) >= 3 and abs(geometry.poly_area(clipped)) > 1e-9:
                    walkable[j, i] = False
    return walkable, cw, ch


def build_navmesh(m: MapDef, agent_radius: float | None = None, grid: float = 1.0) -> NavMesh:
    """Rasterize free space and merge it into rectangular convex cells."""
    r = m.walkable_margin if agent_radius is None else agent_radius
    walkable, cw, ch = rasterize_walkable(m, r, grid)
    rows, cols = walkable.shape

    def cx(i: int) -> float:
        return r + i * cw

    def cy(j: int) -> float:
        return r + j * ch

    if not walkable.any():
        raise NavmeshError("degenerate map: no walkable cell")

    # Greedy merge into maximal rectangles (integer grid coordinates).
    visited = np.zeros_like(walkable)
    rects: list[tuple[int, int, int, int]] = []  # (i0, j0, i1, j1), exclusive ends
    for j in range(rows):
        for i in range(cols):
            if visited[j, i] or not walkable[j, i]:
                continue
            i1 = i
            while i1 + 1 < cols and walkable[j, i1 + 1] and not visited[j, i1 + 1]:
                i1 += 1
            j1 = j
            while j1 + 1 < rows and walkable[j1 + 1, i : i1 + 1].all() and not visited[
                j1 + 1, i : i1 + 1
            ].any():
                j1 += 1
            visited[j : j1 + 1, i : i1 + 1] = True
            rects.append((i, j, i1 + 1, j1 + 1))

    cells = [
        NavCell(cell_id=k, x0=cx(i0), y0=cy(j0), x1=cx(i1), y1=cy(j1))
        for k, (i0, j0, i1, j1) in enumerate(rects)
    ]

    # Adjacency from exact integer edge sharing.
    portals: list[Portal] = []
    nodes: list[geometry.Vec2] = []
    node_cells: list[tuple[int, int]] = []
    sub_len = max(2.0, 2.0 * grid)

    def add_portal(a: int, b: int, p0: geometry.Vec2, p1: geometry.Vec2) -> None:
        mid = (0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1]))
        cost = geometry.dist(cells[a].centroid, cells[b].centroid)
        portals.append(Portal(a, b, p0, p1, mid, max(cost, 1e-6)))
        length = geometry.dist(p0, p1)
        k = max(1, math.ceil(length / sub_len))
        for s in range(k):
            t = (s + 0.5) / k
            nodes.append((p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])))
            node_cells.append((a, b))

    for a in range(len(rects)):
        ai0, aj0, ai1, aj1 = rects[a]
        for b in range(a + 1, len(rects)):
            bi0, bj0, bi1, bj1 = rects[b]
            if ai1 == bi0 or bi1 == ai0:  # vertical shared edge
                jlo, jhi = max(aj0, bj0), min(aj1, bj1)
                if jhi > jlo:
                    x = cx(ai1 if ai1 == bi0 else ai0)
                    add_portal(a, b, (x, cy(jlo)), (x, cy(jhi)))
            elif aj1 == bj0 or bj1 == aj0:  # horizontal shared edge
                ilo, ihi = max(ai0, bi0), min(ai1, bi1)
                if ihi > ilo:
                    y = cy(aj1 if aj1 == bj0 else aj0)
                    add_portal(a, b, (cx(ilo), y), (cx(ihi), y))

    return NavMesh(cells, portals, nodes, node_cells, agent_radius=r)


def locate_cell(mesh: NavMesh, p: geometry.Vec2) -> int | None:
    """Id of the cell containing p; boundary ties go to the lowest id."""
    for cell in mesh.cells:  # ascending id
        if cell.contains(p[0], p[1]):
            return cell.cell_id
    return None


def snap_to_walkable(mesh: NavMesh, p: geometry.Vec2) -> geometry.Vec2:
    """Nearest point of the walkable cell union (p itself when walkable)."""
    best = None
    best_d = math.inf
    for cell in mesh.cells:
        q = cell.closest_point(p[0], p[1])
        d = geometry.dist(p, q)
        if d < best_d - _EPS:
            best_d = d
            best = q
    return best if best is not None else p


def segment_walkable(mesh: NavMesh, p: geometry.Vec2, q: geometry.Vec2) -> bool:
    """True when segment pq lies entirely inside the union of nav cells."""
    length = geometry.dist(p, q)
    if length < _EPS:
        return locate_cell(mesh, p) is not None
    dx, dy = q[0] - p[0], q[1] - p[1]
    lo = min(p[0], q[0]) - _EPS
    hi = max(p[0], q[0]) + _EPS
    lo_y = min(p[1], q[1]) - _EPS
    hi_y = max(p[1], q[1]) + _EPS
    intervals: list[tuple[float, float]] = []
    for cell in mesh.cells:
        if cell.x1 < lo or cell.x0 > hi or cell.y1 < lo_y or cell.y0 > hi_y:
            continue
        t0, t1 = 0.0, 1.0
        ok = True
        for (delta, start, lo_b, hi_b) in (
            (dx, p[0], cell.x0, cell.x1),
            (dy, p[1], cell.y0, cell.y1),
        ):
            if abs(delta) < 1e-15:
                if start < lo_b - _EPS or start > hi_b + _EPS:
                    ok = False
                    break
            else:
                ta = (lo_b - start) / delta
                tb = (hi_b - start) / delta
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
                if t0 > t1 + 1e-12:
                    ok = False
                    break
        if ok and t1 >= t0:
            intervals.append((t0, t1))
    if not intervals:
        return False
    intervals.sort()
    tol = 1e-7 / max(length, 1.0)
    cover = 0.0
    for (t0, t1) in intervals:
        if t0 > cover + tol:
            return False
        cover = max(cover, t1)
        if cover >= 1.0 - tol:
            return True
    return cover >= 1.0 - tol


def _shortcut(mesh: NavMesh, waypoints: list[geometry.Vec2]) -> list[geometry.Vec2]:
    if len(waypoints) <= 2:
        return waypoints
    out = [waypoints[0]]
    i = 0
    n = len(waypoints)
    while i < n - 1:
        j = n - 1
        while j > i + 1 and not segment_walkable(mesh, waypoints[i], waypoints[j]):
            j -= 1
        out.append(waypoints[j])
        i = j
    return out


def find_path(
    mesh: NavMesh, start: geometry.Vec2, goal: geometry.Vec2, smooth: bool = True
) -> NavPath | None:
    """A* over the portal-point graph; None when the goal is unreachable.

    An unwalkable goal is snapped to the nearest walkable point first; the
    snapped point is recorded as the path's goal_snapshot.
    """
    start = (float(start[0]), float(start[1]))
    start_cell = locate_cell(mesh, start)
    if start_cell is None:
        start = snap_to_walkable(mesh, start)
        start_cell = locate_cell(mesh, start)
        if start_cell is None:
            return None
    goal_snap = (float(goal[0]), float(goal[1]))
    if locate_cell(mesh, goal_snap) is None:
        goal_snap = snap_to_walkable(mesh, goal_snap)
    goal_cell = locate_cell(mesh, goal_snap)
    if goal_cell is None:
        return None

    if geometry.dist(start, goal_snap) < _EPS:
        return NavPath(waypoints=(start,), total_cost=0.0, goal_snapshot=goal_snap)
    if start_cell == goal_cell:
        cost = geometry.dist(start, goal_snap)
        return NavPath(waypoints=(start, goal_snap), total_cost=cost, goal_snapshot=goal_snap)

    # Node ids: 0..K-1 portal points, K = start, K+1 = goal.
    k = len(mesh.nodes)
    sid, gid = k, k + 1

    def pos(nid: int) -> geometry.Vec2:
        if nid == sid:
            return start
        if nid == gid:
            return goal_snap
        return mesh.nodes[nid]

    def neighbors(nid: int):
        if nid == sid:
            cells = (start_cell,)
        elif nid == gid:
            cells = (goal_cell,)
        else:
            cells = mesh.node_cells[nid]
        seen = set()
        for cell in cells:
            for other in mesh.cell_nodes[cell]:
                if other != nid and other not in seen:
                    seen.add(other)
                    yield other
            if cell == goal_cell and nid != gid:
                yield gid
            if cell == start_cell and nid != sid:
                yield sid

    g_score = {sid: 0.0}
    parent: dict[int, int] = {}
    # Heap entries carry the node id as a deterministic tiebreaker.
    open_heap: list[tuple[float, int]] = [(geometry.dist(start, goal_snap), sid)]
    closed: set[int] = set()
    found = False
    while open_heap:
        _, nid = heapq.heappop(open_heap)
        if nid in closed:
            continue
        if nid == gid:
            found = True
            break
        closed.add(nid)
        p = pos(nid)
        for other in neighbors(nid):
            if other in closed:
                continue
            cand = g_score[nid] + geometry.dist(p, pos(other))
            if cand < g_score.get(other, math.inf) - 1e-12:
                g_score[other] = cand
                parent[other] = nid
                f = cand + geometry.dist(pos(other), goal_snap)
                heapq.heappush(open_heap, (f, other))
    if not found:
        return None

    waypoints: list[geometry.Vec2] = []
    nid = gid
    while True:
        waypoints.append(pos(nid))
        if nid == sid:
            break
        nid = parent[nid]
    waypoints.reverse()
    if smooth:
        waypoints = _shortcut(mesh, waypoints)
    cost = geometry.polyline_length(waypoints)
    return NavPath(waypoints=tuple(waypoints), total_cost=cost, goal_snapshot=goal_snap)


def advance_along_path(
    state: CombatantState, path: NavPath, step: float
) -> tuple[CombatantState, NavPath, bool]:
    """Move up to ``step`` meters along the polyline, consuming waypoints.

    The returned path starts at the new position so its total_cost is the
    remaining length.  ``reached`` is true within REACH_TOLERANCE of the goal.
    """
    pos = (state.pose.x, state.pose.y)
    wps = list(path.waypoints)
    # Drop a leading waypoint identical to the current position.
    while wps and geometry.dist(pos, wps[0]) < _EPS:
        wps.pop(0)
    remaining = step
    while remaining > _EPS and wps:
        d = geometry.dist(pos, wps[0])
        if d <= remaining:
            pos = wps[0]
            wps.pop(0)
            remaining -= d
        else:
            t = remaining / d
            pos = (pos[0] + (wps[0][0] - pos[0]) * t, pos[1] + (wps[0][1] - pos[1]) * t)
            remaining = 0.0
    new_state = replace(state, pose=replace(state.pose, x=pos[0], y=pos[1]))
    new_waypoints = (pos, *wps)
    new_path = NavPath(
        waypoints=new_waypoints,
        total_cost=geometry.polyline_length(new_waypoints),
        goal_snapshot=path.goal_snapshot,
    )
    reached = geometry.dist(pos, path.goal_snapshot) <= REACH_TOLERANCE
    return new_state, new_path, reached


@dataclass
class NavController:
    """Time-sliced path-following state machine for one combatant."""

    mesh: NavMesh
    slice_period: int = 10
    nav_step_limit: int = 50
    move_step: float = 1.0
    min_goal_distance: float = 15.0
    side: str = AGENT
    mode: str = "inactive"  # "inactive" | "following"
    path: NavPath | None = None
    initial_cost: float = 0.0
    steps_used: int = 0
    pending_request: bool = False
    replan_count: int = 0
    # Exploration goals are drawn from this rect first (the episode's
    # engagement region); map-wide cells are the fallback pool.
    home_rect: tuple[float, float, float, float] | None = None

    @property
    def following(self) -> bool:
        return self.mode == "following"

    def progress(self) -> float:
        """Fraction of the planned path already covered, in [0, 1]."""
        if self.path is None or self.initial_cost <= 0.0:
            return 0.0
        return min(1.0, max(0.0, 1.0 - self.path.total_cost / self.initial_cost))

    def fallback_goal(
        self, position: geometry.Vec2, rng: np.random.Generator | None
    ) -> geometry.Vec2:
        """Exploration target when no opponent position is known.

        Prefers cells inside the home rect (the opponent spawned there too),
        at least min_goal_distance away; falls back to any far cell.
        """
        centroids = [c.centroid for c in self.mesh.cells]
        dists = [geometry.dist(position, c) for c in centroids]
        candidates: list[int] = []
        if self.home_rect is not None:
            x0, y0, x1, y1 = self.home_rect
            candidates = [
                i
                for i, c in enumerate(centroids)
                if x0 <= c[0] <= x1 and y0 <= c[1] <= y1 and dists[i] >= 8.0
            ]
        if not candidates:
            candidates = [i for i, d in enumerate(dists) if d >= self.min_goal_distance]
        if not candidates:
            return centroids[int(np.argmax(dists))]
        if rng is None:
            far = max(candidates, key=lambda i: dists[i])
            return centroids[far]
        areas = np.array([self.mesh.cells[i].area for i in candidates])
        pick = rng.choice(len(candidates), p=areas / areas.sum())
        return centroids[candidates[int(pick)]]


def controller_step(
    ctrl: NavController,
    world: WorldState,
    path_type: PathType,
    tick: int,
    goal: geometry.Vec2 | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[NavController, geometry.Vec2 | None, bool]:
    """Process one tick of navigation control.

    Returns (ctrl, movement override target or None, navmesh-mask flag).
    New-path requests are honored only when ``tick`` is a slice boundary;
    off-slice requests are remembered and honored at the next boundary.
    """
    me = world.combatant(ctrl.side)
    slice_ok = tick % ctrl.slice_period == 0

    if ctrl.mode == "inactive":
        wants_new = path_type == PathType.NAV_NEW or ctrl.pending_request
        if wants_new and slice_ok:
            ctrl.pending_request = False
            target = goal if goal is not None else ctrl.fallback_goal(
                (me.pose.x, me.pose.y), rng
            )
            path = find_path(ctrl.mesh, (me.pose.x, me.pose.y), target)
            if path is not None:
                ctrl.path = path
                ctrl.initial_cost = path.total_cost
                ctrl.steps_used = 0
                ctrl.replan_count += 1
                ctrl.mode = "following"
            else:
                log.debug("nav request to unreachable goal %s ignored", target)
        elif path_type == PathType.NAV_NEW:
            ctrl.pending_request = True
        elif path_type == PathType.NAV_KEEP:
            if ctrl.path is not None and len(ctrl.path.waypoints) > 0:
                ctrl.mode = "following"
            else:
                log.debug("nav_keep with no stored path degrades to atomic")

    override = None
    if ctrl.mode == "following":
        if world_los(world, ctrl.side):
            ctrl.mode = "inactive"  # encountered the enemy; path kept for nav_keep
        elif ctrl.steps_used >= ctrl.nav_step_limit:
            ctrl.mode = "inactive"  # per-path time budget exhausted
        else:
            new_state, new_path, reached = advance_along_path(me, ctrl.path, ctrl.move_step)
            ctrl.path = new_path
            ctrl.steps_used += 1
            override = (new_state.pose.x, new_state.pose.y)
            if reached:
                ctrl.mode = "inactive"
                ctrl.path = None
    return ctrl, override, ctrl.mode == "following"


def mesh_debug_dump(mesh: NavMesh, path: NavPath | None = None) -> dict:
    """JSON-friendly dump of cells, portals, and optionally a path."""
    out = {
        "cells": [
            {"id": c.cell_id, "x0": c.x0, "y0": c.y0, "x1": c.x1, "y1": c.y1}
            for c in mesh.cells
        ],
        "portals": [
            {
                "cells": [p.cell_a, p.cell_b],
                "p0": list(p.p0),
                "p1": list(p.p1),
                "midpoint": list(p.midpoint),
                "cost": p.cost,
            }
            for p in mesh.portals
        ],
        "walkable_area": mesh.walkable_area,
    }
    if path is not None:
        out["path"] = {
            "waypoints": [list(w) for w in path.waypoints],
            "total_cost": path.total_cost,
            "goal": list(path.goal_snapshot),
        }
    return out
