"""Deterministic 2.5D combat world.

Movement is planar; obstacles are convex vertical prisms rooted at the ground
with a per-obstacle height.  Combatants are vertical cylinders whose eye and
silhouette heights are set by posture, split into legs/torso/head bands for
hit resolution and visibility.  Rays are parameterized by horizontal distance
with a vertical slope, so height-vs-cover interactions (shooting over a low
wall, a prone target hiding behind it) fall out of one intersection routine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Sequence
from weakref import WeakKeyDictionary

import numpy as np

from .mapdef import MapDef

AGENT = "agent"
OPPONENT = "opponent"

STAND_EYE = 1.6
POSTURE_EYE = {0: STAND_EYE, 1: 1.0, 2: 0.4, 3: 1.8}  # stand, crouch, prone, jump
BODY_RADIUS = 0.35
# Band boundaries at stand scale: legs [0,0.8), torso [0.8,1.4), head [1.4,1.7).
BAND_BOUNDS_STAND = (0.0, 0.8, 1.4, 1.7)
BARREL_YAW_RANGE = (-30.0, 30.0)
BARREL_PITCH_RANGE = (-20.0, 15.0)
LEAN_OFFSET = 0.3  # lateral eye shift when leaning, meters
MOVE_MARGIN = 0.01  # contact margin kept between a combatant and a wall, meters
_EPS = 1e-9


class Posture(IntEnum):
    STAND = 0
    CROUCH = 1
    PRONE = 2
    JUMP = 3


class Lean(IntEnum):
    NONE = 0
    LEFT = 1
    RIGHT = 2


class RayKind(IntEnum):
    NONE = 0
    OBSTACLE = 1
    BODY_HEAD = 2
    BODY_TORSO = 3
    BODY_LEGS = 4


BODY_KINDS = (RayKind.BODY_HEAD, RayKind.BODY_TORSO, RayKind.BODY_LEGS)


class Outcome(IntEnum):
    ONGOING = 0
    AGENT_WIN = 1
    AGENT_LOSE = 2
    DRAW = 3


class SpawnError(RuntimeError):
    """Raised when no covered spawn pair can be found in a region."""


# ---------------------------------------------------------------------------
# Events


@dataclass(frozen=True)
class ShotFired:
    shooter: str
    blind: bool = False


@dataclass(frozen=True)
class Hit:
    shooter: str
    target: str
    part: str  # "head" | "torso" | "legs"
    damage: float


@dataclass(frozen=True)
class Death:
    who: str


@dataclass(frozen=True)
class Collision:
    who: str


@dataclass(frozen=True)
class PostureChange:
    who: str


# ---------------------------------------------------------------------------
# State types


@dataclass
class Pose:
    x: float
    y: float
    z: float = STAND_EYE  # eye height; kept in sync with posture
    yaw: float = 0.0  # degrees in [0, 360)
    pitch: float = 0.0  # degrees in [-89, 89]


@dataclass
class CombatantState:
    pose: Pose
    health: float = 100.0
    posture: Posture = Posture.STAND
    lean: Lean = Lean.NONE
    barrel_yaw_offset: float = 0.0
    barrel_pitch_offset: float = 0.0
    ammo: int = 30
    fire_cooldown: int = 0
    alive: bool = True
    last_impact_offset: tuple[float, float] | None = None
    collision_streak: int = 0
    posture_change_ticks: tuple[int, ...] = ()

    @property
    def eye_z(self) -> float:
        return POSTURE_EYE[int(self.posture)]

    @property
    def silhouette_scale(self) -> float:
        return self.eye_z / STAND_EYE

    def band_bounds(self) -> tuple[float, float, float, float]:
        s = self.silhouette_scale
        return tuple(b * s for b in BAND_BOUNDS_STAND)  # type: ignore[return-value]

    def band_center(self, kind: RayKind) -> tuple[float, float, float]:
        """World-space center of a body band (used as an aim probe point)."""
        b = self.band_bounds()
        if kind == RayKind.BODY_LEGS:
            z = 0.5 * (b[0] + b[1])
        elif kind == RayKind.BODY_TORSO:
            z = 0.5 * (b[1] + b[2])
        else:
            z = 0.5 * (b[2] + b[3])
        return (self.pose.x, self.pose.y, z)

    def eye_position(self) -> tuple[float, float, float]:
        """Eye point including the lateral lean offset."""
        x, y = self.pose.x, self.pose.y
        if self.lean != Lean.NONE:
            rad = math.radians(self.pose.yaw)
            side = 1.0 if self.lean == Lean.LEFT else -1.0
            x += -math.sin(rad) * LEAN_OFFSET * side
            y += math.cos(rad) * LEAN_OFFSET * side
        return (x, y, self.eye_z)

    def set_posture(self, posture: Posture) -> None:
        self.posture = posture
        self.pose.z = self.eye_z


@dataclass(frozen=True)
class RayHit:
    distance: float | None
    normal: tuple[float, float]
    kind: RayKind

    @property
    def is_body(self) -> bool:
        return self.kind in BODY_KINDS


MISS = RayHit(distance=None, normal=(0.0, 0.0), kind=RayKind.NONE)


DEFAULT_SIGHT_RANGE = 45.0  # desk scale: ~1/5 of paper-map engagement distances


@dataclass(frozen=True)
class CombatConfig:
    """Gameplay constants not fixed by the simulation rules themselves."""

    step_walk: float = 0.5
    step_run: float = 1.0
    step_sprint: float = 1.5
    fire_cooldown: int = 3
    reload_ticks: int = 10
    magazine: int = 30
    damage_head: float = 60.0
    damage_torso: float = 30.0
    damage_legs: float = 15.0
    weapon_range: float = 120.0
    sight_range: float = DEFAULT_SIGHT_RANGE
    sigma_ratio: float = 0.5  # dispersion sigma as a fraction of the confidence radius
    ads_sigma_ratio: float = 0.35
    blind_fire_distance: float = 30.0


@dataclass
class Commands:
    """Physics-level command bundle consumed by ``step`` for one combatant."""

    fire: bool = False
    yaw_delta: float = 0.0
    pitch_delta: float = 0.0
    move_step: float = 0.0  # meters for this tick (already resolved from move type)
    motion_dir_deg: float | None = None  # absolute direction; None = no translation
    posture: Posture = Posture.STAND
    lean: Lean = Lean.NONE
    reload: bool = False
    ads: bool = False
    nav_target: tuple[float, float] | None = None  # overrides atomic motion


@dataclass
class WorldState:
    map: MapDef
    agent: CombatantState
    opponent: CombatantState
    cfg: CombatConfig = field(default_factory=CombatConfig)
    tick: int = 0
    seed: int = 0
    spawn_region: int = 0
    rng: np.random.Generator = None  # type: ignore[assignment]
    events: list = field(default_factory=list)
    last_seen: dict = field(default_factory=lambda: {AGENT: None, OPPONENT: None})

    def __post_init__(self) -> None:
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    def combatant(self, side: str) -> CombatantState:
        return self.agent if side == AGENT else self.opponent

    def other(self, side: str) -> CombatantState:
        return self.opponent if side == AGENT else self.agent


# ---------------------------------------------------------------------------
# Static geometry and the batched raycaster


class StaticGeometry:
    """Obstacle edges flattened into arrays for vectorized ray queries."""

    def __init__(self, m: MapDef):
        ax, ay, bx, by, hh = [], [], [], [], []
        for obs in m.obstacles:
            n = len(obs.vertices)
            for i in range(n):
                x0, y0 = obs.vertices[i]
                x1, y1 = obs.vertices[(i + 1) % n]
                ax.append(x0)
                ay.append(y0)
                bx.append(x1)
                by.append(y1)
                hh.append(obs.height)
        self.ax = np.asarray(ax, dtype=np.float64)
        self.ay = np.asarray(ay, dtype=np.float64)
        self.ex = np.asarray(bx, dtype=np.float64) - self.ax
        self.ey = np.asarray(by, dtype=np.float64) - self.ay
        self.height = np.asarray(hh, dtype=np.float64)
        self.n_edges = len(ax)


_GEOMETRY_CACHE: "WeakKeyDictionary[MapDef, StaticGeometry]" = WeakKeyDictionary()


def get_geometry(m: MapDef) -> StaticGeometry:
    geom = _GEOMETRY_CACHE.get(m)
    if geom is None:
        geom = StaticGeometry(m)
        _GEOMETRY_CACHE[m] = geom
    return geom


def raycast_batch(
    geom: StaticGeometry,
    origin: np.ndarray,  # (3,) shared origin
    dir_x: np.ndarray,
    dir_y: np.ndarray,  # (N,) unit horizontal direction
    tan_pitch: np.ndarray,  # (N,) vertical slope per horizontal meter
    max_range: float,  # 3D meters
    bodies: Sequence[CombatantState] = (),
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Nearest hit per ray.

    Returns (distance3d, kind, normal_xy, hit_height): distance is np.inf for
    misses; kind uses RayKind codes; hit_height is the obstacle height or the
    body silhouette top at the hit (0 for misses).
    """
    n = dir_x.shape[0]
    sec = np.sqrt(1.0 + tan_pitch * tan_pitch)  # 3D length per horizontal meter
    t_max = max_range / sec  # per-ray horizontal range
    best_t = np.full(n, np.inf)
    best_kind = np.zeros(n, dtype=np.int64)
    best_nx = np.zeros(n)
    best_ny = np.zeros(n)
    best_h = np.zeros(n)

    ox, oy, oz = float(origin[0]), float(origin[1]), float(origin[2])

    if geom.n_edges > 0:
        # Ray/segment intersection: o + t*u = a + s*e with t in horizontal meters.
        u_x = dir_x[:, None]
        u_y = dir_y[:, None]
        amo_x = geom.ax[None, :] - ox
        amo_y = geom.ay[None, :] - oy
        denom = u_x * geom.ey[None, :] - u_y * geom.ex[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (amo_x * geom.ey[None, :] - amo_y * geom.ex[None, :]) / denom
            s = (amo_x * u_y - amo_y * u_x) / denom
            z_at = oz + t * tan_pitch[:, None]
        valid = (
            (np.abs(denom) > 1e-14)
            & (t > _EPS)
            & (s >= 0.0)
            & (s <= 1.0)
            & (z_at <= geom.height[None, :])
            & (t <= t_max[:, None])
        )
        t_masked = np.where(valid, t, np.inf)
        idx = np.argmin(t_masked, axis=1)
        rows = np.arange(n)
        t_edge = t_masked[rows, idx]
        hit = t_edge < best_t
        if np.any(hit):
            e_x = geom.ex[idx]
            e_y = geom.ey[idx]
            elen = np.hypot(e_x, e_y)
            elen[elen == 0.0] = 1.0
            nx = e_y / elen
            ny = -e_x / elen
            # Orient the normal against the ray.
            flip = nx * dir_x + ny * dir_y > 0.0
            nx = np.where(flip, -nx, nx)
            ny = np.where(flip, -ny, ny)
            best_t = np.where(hit, t_edge, best_t)
            best_kind = np.where(hit, RayKind.OBSTACLE.value, best_kind)
            best_nx = np.where(hit, nx, best_nx)
            best_ny = np.where(hit, ny, best_ny)
            best_h = np.where(hit, geom.height[idx], best_h)

    for body in bodies:
        if not body.alive:
            continue
        cx, cy = body.pose.x, body.pose.y
        ocx, ocy = ox - cx, oy - cy
        b = 2.0 * (dir_x * ocx + dir_y * ocy)
        c0 = ocx * ocx + ocy * ocy - BODY_RADIUS * BODY_RADIUS
        disc = b * b - 4.0 * c0
        ok = disc > 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        l1 = (-b - sq) / 2.0
        l2 = (-b + sq) / 2.0
        l1 = np.maximum(l1, _EPS)
        ok &= l2 > _EPS
        bounds = body.band_bounds()
        band_kinds = (RayKind.BODY_LEGS, RayKind.BODY_TORSO, RayKind.BODY_HEAD)
        flat = np.abs(tan_pitch) < 1e-12
        body_t = np.full(n, np.inf)
        body_kind = np.zeros(n, dtype=np.int64)
        for k in range(3):
            z_lo, z_hi = bounds[k], bounds[k + 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                la = (z_lo - oz) / tan_pitch
                lb = (z_hi - oz) / tan_pitch
            lo_band = np.minimum(la, lb)
            hi_band = np.maximum(la, lb)
            in_flat = (oz >= z_lo) & (oz <= z_hi)
            lo = np.where(flat, np.where(in_flat, l1, np.inf), np.maximum(l1, lo_band))
            hi = np.where(flat, np.where(in_flat, l2, -np.inf), np.minimum(l2, hi_band))
            cand = np.where(ok & (hi >= lo) & (lo <= t_max), lo, np.inf)
            better = cand < body_t
            body_t = np.where(better, cand, body_t)
            body_kind = np.where(better, band_kinds[k].value, body_kind)
        hit = body_t < best_t
        if np.any(hit):
            safe_t = np.where(hit, body_t, 0.0)
            px = ox + safe_t * dir_x - cx
            py = oy + safe_t * dir_y - cy
            norm = np.hypot(px, py)
            norm[norm == 0.0] = 1.0
            best_nx = np.where(hit, px / norm, best_nx)
            best_ny = np.where(hit, py / norm, best_ny)
            best_kind = np.where(hit, body_kind, best_kind)
            best_h = np.where(hit, bounds[3], best_h)
            best_t = np.where(hit, body_t, best_t)

    dist3d = np.where(np.isinf(best_t), np.inf, best_t * sec)
    normal = np.stack([best_nx, best_ny], axis=1)
    return dist3d, best_kind, normal, best_h


def raycast(
    m: MapDef,
    combatants: Sequence[CombatantState],
    origin: tuple[float, float, float],
    dir_yaw: float,
    dir_pitch: float,
    max_range: float,
) -> RayHit:
    """Single-ray query against obstacle walls and combatant body cylinders."""
    yaw = math.radians(dir_yaw)
    pitch = math.radians(dir_pitch)
    geom = get_geometry(m)
    dist, kind, normal, _ = raycast_batch(
        geom,
        np.asarray(origin, dtype=np.float64),
        np.array([math.cos(yaw)]),
        np.array([math.sin(yaw)]),
        np.array([math.tan(pitch)]),
        max_range,
        bodies=combatants,
    )
    if not np.isfinite(dist[0]):
        return MISS
    return RayHit(
        distance=float(dist[0]),
        normal=(float(normal[0, 0]), float(normal[0, 1])),
        kind=RayKind(int(kind[0])),
    )


def _probe_bands(
    world: WorldState, shooter: CombatantState, target: CombatantState
) -> dict[RayKind, tuple[bool, tuple[float, float, float], float]]:
    """Cast one ray to each body-band center of ``target``.

    Returns per band: (ray reached that exact band, band center, 3D distance
    from the shooter's eye to the band center).
    """
    eye = shooter.eye_position()
    geom = get_geometry(world.map)
    dxs, dys, tps, dists, centers = [], [], [], [], []
    for kind in (RayKind.BODY_TORSO, RayKind.BODY_HEAD, RayKind.BODY_LEGS):
        cx, cy, cz = target.band_center(kind)
        dx, dy, dz = cx - eye[0], cy - eye[1], cz - eye[2]
        horiz = math.hypot(dx, dy)
        if horiz < 1e-9:
            horiz = 1e-9
        dxs.append(dx / horiz)
        dys.append(dy / horiz)
        tps.append(dz / horiz)
        dists.append(math.sqrt(dx * dx + dy * dy + dz * dz))
        centers.append((cx, cy, cz))
    dist, kind_arr, _, _ = raycast_batch(
        geom,
        np.asarray(eye),
        np.asarray(dxs),
        np.asarray(dys),
        np.asarray(tps),
        world.cfg.sight_range,
        bodies=[target],
    )
    out = {}
    order = (RayKind.BODY_TORSO, RayKind.BODY_HEAD, RayKind.BODY_LEGS)
    for i, probe_kind in enumerate(order):
        reached = int(kind_arr[i]) == int(probe_kind)
        out[probe_kind] = (reached, centers[i], dists[i])
    return out


def visible_body_kinds(world: WorldState, side: str) -> list[RayKind]:
    """Body bands of the *other* combatant visible from ``side``'s eye."""
    shooter = world.combatant(side)
    target = world.other(side)
    if not (shooter.alive and target.alive):
        return []
    probes = _probe_bands(world, shooter, target)
    return [k for k, (reached, _, _) in probes.items() if reached]


def line_of_sight(
    m: MapDef,
    a: CombatantState,
    b: CombatantState,
    eye_to_eye: bool = False,
    max_range: float = DEFAULT_SIGHT_RANGE,
) -> bool:
    """True when any eye-to-body-band ray from ``a`` reaches ``b``'s body.

    ``eye_to_eye`` checks only the single eye-to-eye ray (test helper).
    """
    if not (a.alive and b.alive):
        return False
    geom = get_geometry(m)
    eye = a.eye_position()
    if eye_to_eye:
        targets = [(b.pose.x, b.pose.y, b.eye_z)]
    else:
        targets = [b.band_center(k) for k in (RayKind.BODY_TORSO, RayKind.BODY_HEAD, RayKind.BODY_LEGS)]
    dxs, dys, tps = [], [], []
    for (cx, cy, cz) in targets:
        dx, dy, dz = cx - eye[0], cy - eye[1], cz - eye[2]
        horiz = math.hypot(dx, dy)
        if horiz < 1e-9:
            horiz = 1e-9
        dxs.append(dx / horiz)
        dys.append(dy / horiz)
        tps.append(dz / horiz)
    dist, kinds, _, _ = raycast_batch(
        geom,
        np.asarray(eye),
        np.asarray(dxs),
        np.asarray(dys),
        np.asarray(tps),
        max_range,
        bodies=[b],
    )
    return any(int(k) in (int(x) for x in BODY_KINDS) for k in kinds)


def world_los(world: WorldState, side: str) -> bool:
    return line_of_sight(
        world.map,
        world.combatant(side),
        world.other(side),
        max_range=world.cfg.sight_range,
    )


# ---------------------------------------------------------------------------
# Movement


def _collision_edges(m: MapDef) -> list[tuple[float, float, float, float]]:
    edges = []
    for obs in m.obstacles:
        n = len(obs.vertices)
        for i in range(n):
            x0, y0 = obs.vertices[i]
            x1, y1 = obs.vertices[(i + 1) % n]
            edges.append((x0, y0, x1, y1))
    # Map boundary walls (movement only; rays pass freely out of bounds).
    edges.append((0.0, 0.0, m.width, 0.0))
    edges.append((m.width, 0.0, m.width, m.height))
    edges.append((m.width, m.height, 0.0, m.height))
    edges.append((0.0, m.height, 0.0, 0.0))
    return edges


_EDGE_CACHE: "WeakKeyDictionary[MapDef, list]" = WeakKeyDictionary()


def _get_collision_edges(m: MapDef) -> list[tuple[float, float, float, float]]:
    edges = _EDGE_CACHE.get(m)
    if edges is None:
        edges = _collision_edges(m)
        _EDGE_CACHE[m] = edges
    return edges


def _first_hit(
    edges: Iterable[tuple[float, float, float, float]],
    px: float,
    py: float,
    dx: float,
    dy: float,
    step: float,
) -> tuple[float, tuple[float, float] | None]:
    """Earliest intersection distance of the motion segment with any edge."""
    best_t = step
    best_edge = None
    for (x0, y0, x1, y1) in edges:
        ex, ey = x1 - x0, y1 - y0
        denom = dx * ey - dy * ex
        if abs(denom) < 1e-14:
            continue
        amx, amy = x0 - px, y0 - py
        t = (amx * ey - amy * ex) / denom
        s = (amx * dy - amy * dx) / denom
        if _EPS < t <= best_t and -1e-12 <= s <= 1.0 + 1e-12:
            best_t = t
            best_edge = (ex, ey)
    return best_t, best_edge


def move_with_slide(
    m: MapDef, px: float, py: float, direction_deg: float, step: float
) -> tuple[float, float, bool]:
    """Advance a point, stopping at walls and sliding along them.

    Returns (x, y, collided).  Positions never end up inside an obstacle:
    contact keeps a MOVE_MARGIN gap.
    """
    if step <= 0.0:
        return px, py, False
    edges = _get_collision_edges(m)
    rad = math.radians(direction_deg)
    dx, dy = math.cos(rad), math.sin(rad)
    collided = False
    for _ in range(2):  # initial move plus at most one slide
        t, edge = _first_hit(edges, px, py, dx, dy, step)
        if edge is None:
            px += dx * step
            py += dy * step
            break
        collided = True
        advance = max(t - MOVE_MARGIN, 0.0)
        px += dx * advance
        py += dy * advance
        remaining = step - advance
        ex, ey = edge
        elen = math.hypot(ex, ey)
        if elen < 1e-12 or remaining <= 1e-12:
            break
        tx, ty = ex / elen, ey / elen
        along = dx * tx + dy * ty
        if abs(along) < 1e-9:
            break
        dx, dy = tx * math.copysign(1.0, along), ty * math.copysign(1.0, along)
        step = remaining * abs(along)
    px = min(max(px, MOVE_MARGIN), m.width - MOVE_MARGIN)
    py = min(max(py, MOVE_MARGIN), m.height - MOVE_MARGIN)
    return px, py, collided


ORIENTATION_STEP_DEG = 22.5  # 16 discrete movement orientations


def apply_motion(
    state: CombatantState, orientation_index: int, step_length: float, m: MapDef
) -> CombatantState:
    """Advance by ``step_length`` along a discrete orientation; yaw unchanged."""
    if not state.alive or step_length <= 0.0:
        return state
    direction = orientation_index * ORIENTATION_STEP_DEG
    nx, ny, _ = move_with_slide(m, state.pose.x, state.pose.y, direction, step_length)
    out = replace(state, pose=replace(state.pose, x=nx, y=ny))
    return out


# ---------------------------------------------------------------------------
# Spawning


def spawn_pair(
    m: MapDef,
    region_index: int,
    rng: np.random.Generator,
    retry_cap: int = 200,
    min_separation: float = 1.0,
) -> tuple[Pose, Pose]:
    """Sample two covered spawn poses inside one region.

    The straight segment between the two positions must pass through an
    obstacle taller than standing eye height, so neither side starts seen.
    ``min_separation`` floors the spawn distance (never below 1 m).
    """
    if not (0 <= region_index < len(m.spawn_regions)):
        raise ValueError(f"region_index {region_index} out of range")
    region = m.spawn_regions[region_index]
    tall = [o for o in m.obstacles if o.height > STAND_EYE]
    from .geometry import inflate_convex, point_in_convex, segment_crosses_polygon_interior

    inflated = [inflate_convex(o.vertices, m.walkable_margin) for o in m.obstacles]
    inset = min(0.5, 0.25 * min(region.w, region.h))
    # An infeasible separation floor for a small region degrades gracefully.
    separation = max(1.0, min(min_separation, 0.7 * math.hypot(region.w, region.h)))

    def sample() -> tuple[float, float]:
        return (
            float(rng.uniform(region.x + inset, region.x + region.w - inset)),
            float(rng.uniform(region.y + inset, region.y + region.h - inset)),
        )

    def walkable(p: tuple[float, float]) -> bool:
        return not any(point_in_convex(p[0], p[1], poly) for poly in inflated)

    for _ in range(retry_cap):
        p1, p2 = sample(), sample()
        if not (walkable(p1) and walkable(p2)):
            continue
        if math.hypot(p2[0] - p1[0], p2[1] - p1[1]) < separation:
            continue
        if not any(segment_crosses_polygon_interior(p1, p2, o.vertices) for o in tall):
            continue
        yaw12 = math.degrees(math.atan2(p2[1] - p1[1], p2[0] - p1[0])) % 360.0
        pose1 = Pose(x=p1[0], y=p1[1], z=STAND_EYE, yaw=yaw12)
        pose2 = Pose(x=p2[0], y=p2[1], z=STAND_EYE, yaw=(yaw12 + 180.0) % 360.0)
        return pose1, pose2
    raise SpawnError(
        f"no covered spawn pair found in region {region_index} after {retry_cap} tries"
    )


# ---------------------------------------------------------------------------
# Stepping and termination


def _apply_stance(world: WorldState, side: str, cmds: Commands) -> None:
    c = world.combatant(side)
    cfg = world.cfg
    if cmds.posture != c.posture:
        c.set_posture(cmds.posture)
        ticks = tuple(t for t in c.posture_change_ticks if world.tick - t < 5) + (world.tick,)
        c.posture_change_ticks = ticks
        world.events.append(PostureChange(side))
    else:
        c.posture_change_ticks = tuple(t for t in c.posture_change_ticks if world.tick - t < 5)
    c.lean = cmds.lean
    c.barrel_yaw_offset = min(
        max(c.barrel_yaw_offset + cmds.yaw_delta, BARREL_YAW_RANGE[0]), BARREL_YAW_RANGE[1]
    )
    c.barrel_pitch_offset = min(
        max(c.barrel_pitch_offset + cmds.pitch_delta, BARREL_PITCH_RANGE[0]),
        BARREL_PITCH_RANGE[1],
    )
    if cmds.reload and c.ammo < cfg.magazine:
        c.ammo = cfg.magazine
        c.fire_cooldown = max(c.fire_cooldown, cfg.reload_ticks)
        c.last_impact_offset = None


def _apply_movement(world: WorldState, side: str, cmds: Commands) -> None:
    c = world.combatant(side)
    collided = False
    moved = False
    if cmds.nav_target is not None:
        tx, ty = cmds.nav_target
        dx, dy = tx - c.pose.x, ty - c.pose.y
        d = math.hypot(dx, dy)
        if d > 1e-9:
            direction = math.degrees(math.atan2(dy, dx))
            nx, ny, collided = move_with_slide(world.map, c.pose.x, c.pose.y, direction, d)
            c.pose.x, c.pose.y = nx, ny
            moved = True
    elif cmds.motion_dir_deg is not None and cmds.move_step > 0.0:
        nx, ny, collided = move_with_slide(
            world.map, c.pose.x, c.pose.y, cmds.motion_dir_deg, cmds.move_step
        )
        c.pose.x, c.pose.y = nx, ny
        moved = True
    if moved and collided:
        c.collision_streak += 1
        world.events.append(Collision(side))
    else:
        c.collision_streak = 0


def step(world: WorldState, agent_cmds: Commands, opponent_cmds: Commands) -> WorldState:
    """Advance the world by one tick, mutating and returning it.

    Order: stance/barrel/reload, movement, fire resolution (simultaneous:
    damage applies after both shots resolve), cooldowns, visibility memory,
    tick increment.  Events describe exactly this tick.
    """
    from . import shooting  # deferred: shooting imports world types

    world.events = []
    pairs = ((AGENT, agent_cmds), (OPPONENT, opponent_cmds))
    for side, cmds in pairs:
        if world.combatant(side).alive:
            _apply_stance(world, side, cmds)
    for side, cmds in pairs:
        if world.combatant(side).alive:
            _apply_movement(world, side, cmds)

    impacts: list[tuple[str, str, float]] = []
    for side, cmds in pairs:
        c = world.combatant(side)
        if not (c.alive and cmds.fire and not cmds.reload):
            # A voluntary hold (or a reload) while ready to fire ends the burst.
            if c.alive and c.fire_cooldown == 0:
                c.last_impact_offset = None
            continue
        if c.fire_cooldown > 0 or c.ammo <= 0:
            continue
        record = shooting.resolve_shot(world, side, ads=cmds.ads)
        if record.damage > 0.0:
            impacts.append((side, record.hit_part, record.damage))
    for side, part, damage in impacts:
        victim = world.other(side)
        effective = min(damage, victim.health)  # overkill does not inflate events
        victim.health -= effective
        world.events.append(
            Hit(
                shooter=side,
                target=AGENT if victim is world.agent else OPPONENT,
                part=part,
                damage=effective,
            )
        )
        if victim.health <= 0.0 and victim.alive:
            victim.alive = False
            world.events.append(Death(AGENT if victim is world.agent else OPPONENT))

    for side, _ in pairs:
        c = world.combatant(side)
        if c.fire_cooldown > 0:
            c.fire_cooldown -= 1

    for side, _ in pairs:
        c = world.combatant(side)
        other = world.other(side)
        if c.alive and other.alive and line_of_sight(
            world.map, c, other, max_range=world.cfg.sight_range
        ):
            # (x, y, z, tick) memory: aim fallback and navigation target.
            world.last_seen[side] = (*other.band_center(RayKind.BODY_TORSO), world.tick)

    world.tick += 1
    return world


def check_terminal(world: WorldState, timeout_ticks: int) -> Outcome:
    agent_dead = not world.agent.alive
    opp_dead = not world.opponent.alive
    if agent_dead and opp_dead:
        return Outcome.DRAW
    if opp_dead:
        return Outcome.AGENT_WIN
    if agent_dead:
        return Outcome.AGENT_LOSE
    if world.tick >= timeout_ticks:
        return Outcome.DRAW
    return Outcome.ONGOING
