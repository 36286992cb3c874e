"""Observation construction: scalar feature blocks, depth map, circular lidar.

Three scalar blocks (own state, opponent state, episode/navigation state) are
zero-padded to configurable widths so paper-scale feature counts remain
runnable.  The depth map casts a 90x60 degree fan of rays centered on the
barrel direction; the lidar casts 144 horizontal rays at 2.5 degree spacing
anchored to the combatant's yaw, which makes rotating the body a circular
shift of the lidar rows.  Every entry is finite and lies in [-1, 1].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import world as w
from .navmesh import NavController

DEPTH_SHAPE = (40, 80)
LIDAR_SHAPE = (144, 3)
DEPTH_FOV_H = 90.0
DEPTH_FOV_V = 60.0
LIDAR_STEP_DEG = 360.0 / LIDAR_SHAPE[0]
LIDAR_KIND_NONE = 0.0
LIDAR_KIND_OBSTACLE = 0.5
LIDAR_KIND_BODY = 1.0
_HEIGHT_NORM = 3.0  # obstacle heights above this clamp to 1.0


@dataclass(frozen=True)
class ObsConfig:
    basic_dim: int = 16
    opponent_dim: int = 12
    env_dim: int = 32
    max_range: float = 60.0
    timeout_ticks: int = 150
    n_regions: int = 8

    def validate(self) -> "ObsConfig":
        if self.basic_dim < 16:
            raise ValueError("basic_dim must be >= 16 (semantic entries)")
        if self.opponent_dim < 9:
            raise ValueError("opponent_dim must be >= 9")
        if self.env_dim < 4 + self.n_regions:
            raise ValueError("env_dim too small for region one-hot")
        return self


@dataclass
class Observation:
    basic: np.ndarray  # (B,) float32
    opponent: np.ndarray  # (O,) float32
    env: np.ndarray  # (E,) float32
    depth: np.ndarray  # (40, 80) float32
    lidar: np.ndarray  # (144, 3) float32

    def blocks(self) -> tuple[np.ndarray, ...]:
        return (self.basic, self.opponent, self.env, self.depth, self.lidar)


def _padded(values: list[float], dim: int) -> np.ndarray:
    out = np.zeros(dim, dtype=np.float32)
    out[: len(values)] = np.asarray(values, dtype=np.float32)
    return out


def build_basic_info(
    world: w.WorldState, cfg: ObsConfig, nav_following: bool = False
) -> np.ndarray:
    """Own-state block: position, facing, health, stance, ammo, nav flag."""
    c = world.agent
    yaw = math.radians(c.pose.yaw)
    posture_onehot = [0.0] * 4
    posture_onehot[int(c.posture)] = 1.0
    lean_onehot = [0.0] * 3
    lean_onehot[int(c.lean)] = 1.0
    cool_norm = max(world.cfg.reload_ticks, world.cfg.fire_cooldown, 1)
    values = [
        c.pose.x / world.map.width,
        c.pose.y / world.map.height,
        math.sin(yaw),
        math.cos(yaw),
        c.pose.pitch / 89.0,
        c.health / 100.0,
        *posture_onehot,
        *lean_onehot,
        c.ammo / world.cfg.magazine,
        c.fire_cooldown / cool_norm,
        1.0 if nav_following else 0.0,
    ]
    return _padded(values, cfg.basic_dim)


def build_opponent_info(world: w.WorldState, cfg: ObsConfig) -> np.ndarray:
    """Opponent block; all zeros (validity flag 0) without line of sight."""
    agent, opp = world.agent, world.opponent
    if not (agent.alive and opp.alive) or not w.line_of_sight(
        world.map, agent, opp, max_range=world.cfg.sight_range
    ):
        return np.zeros(cfg.opponent_dim, dtype=np.float32)
    dx = opp.pose.x - agent.pose.x
    dy = opp.pose.y - agent.pose.y
    distance = math.hypot(dx, dy)
    bearing = math.atan2(dy, dx) - math.radians(agent.pose.yaw)
    posture_onehot = [0.0] * 4
    posture_onehot[int(opp.posture)] = 1.0
    values = [
        1.0,  # validity flag (entry 0)
        min(distance / cfg.max_range, 1.0),
        math.sin(bearing),
        math.cos(bearing),
        *posture_onehot,
        max(-1.0, min(1.0, (opp.eye_z - agent.eye_z) / 1.8)),
    ]
    return _padded(values, cfg.opponent_dim)


def build_env_info(
    world: w.WorldState, ctrl: NavController | None, cfg: ObsConfig
) -> np.ndarray:
    """Episode block: time fraction, spawn region, navigation progress."""
    region_onehot = [0.0] * cfg.n_regions
    if 0 <= world.spawn_region < cfg.n_regions:
        region_onehot[world.spawn_region] = 1.0
    following = ctrl is not None and ctrl.following
    progress = ctrl.progress() if ctrl is not None else 0.0
    goal_frac = 0.0
    if ctrl is not None and ctrl.path is not None:
        gx, gy = ctrl.path.goal_snapshot
        d = math.hypot(gx - world.agent.pose.x, gy - world.agent.pose.y)
        goal_frac = min(d / cfg.max_range, 1.0)
    values = [
        min(world.tick / cfg.timeout_ticks, 1.0),
        *region_onehot,
        1.0 if following else 0.0,
        progress,
        goal_frac,
    ]
    return _padded(values, cfg.env_dim)


def _ray_fan(
    world: w.WorldState,
    eye: tuple[float, float, float],
    yaws_deg: np.ndarray,
    pitches_deg: np.ndarray,
    max_range: float,
):
    yaw_rad = np.radians(yaws_deg)
    pitch_rad = np.radians(pitches_deg)
    geom = w.get_geometry(world.map)
    return w.raycast_batch(
        geom,
        np.asarray(eye),
        np.cos(yaw_rad),
        np.sin(yaw_rad),
        np.tan(pitch_rad),
        max_range,
        bodies=[world.opponent] if world.opponent.alive else [],
    )


def _depth_scan(
    world: w.WorldState,
    eye: tuple[float, float, float],
    yaws_deg: np.ndarray,  # (cols,)
    pitches_deg: np.ndarray,  # (rows,)
    max_range: float,
) -> np.ndarray:
    """3D hit distances for the depth fan, exploiting its grid structure.

    The horizontal wall intersection depends only on the column yaw, and for
    a wall at horizontal distance t a row hits it iff its slope is at most
    (wall_height - eye_z) / t.  Sorting each column's candidate walls by t
    and taking a running maximum of that threshold turns the per-row nearest
    hit into a first-index lookup.  Results match the generic raycaster.
    """
    geom = w.get_geometry(world.map)
    ox, oy, oz = eye
    ux = np.cos(np.radians(yaws_deg))
    uy = np.sin(np.radians(yaws_deg))
    tanp = np.tan(np.radians(pitches_deg))  # (rows,)
    sec = np.sqrt(1.0 + tanp * tanp)
    rows, cols = tanp.shape[0], ux.shape[0]
    t2d = np.full((rows, cols), np.inf)

    if geom.n_edges:
        denom = ux[:, None] * geom.ey[None, :] - uy[:, None] * geom.ex[None, :]
        amo_x = geom.ax[None, :] - ox
        amo_y = geom.ay[None, :] - oy
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (amo_x * geom.ey[None, :] - amo_y * geom.ex[None, :]) / denom
            s = (amo_x * uy[:, None] - amo_y * ux[:, None]) / denom
        valid = (np.abs(denom) > 1e-14) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
        t = np.where(valid, t, np.inf)  # (cols, E)
        with np.errstate(divide="ignore", invalid="ignore"):
            thresh = np.where(valid, (geom.height[None, :] - oz) / t, -np.inf)
        order = np.argsort(t, axis=1)
        t_sorted = np.take_along_axis(t, order, axis=1)
        thresh_sorted = np.take_along_axis(thresh, order, axis=1)
        run_max = np.maximum.accumulate(thresh_sorted, axis=1)  # non-decreasing
        # First candidate (in distance order) tall enough for each row slope.
        hit = run_max[None, :, :] >= tanp[:, None, None]  # (rows, cols, E)
        found = hit.any(axis=2)
        first = np.argmax(hit, axis=2)
        t_wall = np.take_along_axis(
            np.broadcast_to(t_sorted[None], hit.shape), first[:, :, None], axis=2
        )[:, :, 0]
        t2d = np.where(found, t_wall, np.inf)

    opp = world.opponent
    if opp.alive:
        ocx, ocy = ox - opp.pose.x, oy - opp.pose.y
        b = 2.0 * (ux * ocx + uy * ocy)
        c0 = ocx * ocx + ocy * ocy - w.BODY_RADIUS * w.BODY_RADIUS
        disc = b * b - 4.0 * c0
        ok = disc > 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        l1 = np.maximum((-b - sq) / 2.0, 1e-9)
        l2 = (-b + sq) / 2.0
        ok &= l2 > 1e-9
        bounds = opp.band_bounds()
        flat = np.abs(tanp) < 1e-12  # (rows,)
        body_t = np.full((rows, cols), np.inf)
        for k in range(3):
            z_lo, z_hi = bounds[k], bounds[k + 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                la = (z_lo - oz) / tanp
                lb = (z_hi - oz) / tanp
            lo_band = np.minimum(la, lb)[:, None]
            hi_band = np.maximum(la, lb)[:, None]
            in_flat = (oz >= z_lo) & (oz <= z_hi)
            lo = np.where(flat[:, None], np.where(in_flat, l1[None, :], np.inf), np.maximum(l1[None, :], lo_band))
            hi = np.where(flat[:, None], np.where(in_flat, l2[None, :], -np.inf), np.minimum(l2[None, :], hi_band))
            cand = np.where(ok[None, :] & (hi >= lo), lo, np.inf)
            body_t = np.minimum(body_t, cand)
        t2d = np.minimum(t2d, body_t)

    dist3d = t2d * sec[:, None]
    return np.where(dist3d <= max_range, dist3d, np.inf)


def render_depth_map(world: w.WorldState, cfg: ObsConfig) -> np.ndarray:
    """Normalized hit distances over the barrel-centered field of view.

    Rows sweep the vertical FOV top-down, columns the horizontal FOV
    left-to-right, sampled at pixel centers; 1.0 marks no hit within range.
    """
    c = world.agent
    eye = c.eye_position()
    rows, cols = DEPTH_SHAPE
    aim_yaw = c.pose.yaw + c.barrel_yaw_offset
    aim_pitch = c.pose.pitch + c.barrel_pitch_offset
    col_offsets = (np.arange(cols) + 0.5) / cols * DEPTH_FOV_H - DEPTH_FOV_H / 2.0
    row_offsets = DEPTH_FOV_V / 2.0 - (np.arange(rows) + 0.5) / rows * DEPTH_FOV_V
    dist = _depth_scan(world, eye, aim_yaw + col_offsets, aim_pitch + row_offsets, cfg.max_range)
    depth = np.where(np.isfinite(dist), dist / cfg.max_range, 1.0)
    return np.minimum(depth, 1.0).astype(np.float32)


def render_lidar(world: w.WorldState, cfg: ObsConfig) -> np.ndarray:
    """144 horizontal rays starting at the combatant's yaw.

    Channels: normalized distance (1.0 for none), hit kind (0 none,
    0.5 obstacle, 1 combatant), normalized height of the hit surface.
    """
    c = world.agent
    eye = c.eye_position()
    n = LIDAR_SHAPE[0]
    yaws = c.pose.yaw + np.arange(n) * LIDAR_STEP_DEG
    pitches = np.zeros(n)
    dist, kind, _, hit_h = _ray_fan(world, eye, yaws, pitches, cfg.max_range)
    out = np.zeros(LIDAR_SHAPE, dtype=np.float32)
    hit = np.isfinite(dist)
    out[:, 0] = np.where(hit, np.minimum(dist / cfg.max_range, 1.0), 1.0)
    body = hit & (kind != w.RayKind.OBSTACLE.value) & (kind != w.RayKind.NONE.value)
    obstacle = hit & (kind == w.RayKind.OBSTACLE.value)
    out[:, 1] = np.where(body, LIDAR_KIND_BODY, np.where(obstacle, LIDAR_KIND_OBSTACLE, LIDAR_KIND_NONE))
    out[:, 2] = np.where(hit, np.minimum(hit_h / _HEIGHT_NORM, 1.0), 0.0)
    return out


def assemble_observation(
    world: w.WorldState, ctrl: NavController | None, cfg: ObsConfig
) -> Observation:
    """Compose all blocks; a pure function of (world, controller)."""
    following = ctrl is not None and ctrl.following
    return Observation(
        basic=build_basic_info(world, cfg, nav_following=following),
        opponent=build_opponent_info(world, cfg),
        env=build_env_info(world, ctrl, cfg),
        depth=render_depth_map(world, cfg),
        lidar=render_lidar(world, cfg),
    )


_DUMP_MAGIC = b"SKOB"
_DUMP_VERSION = 1


def dump_observation(obs: Observation) -> bytes:
    """Flat binary record: dimension header then row-major float32 values."""
    header = struct.pack(
        "<4sIIIIIIII",
        _DUMP_MAGIC,
        _DUMP_VERSION,
        obs.basic.shape[0],
        obs.opponent.shape[0],
        obs.env.shape[0],
        obs.depth.shape[0],
        obs.depth.shape[1],
        obs.lidar.shape[0],
        obs.lidar.shape[1],
    )
    body = b"".join(
        np.ascontiguousarray(block, dtype=np.float32).tobytes() for block in obs.blocks()
    )
    return header + body


def load_observation(raw: bytes) -> Observation:
    magic, version, b, o, e, dh, dw, ln, lc = struct.unpack_from("<4sIIIIIIII", raw)
    if magic != _DUMP_MAGIC or version != _DUMP_VERSION:
        raise ValueError("bad observation dump header")
    offset = struct.calcsize("<4sIIIIIIII")
    counts = [b, o, e, dh * dw, ln * lc]
    arrays = []
    for count in counts:
        arr = np.frombuffer(raw, dtype=np.float32, count=count, offset=offset).copy()
        offset += count * 4
        arrays.append(arr)
    return Observation(
        basic=arrays[0],
        opponent=arrays[1],
        env=arrays[2],
        depth=arrays[3].reshape(dh, dw),
        lidar=arrays[4].reshape(ln, lc),
    )
