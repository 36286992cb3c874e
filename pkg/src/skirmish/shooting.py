"""Rule-based firing: aim-point selection, distance-scaled dispersion, bursts.

Every shot lands inside a confidence disc whose radius grows linearly with
distance (radius 40 at distance 1500, i.e. ratio 40/1500).  Within a burst,
each impact must additionally fall within one third of that radius around the
previous impact, imitating recoil control.  Samples are truncated Gaussians:
draws outside the feasible disc(s) are rejected and finally projected, so the
bounds hold for 100% of shots, not just in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import world as w

BASELINE_RATIO = 40.0 / 1500.0  # tan(arctan(40/1500))
BURST_DIVISOR = 3.0
_REJECTION_TRIES = 16
_SAFETY = 1.0 - 1e-12  # keep projected points strictly inside their disc

# Aim priority: the torso is the largest reliable target, then head, then legs.
AIM_PRIORITY = (w.RayKind.BODY_TORSO, w.RayKind.BODY_HEAD, w.RayKind.BODY_LEGS)

PART_NAMES = {
    w.RayKind.BODY_HEAD: "head",
    w.RayKind.BODY_TORSO: "torso",
    w.RayKind.BODY_LEGS: "legs",
}


@dataclass(frozen=True)
class ShotSpec:
    shooter: str
    aim_point: tuple[float, float, float]
    distance: float
    prev_impact_offset: tuple[float, float] | None = None


@dataclass(frozen=True)
class ImpactRecord:
    offset: tuple[float, float]  # meters in the plane perpendicular to the aim ray
    hit_part: str  # "head" | "torso" | "legs" | "miss"
    damage: float


def confidence_radius(distance: float) -> float:
    """Dispersion disc radius at the target plane for a given distance."""
    return distance * BASELINE_RATIO


def _project_feasible(
    off: np.ndarray, r: float, prev: np.ndarray | None, burst_r: float
) -> np.ndarray:
    """Project a point into disc(0, r) ∩ disc(prev, burst_r) (assumed nonempty)."""
    if prev is None:
        n = float(np.hypot(off[0], off[1]))
        if n > r:
            off = off * (r * _SAFETY / n)
        return off
    for _ in range(32):  # alternating projections between the two discs
        n = float(np.hypot(off[0], off[1]))
        if n > r:
            off = off * (r * _SAFETY / n)
        d = off - prev
        nd = float(np.hypot(d[0], d[1]))
        if nd > burst_r:
            off = prev + d * (burst_r * _SAFETY / nd)
        if (
            np.hypot(off[0], off[1]) <= r
            and np.hypot(off[0] - prev[0], off[1] - prev[1]) <= burst_r
        ):
            return off
    # Analytic feasible point: prev pulled toward the origin just enough.
    n_prev = float(np.hypot(prev[0], prev[1]))
    if n_prev <= r:
        return prev.copy()
    return prev * ((n_prev - burst_r * _SAFETY) / n_prev)


def sample_impact(
    spec: ShotSpec, rng: np.random.Generator, sigma_ratio: float = 0.5
) -> tuple[float, float]:
    """Draw a truncated-Gaussian impact offset honoring the burst constraint."""
    r = confidence_radius(spec.distance)
    if r <= 0.0:
        return (0.0, 0.0)
    burst_r = r / BURST_DIVISOR
    prev = None
    if spec.prev_impact_offset is not None:
        prev = np.asarray(spec.prev_impact_offset, dtype=np.float64)
        if float(np.hypot(prev[0], prev[1])) > r + burst_r:
            prev = None  # infeasible carry-over (distance changed); treat as new burst
    sigma = sigma_ratio * r
    off = None
    for _ in range(_REJECTION_TRIES):
        cand = rng.normal(0.0, sigma, size=2)
        if np.hypot(cand[0], cand[1]) > r:
            off = cand
            continue
        if prev is not None and np.hypot(cand[0] - prev[0], cand[1] - prev[1]) > burst_r:
            off = cand
            continue
        return (float(cand[0]), float(cand[1]))
    off = _project_feasible(off, r, prev, burst_r)
    return (float(off[0]), float(off[1]))


def baseline_fire_point(
    world: w.WorldState, shooter_side: str
) -> tuple[float, float, float] | None:
    """Center of the highest-priority visible body band of the opponent."""
    shooter = world.combatant(shooter_side)
    target = world.other(shooter_side)
    if not (shooter.alive and target.alive):
        return None
    probes = w._probe_bands(world, shooter, target)
    for kind in AIM_PRIORITY:
        reached, center, _ = probes[kind]
        if reached:
            return center
    return None


def _offset_basis(
    eye: tuple[float, float, float], aim: tuple[float, float, float]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal (forward, right, up) at the target, right lying horizontal."""
    fwd = np.array([aim[0] - eye[0], aim[1] - eye[1], aim[2] - eye[2]])
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        fwd = np.array([1.0, 0.0, 0.0])
        n = 1.0
    fwd = fwd / n
    horiz = math.hypot(fwd[0], fwd[1])
    if horiz < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = np.array([-fwd[1] / horiz, fwd[0] / horiz, 0.0])
    up = np.cross(fwd, right)
    if up[2] < 0.0:
        up = -up
    return fwd, right, up


def trace_offset(
    world: w.WorldState,
    shooter_side: str,
    eye: tuple[float, float, float],
    aim: tuple[float, float, float],
    offset: tuple[float, float],
) -> tuple[str, float]:
    """Map a target-plane offset back to a world ray and resolve what it hits."""
    cfg = world.cfg
    target = world.other(shooter_side)
    _, right, up = _offset_basis(eye, aim)
    impact_point = np.asarray(aim) + offset[0] * right + offset[1] * up
    delta = impact_point - np.asarray(eye)
    horiz = math.hypot(delta[0], delta[1])
    if horiz < 1e-9:
        horiz = 1e-9
    shot_yaw = math.degrees(math.atan2(delta[1], delta[0]))
    shot_pitch = math.degrees(math.atan2(delta[2], horiz))
    hit = w.raycast(world.map, [target], eye, shot_yaw, shot_pitch, cfg.weapon_range)
    if hit.kind in w.BODY_KINDS:
        part = PART_NAMES[hit.kind]
        damage = {
            "head": cfg.damage_head,
            "torso": cfg.damage_torso,
            "legs": cfg.damage_legs,
        }[part]
        return part, damage
    return "miss", 0.0


def resolve_shot(world: w.WorldState, shooter_side: str, ads: bool = False) -> ImpactRecord:
    """Fire one shot: pick the aim point, disperse, trace, apply bookkeeping.

    The caller (``world.step``) applies damage; this function spends ammo,
    starts the cooldown, stores the burst offset, and appends shot events.
    Preconditions (cooldown 0, ammo > 0) are the caller's responsibility.
    """
    cfg = world.cfg
    shooter = world.combatant(shooter_side)
    target = world.other(shooter_side)
    eye = shooter.eye_position()

    aim = baseline_fire_point(world, shooter_side)
    blind = aim is None
    if blind:
        remembered = world.last_seen.get(shooter_side)
        if remembered is not None:
            aim = remembered[:3]
        else:
            # Nothing known: fire along the barrel into open space.
            yaw = math.radians(shooter.pose.yaw + shooter.barrel_yaw_offset)
            pitch = math.radians(shooter.pose.pitch + shooter.barrel_pitch_offset)
            d = cfg.blind_fire_distance
            aim = (
                eye[0] + d * math.cos(yaw) * math.cos(pitch),
                eye[1] + d * math.sin(yaw) * math.cos(pitch),
                eye[2] + d * math.sin(pitch),
            )

    distance = math.dist(eye, aim)
    spec = ShotSpec(
        shooter=shooter_side,
        aim_point=aim,
        distance=distance,
        prev_impact_offset=shooter.last_impact_offset,
    )
    offset = sample_impact(
        spec, world.rng, sigma_ratio=cfg.ads_sigma_ratio if ads else cfg.sigma_ratio
    )
    part, damage = trace_offset(world, shooter_side, eye, aim, offset)

    shooter.ammo -= 1
    shooter.fire_cooldown = cfg.fire_cooldown
    shooter.last_impact_offset = offset

    world.events.append(w.ShotFired(shooter=shooter_side, blind=blind))
    # The caller applies damage and emits the Hit event (capped at the
    # victim's remaining health so damage events always sum to health deltas).
    return ImpactRecord(offset=offset, hit_part=part, damage=damage)


BULLET_LOG_HEADER = "episode,tick,distance,offset_x,offset_y,hit_part"


def bullet_log_row(
    episode: int, tick: int, distance: float, record: ImpactRecord
) -> str:
    ox, oy = record.offset
    return f"{episode},{tick},{distance:.6f},{ox:.6f},{oy:.6f},{record.hit_part}"
