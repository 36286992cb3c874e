"""Experiment artifact generators: traversal heatmaps and bullet distributions.

These back the heatmap/bullets CLI commands and the desk-scale analogs of the
published experiments: traversal coverage over evaluation episodes, and the
impact pattern of the rule-constrained shooter versus an unconstrained
Gaussian baseline on a fixed-distance target range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import shooting
from . import world as w
from .env import CombatEnv, run_episode
from .mapdef import MapDef, SpawnRegion
from .net import ParamSet
from .world import CombatConfig, CombatantState, Pose, WorldState


# ---------------------------------------------------------------------------
# Traversal heatmaps


def heatmap_grid(m, positions: list[tuple[float, float]]) -> np.ndarray:
    """Bin positions into 1 m cells; grid shape (ceil(height), ceil(width))."""
    rows = math.ceil(m.height)
    cols = math.ceil(m.width)
    grid = np.zeros((rows, cols), dtype=np.int64)
    for (x, y) in positions:
        gx = min(max(int(x), 0), cols - 1)
        gy = min(max(int(y), 0), rows - 1)
        grid[gy, gx] += 1
    return grid


def collect_heatmap(
    env: CombatEnv,
    ps: ParamSet,
    episodes: int,
    base_seed: int = 0,
    sample: bool = False,
) -> tuple[np.ndarray, int]:
    """Play episodes and bin every per-tick agent position.

    Returns (grid, distinct_visited_cells).
    """
    rng = np.random.default_rng(base_seed) if sample else None
    positions: list[tuple[float, float]] = []
    for k in range(episodes):
        result = run_episode(
            env, ps, seed=base_seed + k, sample_rng=rng, collect_positions=True
        )
        positions.extend(result.positions)
    grid = heatmap_grid(env.map, positions)
    return grid, int((grid > 0).sum())


def grid_to_csv(grid: np.ndarray, header_comment: str) -> str:
    lines = [f"# {header_comment}"]
    for row in grid:
        lines.append(",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def grid_to_pgm(grid: np.ndarray, header_comment: str) -> str:
    """ASCII PGM, log-scaled so sparse traversal stays visible."""
    cmax = int(grid.max())
    if cmax > 0:
        img = np.round(255.0 * np.log1p(grid) / np.log1p(cmax)).astype(int)
    else:
        img = np.zeros_like(grid, dtype=int)
    lines = ["P2", f"# {header_comment}", f"{grid.shape[1]} {grid.shape[0]}", "255"]
    for row in img:
        lines.append(" ".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Bullet distribution range


@dataclass
class RangeShot:
    episode: int
    tick: int
    distance: float
    offset: tuple[float, float]
    hit_part: str


def _range_world(distance: float, combat: CombatConfig) -> WorldState:
    """Open strip with shooter and target placed so the eye-to-torso-center
    3D distance equals ``distance`` exactly."""
    from dataclasses import replace as _replace

    # A shooting range has unobstructed visibility over its whole length.
    combat = _replace(
        combat,
        sight_range=max(combat.sight_range, 1.5 * distance + 10.0),
        weapon_range=max(combat.weapon_range, 2.0 * distance + 10.0),
    )
    target_torso_z = 0.5 * (0.8 + 1.4)  # standing torso band center
    dz = w.STAND_EYE - target_torso_z
    horizontal = math.sqrt(max(distance * distance - dz * dz, 1e-12))
    width = horizontal + 20.0
    arena = MapDef(
        width=width,
        height=20.0,
        obstacles=(),
        spawn_regions=(SpawnRegion(1.0, 1.0, 2.0, 2.0),),
        name="range",
    )
    shooter = CombatantState(pose=Pose(x=5.0, y=10.0, z=w.STAND_EYE, yaw=0.0))
    target = CombatantState(pose=Pose(x=5.0 + horizontal, y=10.0, z=w.STAND_EYE, yaw=180.0))
    return WorldState(map=arena, agent=shooter, opponent=target, cfg=combat)


def bullet_range_session(
    distance: float,
    shots: int,
    seed: int = 0,
    unconstrained: bool = False,
    combat: CombatConfig = CombatConfig(),
) -> list[RangeShot]:
    """Fire ``shots`` rounds at a fixed target, recording every impact offset.

    The constrained session runs the full shot pipeline (truncation and the
    in-burst constraint).  The unconstrained baseline samples the same
    Gaussian without any truncation, as a dispersion comparison.
    """
    world = _range_world(distance, combat)
    world.rng = np.random.default_rng(seed)
    rows: list[RangeShot] = []
    tick = 0
    while len(rows) < shots:
        shooter = world.agent
        if shooter.fire_cooldown == 0:
            if shooter.ammo <= 0:
                shooter.ammo = combat.magazine  # range harness: bottomless crate
            if unconstrained:
                aim = shooting.baseline_fire_point(world, w.AGENT)
                eye = shooter.eye_position()
                d = math.dist(eye, aim)
                sigma = combat.sigma_ratio * shooting.confidence_radius(d)
                offset = tuple(world.rng.normal(0.0, sigma, size=2))
                part, _ = shooting.trace_offset(world, w.AGENT, eye, aim, offset)
                shooter.ammo -= 1
                shooter.fire_cooldown = combat.fire_cooldown
                rows.append(RangeShot(0, tick, d, offset, part))
            else:
                eye = shooter.eye_position()
                aim = shooting.baseline_fire_point(world, w.AGENT)
                d = math.dist(eye, aim)
                record = shooting.resolve_shot(world, w.AGENT)
                rows.append(RangeShot(0, tick, d, record.offset, record.hit_part))
        if shooter.fire_cooldown > 0:
            shooter.fire_cooldown -= 1  # same-tick decrement as in world.step
        world.opponent.health = 100.0  # keep the target standing
        world.events = []
        tick += 1
    return rows


def bullets_to_csv(rows: list[RangeShot], header_comment: str) -> str:
    lines = [f"# {header_comment}", shooting.BULLET_LOG_HEADER]
    for r in rows:
        lines.append(
            f"{r.episode},{r.tick},{r.distance:.6f},{r.offset[0]:.6f},{r.offset[1]:.6f},{r.hit_part}"
        )
    return "\n".join(lines) + "\n"
