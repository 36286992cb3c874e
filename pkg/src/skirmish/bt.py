"""Scripted behavior-tree opponent used for training and evaluation.

Priority order: fight on sight (fire while strafing), retreat to cover when
wounded, investigate the last place the agent was seen, otherwise patrol
between fixed waypoints.  Navigation reuses the path-following controller
with a slice period of 1 (the scripted side is not slice-gated).
Deterministic given its seed: randomness only picks the patrol circuit.
"""

from __future__ import annotations

import math

import numpy as np

from . import geometry
from . import world as w
from .actions import PathType
from .navmesh import NavController, NavMesh
from .world import Commands, Lean, Posture

STRAFE_FLIP_TICKS = 8
ARRIVE_RADIUS = 1.5
COVER_SEARCH_RADIUS = 30.0
_COVER_MIN_HEIGHT = 1.2


class BTOpponent:
    def __init__(
        self,
        m,
        mesh: NavMesh,
        rng: np.random.Generator,
        low_health: float = 40.0,
        n_patrol_points: int = 6,
        patrol_radius: float = 22.0,
    ):
        self.map = m
        self.mesh = mesh
        self.low_health = low_health
        self.patrol_radius = patrol_radius
        self.n_patrol_points = n_patrol_points
        self.ctrl = NavController(
            mesh=mesh,
            slice_period=1,
            nav_step_limit=10**9,
            side=w.OPPONENT,
        )
        self._rng = rng
        self.patrol_points: list[geometry.Vec2] | None = None  # built at first step
        self.patrol_idx = 0
        self.investigated_tick = -1

    def _build_patrol(self, anchor: geometry.Vec2) -> list[geometry.Vec2]:
        """Patrol circuit local to the spawn position (it holds its ground)."""
        local = [
            c for c in self.mesh.cells
            if geometry.dist(anchor, c.centroid) <= self.patrol_radius
        ]
        pool = local if local else list(self.mesh.cells)
        areas = np.array([c.area for c in pool])
        k = min(self.n_patrol_points, len(pool))
        idx = self._rng.choice(len(pool), size=k, replace=False, p=areas / areas.sum())
        return [pool[int(i)].centroid for i in idx]

    def _nav_commands(
        self, world: w.WorldState, me: w.CombatantState, target: geometry.Vec2
    ) -> Commands:
        """Plan toward target (or keep the current path) and emit the move."""
        need_new = (
            self.ctrl.path is None
            or geometry.dist(self.ctrl.path.goal_snapshot, target) > 2.0
        )
        request = PathType.NAV_NEW if need_new else PathType.NAV_KEEP
        _, override, _ = self._controller(world, request, target)
        cmds = Commands(posture=me.posture, lean=Lean.NONE)
        if override is not None:
            cmds.nav_target = override
        if me.ammo == 0:
            cmds.reload = True
        return cmds

    def _controller(self, world: w.WorldState, request: PathType, target: geometry.Vec2):
        from .navmesh import controller_step

        return controller_step(self.ctrl, world, request, world.tick, goal=target)

    def _cover_point(
        self, world: w.WorldState, threat: geometry.Vec2
    ) -> geometry.Vec2 | None:
        """Nearest reachable cell centroid hidden from the threat point."""
        me = world.opponent
        tall = [o for o in self.map.obstacles if o.height > _COVER_MIN_HEIGHT]
        if not tall:
            return None
        candidates = sorted(
            (c for c in self.mesh.cells),
            key=lambda c: geometry.dist((me.pose.x, me.pose.y), c.centroid),
        )
        for cell in candidates:
            point = cell.centroid
            if geometry.dist((me.pose.x, me.pose.y), point) > COVER_SEARCH_RADIUS:
                break
            hidden = any(
                geometry.segment_crosses_polygon_interior(threat, point, o.vertices)
                for o in tall
            )
            if hidden and geometry.dist(threat, point) > 3.0:
                return point
        return None

    def step(self, world: w.WorldState) -> Commands:
        me = world.opponent
        agent = world.agent
        if not me.alive:
            return Commands(posture=me.posture)
        if self.patrol_points is None:
            self.patrol_points = self._build_patrol((me.pose.x, me.pose.y))

        los = agent.alive and w.line_of_sight(
            self.map, me, agent, max_range=world.cfg.sight_range
        )
        if los:
            # Fight: hold ground laterally (strafe) and fire on cooldown.
            self.ctrl.mode = "inactive"
            bearing = geometry.bearing_deg((me.pose.x, me.pose.y), (agent.pose.x, agent.pose.y))
            sign = 1.0 if (world.tick // STRAFE_FLIP_TICKS) % 2 == 0 else -1.0
            cmds = Commands(
                fire=me.fire_cooldown == 0 and me.ammo > 0,
                move_step=world.cfg.step_walk,
                motion_dir_deg=(bearing + 90.0 * sign) % 360.0,
                posture=me.posture,
                lean=Lean.NONE,
            )
            if me.ammo == 0:
                cmds = Commands(posture=me.posture, reload=True)
            return cmds

        seen = world.last_seen.get(w.OPPONENT)
        if me.health < self.low_health and seen is not None:
            cover = self._cover_point(world, (seen[0], seen[1]))
            if cover is not None:
                return self._nav_commands(world, me, cover)

        if seen is not None and seen[3] > self.investigated_tick:
            target = (seen[0], seen[1])
            if geometry.dist((me.pose.x, me.pose.y), target) <= ARRIVE_RADIUS:
                self.investigated_tick = seen[3]
            else:
                return self._nav_commands(world, me, target)

        # Patrol circuit.
        target = self.patrol_points[self.patrol_idx]
        if geometry.dist((me.pose.x, me.pose.y), target) <= ARRIVE_RADIUS:
            self.patrol_idx = (self.patrol_idx + 1) % len(self.patrol_points)
            target = self.patrol_points[self.patrol_idx]
        return self._nav_commands(world, me, target)
