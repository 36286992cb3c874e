"""Episode orchestration: world + navigation controller + masks + rewards.

One `CombatEnv` instance runs one combatant (the learning agent) against the
scripted opponent.  Per tick: the policy samples a masked action tuple from
the current observation; `step` validates it against the same masks, lets the
navigation controller translate path requests into motion overrides, advances
the world, and returns the next observation with a reward breakdown.

Instances are single-threaded and fully deterministic given the reset seed;
independent instances can run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import world as w
from .actions import MaskContext, compute_mask, decode, mask_set
from .bt import BTOpponent
from .mapdef import MapDef, load_map
from .navmesh import NavController, NavMesh, build_navmesh, controller_step
from .perception import Observation, ObsConfig, assemble_observation
from .rewards import RewardBreakdown, RewardConfig, total_reward
from .world import CombatConfig, CombatantState, Outcome, WorldState


@dataclass(frozen=True)
class EnvConfig:
    map_name: str = "farm_small"
    timeout_ticks: int = 150
    mode: str = "rules"  # "rules" (navmesh actions enabled) | "pure" (masked off)
    spawn_region: int | None = None  # None: sampled uniformly per episode
    spawn_min_separation: float = 24.0
    nav_slice_period: int = 10
    nav_step_limit: int = 50
    bt_low_health: float = 40.0
    bt_patrol_radius: float = 12.0
    obs: ObsConfig = field(default_factory=ObsConfig)
    combat: CombatConfig = field(default_factory=CombatConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def validate(self) -> "EnvConfig":
        if self.mode not in ("rules", "pure"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.timeout_ticks <= 0:
            raise ValueError("timeout_ticks must be positive")
        return self


class CombatEnv:
    def __init__(self, m: MapDef, mesh: NavMesh, cfg: EnvConfig):
        cfg.validate()
        self.map = m
        self.mesh = mesh
        self.cfg = cfg
        self.world: WorldState | None = None
        self.ctrl: NavController | None = None
        self.bt: BTOpponent | None = None
        self.outcome = Outcome.ONGOING
        self._ctx: MaskContext | None = None
        self._nav_rng: np.random.Generator | None = None
        self.episode_seed: int | None = None

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int, region_index: int | None = None) -> Observation:
        ss = np.random.SeedSequence(seed)
        spawn_ss, world_ss, bt_ss, nav_ss, region_ss = ss.spawn(5)
        self.episode_seed = seed
        region_rng = np.random.default_rng(region_ss)
        if region_index is None:
            region_index = self.cfg.spawn_region
        if region_index is None:
            region_index = int(region_rng.integers(len(self.map.spawn_regions)))
        pose_a, pose_b = w.spawn_pair(
            self.map,
            region_index,
            np.random.default_rng(spawn_ss),
            min_separation=self.cfg.spawn_min_separation,
        )
        combat = self.cfg.combat
        self.world = WorldState(
            map=self.map,
            agent=CombatantState(pose=pose_a, ammo=combat.magazine),
            opponent=CombatantState(pose=pose_b, ammo=combat.magazine),
            cfg=combat,
            spawn_region=region_index,
            rng=np.random.default_rng(world_ss),
        )
        region = self.map.spawn_regions[region_index]
        self.ctrl = NavController(
            mesh=self.mesh,
            slice_period=self.cfg.nav_slice_period,
            nav_step_limit=self.cfg.nav_step_limit,
            move_step=combat.step_run,
            home_rect=region.rect,
        )
        self.bt = BTOpponent(
            self.map,
            self.mesh,
            np.random.default_rng(bt_ss),
            low_health=self.cfg.bt_low_health,
            patrol_radius=self.cfg.bt_patrol_radius,
        )
        self._nav_rng = np.random.default_rng(nav_ss)
        self.outcome = Outcome.ONGOING
        self.prev_distance = self._distance()
        self._ctx = self._build_ctx()
        return assemble_observation(self.world, self.ctrl, self.cfg.obs)

    # -- masks ----------------------------------------------------------------

    def _build_ctx(self) -> MaskContext:
        return MaskContext(
            opponent_visible=w.world_los(self.world, w.AGENT),
            nav_following=self.ctrl.following,
            slice_tick=self.world.tick % self.cfg.nav_slice_period == 0,
            cooldown=self.world.agent.fire_cooldown,
            navmesh_allowed=self.cfg.mode != "pure",
        )

    @property
    def mask_context(self) -> MaskContext:
        """Mask context for the upcoming decision (matches the last observation)."""
        return self._ctx

    def mask_fn(self, head_idx: int, partial: tuple[int, ...]) -> np.ndarray:
        padded = tuple(partial) + (0,) * (9 - len(partial))
        return compute_mask(head_idx, padded, self._ctx)

    # -- stepping -------------------------------------------------------------

    def _distance(self) -> float:
        a, b = self.world.agent.pose, self.world.opponent.pose
        return math.hypot(b.x - a.x, b.y - a.y)

    def step(self, action: tuple[int, ...]):
        """Advance one tick.  Returns (obs, RewardBreakdown, done, info)."""
        if self.world is None:
            raise RuntimeError("call reset() first")
        if self.outcome != Outcome.ONGOING:
            raise RuntimeError("episode is terminal; call reset()")
        ctx = self._ctx
        combat = self.cfg.combat
        cmds, path_type = decode(
            action, ctx, cfg_steps=(combat.step_walk, combat.step_run, combat.step_sprint)
        )
        seen = self.world.last_seen.get(w.AGENT)
        goal = (seen[0], seen[1]) if seen is not None else None
        self.ctrl, override, _ = controller_step(
            self.ctrl, self.world, path_type, self.world.tick, goal=goal, rng=self._nav_rng
        )
        if override is not None:
            cmds.nav_target = override
            cmds.motion_dir_deg = None
        opp_cmds = self.bt.step(self.world)
        w.step(self.world, cmds, opp_cmds)

        self.outcome = w.check_terminal(self.world, self.cfg.timeout_ticks)
        done = self.outcome != Outcome.ONGOING
        distance = self._distance()
        breakdown = total_reward(
            self.outcome if done else None,
            self.prev_distance,
            distance,
            self.world.events,
            self.world.agent,
            self.cfg.reward,
        )
        self.prev_distance = distance
        info = {
            "outcome": self.outcome,
            "events": list(self.world.events),
            "tick": self.world.tick,
            "agent_pos": (self.world.agent.pose.x, self.world.agent.pose.y),
            "masks": mask_set(ctx, action),
            "ctx": ctx,
            "nav_mode": self.ctrl.mode,
        }
        self._ctx = self._build_ctx()
        obs = assemble_observation(self.world, self.ctrl, self.cfg.obs)
        return obs, breakdown, done, info


def make_env(cfg: EnvConfig, m: MapDef | None = None, mesh: NavMesh | None = None) -> CombatEnv:
    """Load the map and build the mesh unless shared instances are supplied."""
    if m is None:
        m = load_map(cfg.map_name)
    if mesh is None:
        mesh = build_navmesh(m)
    return CombatEnv(m, mesh, cfg)


@dataclass
class EpisodeResult:
    outcome: Outcome
    ticks: int
    total_reward: float
    positions: list[tuple[float, float]]
    action_log: list[str]
    nav_activations: int


def run_episode(
    env: CombatEnv,
    ps,
    seed: int,
    sample_rng: np.random.Generator | None = None,
    collect_positions: bool = False,
    collect_action_log: bool = False,
    max_ticks: int | None = None,
) -> EpisodeResult:
    """Play one episode with a policy (argmax when ``sample_rng`` is None)."""
    from .actions import action_log_line
    from .net import LSTMState, act

    obs = env.reset(seed)
    state = LSTMState.zeros(ps.cfg)
    positions: list[tuple[float, float]] = []
    log_lines: list[str] = []
    total = 0.0
    nav_activations = 0
    limit = max_ticks if max_ticks is not None else env.cfg.timeout_ticks + 1
    outcome = Outcome.ONGOING
    ticks = 0
    for _ in range(limit):
        out = act(ps, obs, state, env.mask_fn, rng=sample_rng)
        state = out.state
        obs, breakdown, done, info = env.step(out.action)
        total += breakdown.total
        ticks = info["tick"]
        if collect_positions:
            positions.append(info["agent_pos"])
        if collect_action_log:
            log_lines.append(action_log_line(info["tick"], out.action, info["masks"]))
        if info["nav_mode"] == "following":
            nav_activations += 1
        if done:
            outcome = info["outcome"]
            break
    return EpisodeResult(
        outcome=outcome,
        ticks=ticks,
        total_reward=total,
        positions=positions,
        action_log=log_lines,
        nav_activations=nav_activations,
    )
