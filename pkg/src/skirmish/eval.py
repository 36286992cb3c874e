"""Evaluation runners: policy vs scripted opponent, policy vs policy, summaries.

Policy-vs-policy matches drive both combatants through the same perception
and mask machinery; the second policy sees the world through a role-swapped
view.  Spawn slots alternate between episodes so neither side keeps a fixed
positional edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import world as w
from .actions import MaskContext, compute_mask, decode, mask_set
from .env import CombatEnv, EnvConfig, run_episode
from .navmesh import NavController, NavMesh, controller_step
from .net import LSTMState, ParamSet, act
from .perception import assemble_observation
from .world import Outcome, WorldState


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class MatchStats:
    wins: int = 0
    losses: int = 0
    draws: int = 0
    ticks: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return self.wins + self.losses + self.draws

    @property
    def win_rate(self) -> float:
        """Win rate over all episodes (draws count against)."""
        return self.wins / self.episodes if self.episodes else 0.0

    @property
    def decided_win_rate(self) -> float:
        decided = self.wins + self.losses
        return self.wins / decided if decided else 0.0

    def record(self, outcome: Outcome, ticks: int, reward: float = 0.0) -> None:
        if outcome == Outcome.AGENT_WIN:
            self.wins += 1
        elif outcome == Outcome.AGENT_LOSE:
            self.losses += 1
        else:
            self.draws += 1
        self.ticks.append(ticks)
        self.rewards.append(reward)

    def summary(self) -> dict:
        lo, hi = wilson_interval(self.wins, self.episodes)
        return {
            "episodes": self.episodes,
            "wins": self.wins,
            "losses": self.losses,
            "draws": self.draws,
            "win_rate": self.win_rate,
            "win_rate_wilson_95": [lo, hi],
            "decided_win_rate": self.decided_win_rate,
            "mean_episode_ticks": float(np.mean(self.ticks)) if self.ticks else 0.0,
            "mean_reward": float(np.mean(self.rewards)) if self.rewards else 0.0,
        }


def evaluate_vs_bt(
    env: CombatEnv, ps: ParamSet, episodes: int, base_seed: int = 0
) -> MatchStats:
    """Greedy (argmax) evaluation episodes against the scripted opponent."""
    stats = MatchStats()
    for k in range(episodes):
        result = run_episode(env, ps, seed=base_seed + k)
        stats.record(result.outcome, result.ticks, result.total_reward)
    return stats


class RoleSwappedWorld:
    """Read-only view of a world with the two combatant roles exchanged."""

    def __init__(self, world: WorldState):
        self._world = world

    @property
    def agent(self):
        return self._world.opponent

    @property
    def opponent(self):
        return self._world.agent

    @property
    def map(self):
        return self._world.map

    @property
    def cfg(self):
        return self._world.cfg

    @property
    def tick(self):
        return self._world.tick

    @property
    def rng(self):
        return self._world.rng

    @property
    def spawn_region(self):
        return self._world.spawn_region

    @property
    def last_seen(self):
        inner = self._world.last_seen
        return {w.AGENT: inner[w.OPPONENT], w.OPPONENT: inner[w.AGENT]}

    @property
    def events(self):
        return self._world.events

    def combatant(self, side: str):
        return self.agent if side == w.AGENT else self.opponent

    def other(self, side: str):
        return self.opponent if side == w.AGENT else self.agent


class _PolicySide:
    """One policy-driven combatant in a two-policy match."""

    def __init__(self, ps: ParamSet, view, mesh: NavMesh, env_cfg: EnvConfig, nav_rng):
        self.ps = ps
        self.view = view
        self.cfg = env_cfg
        self.ctrl = NavController(
            mesh=mesh,
            slice_period=env_cfg.nav_slice_period,
            nav_step_limit=env_cfg.nav_step_limit,
            move_step=env_cfg.combat.step_run,
        )
        self.state = LSTMState.zeros(ps.cfg)
        self.nav_rng = nav_rng

    def _ctx(self) -> MaskContext:
        return MaskContext(
            opponent_visible=w.world_los(self.view, w.AGENT),
            nav_following=self.ctrl.following,
            slice_tick=self.view.tick % self.cfg.nav_slice_period == 0,
            cooldown=self.view.agent.fire_cooldown,
            navmesh_allowed=self.cfg.mode != "pure",
        )

    def decide(self):
        ctx = self._ctx()

        def mask_fn(i, partial):
            return compute_mask(i, tuple(partial) + (0,) * (9 - len(partial)), ctx)

        obs = assemble_observation(self.view, self.ctrl, self.cfg.obs)
        out = act(self.ps, obs, self.state, mask_fn, rng=None)
        self.state = out.state
        combat = self.cfg.combat
        cmds, path_type = decode(
            out.action, ctx, cfg_steps=(combat.step_walk, combat.step_run, combat.step_sprint)
        )
        seen = self.view.last_seen.get(w.AGENT)
        goal = (seen[0], seen[1]) if seen is not None else None
        self.ctrl, override, _ = controller_step(
            self.ctrl, self.view, path_type, self.view.tick, goal=goal, rng=self.nav_rng
        )
        if override is not None:
            cmds.nav_target = override
            cmds.motion_dir_deg = None
        return cmds


def play_policy_match(
    m,
    mesh: NavMesh,
    env_cfg: EnvConfig,
    ps_a: ParamSet,
    ps_b: ParamSet,
    episodes: int,
    base_seed: int = 0,
) -> MatchStats:
    """Argmax-policy match; stats reported from policy A's perspective.

    Spawn slots alternate every episode to cancel positional bias.
    """
    stats = MatchStats()
    for k in range(episodes):
        ss = np.random.SeedSequence(base_seed + k)
        spawn_ss, world_ss, nav_a_ss, nav_b_ss, region_ss = ss.spawn(5)
        region = int(np.random.default_rng(region_ss).integers(len(m.spawn_regions)))
        pose_1, pose_2 = w.spawn_pair(
            m,
            region,
            np.random.default_rng(spawn_ss),
            min_separation=env_cfg.spawn_min_separation,
        )
        if k % 2 == 1:
            pose_1, pose_2 = pose_2, pose_1
        combat = env_cfg.combat
        world = WorldState(
            map=m,
            agent=w.CombatantState(pose=pose_1, ammo=combat.magazine),
            opponent=w.CombatantState(pose=pose_2, ammo=combat.magazine),
            cfg=combat,
            spawn_region=region,
            rng=np.random.default_rng(world_ss),
        )
        side_a = _PolicySide(ps_a, world, mesh, env_cfg, np.random.default_rng(nav_a_ss))
        side_b = _PolicySide(
            ps_b, RoleSwappedWorld(world), mesh, env_cfg, np.random.default_rng(nav_b_ss)
        )
        outcome = Outcome.ONGOING
        while outcome == Outcome.ONGOING:
            cmds_a = side_a.decide()
            cmds_b = side_b.decide()
            w.step(world, cmds_a, cmds_b)
            outcome = w.check_terminal(world, env_cfg.timeout_ticks)
        stats.record(outcome, world.tick)
    return stats
