"""Per-step and terminal reward computation.

The reward is a sum of three parts: a terminal outcome reward (+20 win,
-20 lose, -25 draw: timing out is punished harder than dying), a navigation
reward of 0.05 per meter of distance closed toward the opponent, and named
auxiliary terms split into combat components (damage dealt/taken, firing
without a visible target) and movement components (posture spam, grinding
along walls).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import world as w

WIN_REWARD = 20.0
LOSE_REWARD = -20.0
DRAW_REWARD = -25.0
NAV_COEF = 0.05


@dataclass(frozen=True)
class RewardConfig:
    win: float = WIN_REWARD
    lose: float = LOSE_REWARD
    draw: float = DRAW_REWARD
    nav_coef: float = NAV_COEF
    # Literal reading of the navigation term: reward the raw separation
    # distance instead of the per-step decrease (ablation flag).
    literal_distance: bool = False
    damage_dealt: float = 0.1
    damage_taken: float = -0.05
    blind_shot: float = -0.02
    posture_spam: float = -0.01  # more than one posture change within 5 ticks
    wall_grind: float = -0.01  # colliding with walls 3+ consecutive ticks
    posture_window: int = 5
    wall_streak: int = 3


@dataclass(frozen=True)
class RewardBreakdown:
    r_terminal: float
    r_nav: float
    r_aux: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.r_terminal + self.r_nav + sum(self.r_aux.values())


def terminal_reward(outcome: w.Outcome, cfg: RewardConfig = RewardConfig()) -> float:
    """Outcome reward; calling this on a non-terminal outcome is a bug."""
    if outcome == w.Outcome.AGENT_WIN:
        return cfg.win
    if outcome == w.Outcome.AGENT_LOSE:
        return cfg.lose
    if outcome == w.Outcome.DRAW:
        return cfg.draw
    raise ValueError("terminal_reward called on a non-terminal outcome")


def nav_reward(
    prev_distance: float, distance: float, cfg: RewardConfig = RewardConfig()
) -> float:
    """Navigation term: positive when closing in on the opponent."""
    if prev_distance < 0 or distance < 0:
        raise ValueError("distances must be non-negative")
    if cfg.literal_distance:
        return distance * cfg.nav_coef
    return (prev_distance - distance) * cfg.nav_coef


def aux_reward(
    events: list, state: w.CombatantState, cfg: RewardConfig = RewardConfig(),
    side: str = w.AGENT,
) -> dict[str, float]:
    """Named auxiliary components for one side, from this tick's events."""
    out: dict[str, float] = {}
    dealt = sum(e.damage for e in events if isinstance(e, w.Hit) and e.shooter == side)
    taken = sum(e.damage for e in events if isinstance(e, w.Hit) and e.target == side)
    blind = sum(
        1 for e in events if isinstance(e, w.ShotFired) and e.shooter == side and e.blind
    )
    if dealt:
        out["damage_dealt"] = dealt * cfg.damage_dealt
    if taken:
        out["damage_taken"] = taken * cfg.damage_taken
    if blind:
        out["blind_shot"] = blind * cfg.blind_shot
    changed_now = any(isinstance(e, w.PostureChange) and e.who == side for e in events)
    if changed_now and len(state.posture_change_ticks) >= 2:
        out["posture_spam"] = cfg.posture_spam
    if state.collision_streak >= cfg.wall_streak:
        out["wall_collision"] = cfg.wall_grind
    return out


def total_reward(
    outcome: w.Outcome | None,
    prev_distance: float,
    distance: float,
    events: list,
    state: w.CombatantState,
    cfg: RewardConfig = RewardConfig(),
    side: str = w.AGENT,
) -> RewardBreakdown:
    """Compose the full breakdown; the terminal part appears only when terminal."""
    r_t = 0.0
    if outcome is not None and outcome != w.Outcome.ONGOING:
        r_t = terminal_reward(outcome, cfg)
    r_d = nav_reward(prev_distance, distance, cfg)
    aux = aux_reward(events, state, cfg, side=side)
    return RewardBreakdown(r_terminal=r_t, r_nav=r_d, r_aux=aux)
