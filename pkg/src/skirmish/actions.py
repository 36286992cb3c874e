"""The nine discrete action heads, their hierarchical masks, and decoding.

Heads are predicted in a fixed order; the legality of each head can depend on
heads already chosen (e.g. choosing to fire forbids moving on the same tick)
and on game context (visibility, navigation state, fire cooldown).  Masks are
monotone: rules only remove entries, and every rule leaves at least one legal
entry per head.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .world import BARREL_PITCH_RANGE, BARREL_YAW_RANGE, Commands, Lean, Posture

HEAD_SPECS: tuple[tuple[str, int], ...] = (
    ("fire", 2),
    ("gun_yaw", 13),
    ("gun_pitch", 8),
    ("move_type", 4),
    ("path_type", 4),
    ("motion", 17),
    ("posture", 4),
    ("lean", 3),
    ("special", 3),
)
N_HEADS = len(HEAD_SPECS)
HEAD_NAMES = tuple(name for name, _ in HEAD_SPECS)
HEAD_SIZES = tuple(size for _, size in HEAD_SPECS)
HEAD_INDEX = {name: i for i, (name, _) in enumerate(HEAD_SPECS)}

MOTION_NONE = 16  # the 17th motion entry: stay in place


class FireAction(IntEnum):
    HOLD = 0
    SHOOT = 1


class MoveType(IntEnum):
    STATIONARY = 0
    WALK = 1
    RUN = 2
    SPRINT = 3


class PathType(IntEnum):
    ATOMIC = 0
    NAV_NEW = 1
    NAV_KEEP = 2
    IDLE = 3


class SpecialAction(IntEnum):
    NONE = 0
    ADS = 1
    RELOAD = 2


GUN_YAW_TABLE = np.linspace(BARREL_YAW_RANGE[0], BARREL_YAW_RANGE[1], 13)
GUN_PITCH_TABLE = np.linspace(BARREL_PITCH_RANGE[0], BARREL_PITCH_RANGE[1], 8)

_POSTURES = (Posture.STAND, Posture.CROUCH, Posture.PRONE, Posture.JUMP)
_LEANS = (Lean.NONE, Lean.LEFT, Lean.RIGHT)


def head_specs() -> tuple[tuple[str, int], ...]:
    """The fixed (name, cardinality) list, in prediction order."""
    return HEAD_SPECS


@dataclass(frozen=True)
class MaskContext:
    """Game context the mask rules read."""

    opponent_visible: bool = False
    nav_following: bool = False
    slice_tick: bool = True  # current tick is a navmesh-request boundary
    cooldown: int = 0
    navmesh_allowed: bool = True  # False in the pure-RL ablation


class IllegalActionError(ValueError):
    def __init__(self, rule: str, head: str, index: int):
        super().__init__(f"action head '{head}' index {index} violates rule '{rule}'")
        self.rule = rule
        self.head = head
        self.index = index


def compute_mask(
    head_index: int, partial_action: tuple[int, ...], ctx: MaskContext
) -> np.ndarray:
    """Legality vector for one head given the heads already chosen.

    Rules, in order:
      1. fire=shoot forbids translation (motion -> no-move, move_type -> stationary)
      2. a visible opponent restricts path_type to {atomic, idle}
      3. while path-following, path_type is exactly {nav_keep} and motion no-move
      4. off-slice ticks forbid nav_new requests
      5. cooldown > 0 forbids fire=shoot
      6. prone forbids leaning
    """
    name, size = HEAD_SPECS[head_index]
    mask = np.ones(size, dtype=bool)
    if name == "fire":
        if ctx.cooldown > 0:
            mask[:] = False
            mask[FireAction.HOLD] = True
    elif name == "move_type":
        if partial_action[HEAD_INDEX["fire"]] == FireAction.SHOOT:
            mask[:] = False
            mask[MoveType.STATIONARY] = True
    elif name == "path_type":
        if ctx.nav_following:
            mask[:] = False
            mask[PathType.NAV_KEEP] = True
        else:
            if not ctx.navmesh_allowed:
                mask[PathType.NAV_NEW] = False
                mask[PathType.NAV_KEEP] = False
            if ctx.opponent_visible:
                mask[PathType.NAV_NEW] = False
                mask[PathType.NAV_KEEP] = False
            if not ctx.slice_tick:
                mask[PathType.NAV_NEW] = False
    elif name == "motion":
        if (
            partial_action[HEAD_INDEX["fire"]] == FireAction.SHOOT
            or ctx.nav_following
        ):
            mask[:] = False
            mask[MOTION_NONE] = True
    elif name == "lean":
        if partial_action[HEAD_INDEX["posture"]] == Posture.PRONE:
            mask[:] = False
            mask[Lean.NONE] = True
    return mask


def mask_set(ctx: MaskContext, action: tuple[int, ...]) -> list[np.ndarray]:
    """All nine masks as they applied while sampling ``action`` head by head."""
    return [compute_mask(i, action, ctx) for i in range(N_HEADS)]


def _violated_rule(head: str, index: int, partial: tuple[int, ...], ctx: MaskContext) -> str:
    if head == "fire" and ctx.cooldown > 0 and index == FireAction.SHOOT:
        return "cooldown_hold"
    if head == "move_type" and partial[HEAD_INDEX["fire"]] == FireAction.SHOOT:
        return "fire_no_move"
    if head == "path_type":
        if ctx.nav_following:
            return "following_keep_only"
        if not ctx.navmesh_allowed and index in (PathType.NAV_NEW, PathType.NAV_KEEP):
            return "navmesh_disabled"
        if ctx.opponent_visible and index in (PathType.NAV_NEW, PathType.NAV_KEEP):
            return "visible_path_atomic"
        if not ctx.slice_tick and index == PathType.NAV_NEW:
            return "slice_gate"
    if head == "motion":
        if partial[HEAD_INDEX["fire"]] == FireAction.SHOOT:
            return "fire_no_move"
        if ctx.nav_following:
            return "following_no_motion"
    if head == "lean" and partial[HEAD_INDEX["posture"]] == Posture.PRONE:
        return "prone_no_lean"
    return "unknown"


def validate_action(action: tuple[int, ...], ctx: MaskContext) -> None:
    """Raise IllegalActionError naming the violated rule for an illegal tuple."""
    if len(action) != N_HEADS:
        raise ValueError(f"expected {N_HEADS} head indices, got {len(action)}")
    for i, (name, size) in enumerate(HEAD_SPECS):
        idx = action[i]
        if not (0 <= idx < size):
            raise IllegalActionError("cardinality", name, idx)
        mask = compute_mask(i, action, ctx)
        if not mask[idx]:
            raise IllegalActionError(_violated_rule(name, idx, action, ctx), name, idx)


def decode(
    action: tuple[int, ...],
    ctx: MaskContext | None = None,
    cfg_steps: tuple[float, float, float] = (0.5, 1.0, 1.5),
) -> tuple[Commands, PathType]:
    """Turn a legal action tuple into physics commands plus the path request.

    ``cfg_steps`` gives (walk, run, sprint) step lengths in meters per tick.
    When ``ctx`` is provided the tuple is validated against the mask rules.
    """
    if ctx is not None:
        validate_action(action, ctx)
    fire = action[HEAD_INDEX["fire"]] == FireAction.SHOOT
    yaw_delta = float(GUN_YAW_TABLE[action[HEAD_INDEX["gun_yaw"]]])
    pitch_delta = float(GUN_PITCH_TABLE[action[HEAD_INDEX["gun_pitch"]]])
    move_type = MoveType(action[HEAD_INDEX["move_type"]])
    path_type = PathType(action[HEAD_INDEX["path_type"]])
    motion = action[HEAD_INDEX["motion"]]
    posture = _POSTURES[action[HEAD_INDEX["posture"]]]
    lean = _LEANS[action[HEAD_INDEX["lean"]]]
    special = SpecialAction(action[HEAD_INDEX["special"]])

    step_table = {
        MoveType.STATIONARY: 0.0,
        MoveType.WALK: cfg_steps[0],
        MoveType.RUN: cfg_steps[1],
        MoveType.SPRINT: cfg_steps[2],
    }
    cmds = Commands(
        fire=fire,
        yaw_delta=yaw_delta,
        pitch_delta=pitch_delta,
        move_step=step_table[move_type],
        motion_dir_deg=None if motion == MOTION_NONE else motion * 22.5,
        posture=posture,
        lean=lean,
        reload=special == SpecialAction.RELOAD,
        ads=special == SpecialAction.ADS,
    )
    return cmds, path_type


def sample_random_legal(
    ctx: MaskContext, rng: np.random.Generator
) -> tuple[int, ...]:
    """Uniform random legal tuple (test/fuzz helper)."""
    action = [0] * N_HEADS
    for i in range(N_HEADS):
        mask = compute_mask(i, tuple(action), ctx)
        legal = np.flatnonzero(mask)
        action[i] = int(rng.choice(legal))
    return tuple(action)


def action_log_line(
    tick: int, action: tuple[int, ...], masks: list[np.ndarray]
) -> str:
    """One replay-log line: tick, nine indices, per-head mask bitmaps in hex."""
    bitmaps = []
    for mask in masks:
        bits = 0
        for i, legal in enumerate(mask):
            if legal:
                bits |= 1 << i
        bitmaps.append(f"{bits:x}")
    return ",".join([str(tick), *map(str, action), *bitmaps])


def parse_action_log_line(line: str) -> tuple[int, tuple[int, ...], list[int]]:
    parts = line.strip().split(",")
    tick = int(parts[0])
    action = tuple(int(x) for x in parts[1 : 1 + N_HEADS])
    bitmaps = [int(x, 16) for x in parts[1 + N_HEADS :]]
    return tick, action, bitmaps
