"""Action head specs, hierarchical masks, decoding, and the log format."""

import math

import numpy as np
import pytest

from skirmish.actions import (
    GUN_PITCH_TABLE,
    GUN_YAW_TABLE,
    HEAD_INDEX,
    HEAD_SIZES,
    HEAD_SPECS,
    MOTION_NONE,
    N_HEADS,
    FireAction,
    IllegalActionError,
    MaskContext,
    MoveType,
    PathType,
    SpecialAction,
    action_log_line,
    compute_mask,
    decode,
    head_specs,
    mask_set,
    parse_action_log_line,
    sample_random_legal,
    validate_action,
)
from skirmish.world import Lean, Posture


class TestHeadSpecs:
    def test_joint_space_size(self):
        # Oracle: product of the fixed head cardinalities.
        expected = math.prod(size for _, size in HEAD_SPECS)
        assert expected == 2 * 13 * 8 * 4 * 4 * 17 * 4 * 3 * 3
        assert expected == 2_036_736

    def test_nine_heads(self):
        assert len(head_specs()) == 9

    def test_path_type_precedes_motion(self):
        assert HEAD_INDEX["path_type"] < HEAD_INDEX["motion"]

    def test_cardinalities(self):
        assert HEAD_SIZES == (2, 13, 8, 4, 4, 17, 4, 3, 3)


NEUTRAL = (0, 6, 4, 0, 0, 16, 0, 0, 0)


class TestComputeMask:
    def test_fire_masks_motion_and_move_type(self):
        ctx = MaskContext(opponent_visible=True)
        partial = (int(FireAction.SHOOT),) + NEUTRAL[1:]
        motion_mask = compute_mask(HEAD_INDEX["motion"], partial, ctx)
        assert motion_mask.sum() == 1 and motion_mask[MOTION_NONE]
        move_mask = compute_mask(HEAD_INDEX["move_type"], partial, ctx)
        assert move_mask.sum() == 1 and move_mask[MoveType.STATIONARY]

    def test_visible_opponent_masks_nav_paths(self):
        ctx = MaskContext(opponent_visible=True)
        mask = compute_mask(HEAD_INDEX["path_type"], NEUTRAL, ctx)
        assert not mask[PathType.NAV_NEW]
        assert not mask[PathType.NAV_KEEP]
        assert mask[PathType.ATOMIC] and mask[PathType.IDLE]

    def test_following_forces_keep_and_no_motion(self):
        ctx = MaskContext(nav_following=True)
        mask = compute_mask(HEAD_INDEX["path_type"], NEUTRAL, ctx)
        assert mask.sum() == 1 and mask[PathType.NAV_KEEP]
        motion = compute_mask(HEAD_INDEX["motion"], NEUTRAL, ctx)
        assert motion.sum() == 1 and motion[MOTION_NONE]

    def test_off_slice_masks_new_requests(self):
        ctx = MaskContext(slice_tick=False)
        mask = compute_mask(HEAD_INDEX["path_type"], NEUTRAL, ctx)
        assert not mask[PathType.NAV_NEW]
        assert mask[PathType.NAV_KEEP]

    def test_cooldown_masks_fire(self):
        ctx = MaskContext(cooldown=2)
        mask = compute_mask(HEAD_INDEX["fire"], NEUTRAL, ctx)
        assert mask.sum() == 1 and mask[FireAction.HOLD]

    def test_first_head_all_legal_with_empty_context(self):
        ctx = MaskContext()
        mask = compute_mask(0, NEUTRAL, ctx)
        assert mask.all()

    def test_prone_masks_lean(self):
        ctx = MaskContext()
        partial = list(NEUTRAL)
        partial[HEAD_INDEX["posture"]] = int(Posture.PRONE)
        mask = compute_mask(HEAD_INDEX["lean"], tuple(partial), ctx)
        assert mask.sum() == 1 and mask[Lean.NONE]

    def test_pure_mode_masks_navmesh_permanently(self):
        ctx = MaskContext(navmesh_allowed=False, slice_tick=True)
        mask = compute_mask(HEAD_INDEX["path_type"], NEUTRAL, ctx)
        assert not mask[PathType.NAV_NEW] and not mask[PathType.NAV_KEEP]


class TestMaskClosure:
    def test_every_head_keeps_a_legal_entry_fuzz(self, rng):
        # Closure property: any tuple sampled under the masks re-validates.
        for _ in range(3000):
            ctx = MaskContext(
                opponent_visible=bool(rng.integers(2)),
                nav_following=bool(rng.integers(2)),
                slice_tick=bool(rng.integers(2)),
                cooldown=int(rng.integers(4)),
                navmesh_allowed=bool(rng.integers(2)),
            )
            action = sample_random_legal(ctx, rng)
            for i in range(N_HEADS):
                mask = compute_mask(i, action, ctx)
                assert mask.any()
            validate_action(action, ctx)  # must not raise

    def test_mask_monotone_vs_unmasked(self, rng):
        free = MaskContext()
        for _ in range(200):
            ctx = MaskContext(
                opponent_visible=bool(rng.integers(2)),
                nav_following=bool(rng.integers(2)),
                slice_tick=bool(rng.integers(2)),
                cooldown=int(rng.integers(3)),
            )
            action = sample_random_legal(ctx, rng)
            for i in range(N_HEADS):
                restricted = compute_mask(i, action, ctx)
                unmasked = compute_mask(i, action, free)
                assert np.all(unmasked | ~restricted)  # restricted subset of free


class TestDecode:
    def test_center_yaw_index_is_zero_delta(self):
        assert GUN_YAW_TABLE[6] == pytest.approx(0.0)
        cmds, _ = decode((0, 6, 4, 0, 0, 16, 0, 0, 0))
        assert cmds.yaw_delta == pytest.approx(0.0)

    def test_gun_tables_span(self):
        assert GUN_YAW_TABLE[0] == -30.0 and GUN_YAW_TABLE[-1] == 30.0
        assert GUN_PITCH_TABLE[0] == -20.0 and GUN_PITCH_TABLE[-1] == 15.0
        assert len(GUN_YAW_TABLE) == 13 and len(GUN_PITCH_TABLE) == 8

    def test_motion_16_is_no_translation(self):
        cmds, _ = decode((0, 6, 4, 2, 0, 16, 0, 0, 0))
        assert cmds.motion_dir_deg is None

    def test_motion_index_angle(self):
        cmds, _ = decode((0, 6, 4, 2, 0, 4, 0, 0, 0))
        assert cmds.motion_dir_deg == pytest.approx(90.0)
        assert cmds.move_step == pytest.approx(1.0)  # run

    def test_navmesh_request_path_type(self):
        _, path_type = decode((0, 6, 4, 0, 1, 16, 0, 0, 0))
        assert path_type == PathType.NAV_NEW

    def test_special_actions(self):
        reload_cmds, _ = decode((0, 6, 4, 0, 0, 16, 0, 0, int(SpecialAction.RELOAD)))
        assert reload_cmds.reload and not reload_cmds.ads
        ads_cmds, _ = decode((0, 6, 4, 0, 0, 16, 0, 0, int(SpecialAction.ADS)))
        assert ads_cmds.ads and not ads_cmds.reload

    def test_illegal_tuple_rejected_with_rule(self):
        ctx = MaskContext(cooldown=3)
        with pytest.raises(IllegalActionError) as exc:
            decode((1, 6, 4, 0, 0, 16, 0, 0, 0), ctx)
        assert exc.value.rule == "cooldown_hold"

    def test_fire_plus_motion_rejected(self):
        ctx = MaskContext()
        with pytest.raises(IllegalActionError) as exc:
            decode((1, 6, 4, 0, 0, 3, 0, 0, 0), ctx)
        assert exc.value.rule == "fire_no_move"

    def test_sampled_actions_always_decode(self, rng):
        for _ in range(2000):
            ctx = MaskContext(
                opponent_visible=bool(rng.integers(2)),
                nav_following=bool(rng.integers(2)),
                slice_tick=bool(rng.integers(2)),
                cooldown=int(rng.integers(4)),
                navmesh_allowed=bool(rng.integers(2)),
            )
            action = sample_random_legal(ctx, rng)
            decode(action, ctx)  # must not raise


class TestActionLog:
    def test_round_trip(self, rng):
        ctx = MaskContext(opponent_visible=True, cooldown=1)
        action = sample_random_legal(ctx, rng)
        masks = mask_set(ctx, action)
        line = action_log_line(42, action, masks)
        tick, parsed_action, bitmaps = parse_action_log_line(line)
        assert tick == 42
        assert parsed_action == action
        for i, bits in enumerate(bitmaps):
            mask = masks[i]
            for j in range(len(mask)):
                assert bool(bits >> j & 1) == bool(mask[j])
