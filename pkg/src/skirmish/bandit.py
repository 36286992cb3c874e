"""Two-armed bandit wired through the full policy/trainer stack.

One-step episodes with a constant observation: the fire head is the bandit
arm (shoot pays 1, hold pays 0), every other head is ignored.  Training this
to near-determinism catches sign and plumbing errors in the loss pipeline
cheaply before any long simulation run.
"""

from __future__ import annotations

import numpy as np

from .actions import HEAD_SIZES, N_HEADS
from .net import NetConfig
from .perception import Observation
from .rewards import RewardBreakdown

TINY_NET = NetConfig(
    basic_dim=4,
    opponent_dim=3,
    env_dim=4,
    depth_shape=(8, 10),
    depth_kernels=(3, 3),
    depth_strides=(2, 1),
    depth_channels=(2, 3),
    lidar_shape=(12, 3),
    lidar_kernel=3,
    lidar_channels=(2, 2),
    scalar_hidden=8,
    scalar_out=6,
    depth_out=6,
    lidar_out=4,
    fusion_out=12,
    lstm_hidden=12,
    head_embed_dim=4,
    seed=0,
)


class BanditEnv:
    """Duck-typed like CombatEnv: reset / step / mask_fn / mask_context."""

    def __init__(self, cfg: NetConfig = TINY_NET, good_arm: int = 1, payout: float = 1.0):
        self.cfg = cfg
        self.good_arm = good_arm
        self.payout = payout
        self._obs = Observation(
            basic=np.zeros(cfg.basic_dim, dtype=np.float32),
            opponent=np.zeros(cfg.opponent_dim, dtype=np.float32),
            env=np.zeros(cfg.env_dim, dtype=np.float32),
            depth=np.zeros(cfg.depth_shape, dtype=np.float32),
            lidar=np.zeros(cfg.lidar_shape, dtype=np.float32),
        )
        self._masks = [np.ones(size, dtype=bool) for size in HEAD_SIZES]

    @property
    def mask_context(self):
        return None

    def mask_fn(self, head_idx: int, partial: tuple[int, ...]) -> np.ndarray:
        return self._masks[head_idx]

    def reset(self, seed: int) -> Observation:
        return self._obs

    def step(self, action: tuple[int, ...]):
        reward = self.payout if action[0] == self.good_arm else 0.0
        breakdown = RewardBreakdown(r_terminal=0.0, r_nav=0.0, r_aux={"bandit": reward})
        info = {
            "outcome": None,
            "masks": [m.copy() for m in self._masks],
            "tick": 1,
            "agent_pos": (0.0, 0.0),
            "events": [],
            "nav_mode": "inactive",
        }
        return self._obs, breakdown, True, info
