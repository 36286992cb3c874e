"""Run configuration: JSON round-trip, desk defaults, and config hashing.

A run is one training or evaluation session.  The two map-navigation modes
are mutually exclusive by construction: ``mode`` is a single field, either
"rules" (navmesh path actions enabled) or "pure" (they are masked off
permanently).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .env import EnvConfig
from .net import NetConfig, _config_from_dict
from .perception import ObsConfig
from .rewards import RewardConfig
from .trainer import TrainConfig
from .world import CombatConfig


@dataclass(frozen=True)
class RunConfig:
    map: str = "farm_small"
    mode: str = "rules"  # "rules" | "pure"
    seed: int = 0
    total_steps: int = 50_000
    eval_episodes: int = 100
    out_dir: str = "runs/default"
    env: EnvConfig = field(default_factory=EnvConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        if self.mode not in ("rules", "pure"):
            raise ValueError(f"mode must be 'rules' or 'pure', got {self.mode!r}")
        if self.total_steps <= 0 or self.eval_episodes <= 0:
            raise ValueError("budgets must be positive")
        self.train.validate()
        self.net.validate()
        return self

    def env_config(self) -> EnvConfig:
        """EnvConfig with the run's map/mode and a synced observation block."""
        obs = replace(self.env.obs, timeout_ticks=self.env.timeout_ticks)
        return replace(self.env, mode=self.mode, map_name=self.map, obs=obs)


def desk_run_config(
    mode: str = "rules",
    seed: int = 0,
    total_steps: int = 50_000,
    out_dir: str = "runs/default",
    eval_episodes: int = 100,
) -> RunConfig:
    """Defaults sized to train on a desktop CPU: small LSTM, short episodes."""
    return RunConfig(
        mode=mode,
        seed=seed,
        total_steps=total_steps,
        eval_episodes=eval_episodes,
        out_dir=out_dir,
        net=NetConfig(lstm_hidden=64),
        train=TrainConfig(),
    ).validate()


def config_to_dict(cfg: RunConfig) -> dict:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        if isinstance(obj, list):
            return [clean(v) for v in obj]
        return obj

    return clean(asdict(cfg))


def config_from_dict(data: dict) -> RunConfig:
    env_d = data.get("env", {})
    obs = ObsConfig(**env_d.get("obs", {}))
    combat_d = dict(env_d.get("combat", {}))
    combat = CombatConfig(**combat_d)
    reward = RewardConfig(**env_d.get("reward", {}))
    env_kwargs = {
        k: v for k, v in env_d.items() if k not in ("obs", "combat", "reward")
    }
    env = EnvConfig(obs=obs, combat=combat, reward=reward, **env_kwargs)
    net = _config_from_dict(data.get("net", {})) if data.get("net") else NetConfig()
    train = TrainConfig(**data.get("train", {}))
    top = {
        k: v
        for k, v in data.items()
        if k in ("map", "mode", "seed", "total_steps", "eval_episodes", "out_dir")
    }
    return RunConfig(env=env, net=net, train=train, **top).validate()


def load_run_config(path: str | Path) -> RunConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2))


def config_hash(cfg: RunConfig) -> str:
    """Hash of the behavioral configuration (output location excluded)."""
    data = config_to_dict(cfg)
    data.pop("out_dir", None)
    canonical = json.dumps(data, sort_keys=True)
    return hashlib.sha1(canonical.encode()).hexdigest()[:12]
