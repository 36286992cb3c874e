"""PPO training: advantage estimation, clipped losses, actor/learner loops.

The learner consumes fixed-length transition segments (never spanning episode
boundaries), estimates advantages with GAE, and runs minibatched clipped-PPO
updates with teacher-forced recurrent re-evaluation.  Collection and updating
alternate in a single thread by default, which makes runs bit-reproducible;
a process-based actor pool provides parallel collection where reproducibility
is not required.  Published parameter snapshots are versioned, and segments
whose policy version lags too far behind the learner are dropped rather than
corrected.
"""

from __future__ import annotations

import os
import queue
import threading
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .actions import HEAD_SIZES, N_HEADS
from .autodiff import Tensor
from .net import LSTMState, NetConfig, ParamSet, act, evaluate_actions, save_checkpoint
from .perception import Observation
from .rewards import RewardBreakdown
from .world import Outcome


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.995
    lam: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 3e-4
    epochs: int = 2
    minibatch_segments: int = 8
    rollout_length: int = 32
    batch_segments: int = 32
    actor_count: int = 1
    staleness_bound: int = 2
    grad_clip: float = 0.5
    normalize_advantages: bool = True
    mc_value_targets: bool = False  # plain discounted-return value targets

    def validate(self) -> "TrainConfig":
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam <= 1.0):
            raise ValueError("gamma and lambda must lie in (0, 1]")
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError("clip epsilon must lie in (0, 1)")
        return self


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path


# ---------------------------------------------------------------------------
# Advantage estimation and losses


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_value: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages and value targets (targets = advantages + values).

    delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t
    A_t     = delta_t + gamma*lam*(1-done_t)*A_{t+1}
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values, dones must have equal lengths")
    t_len = len(rewards)
    adv = np.zeros(t_len)
    next_value = float(bootstrap_value)
    next_adv = 0.0
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        adv[t] = delta + gamma * lam * nonterminal * next_adv
        next_value = values[t]
        next_adv = adv[t]
    return adv, adv + values


def discounted_returns(
    rewards: np.ndarray, dones: np.ndarray, bootstrap_value: float, gamma: float
) -> np.ndarray:
    """Plain Monte-Carlo returns with bootstrap on truncated tails."""
    t_len = len(rewards)
    out = np.zeros(t_len)
    running = float(bootstrap_value)
    for t in range(t_len - 1, -1, -1):
        running = rewards[t] + gamma * running * (1.0 - dones[t])
        out[t] = running
    return out


def ppo_policy_loss(
    new_logp: Tensor, old_logp: np.ndarray, advantages: np.ndarray, clip_eps: float
) -> Tensor:
    """Clipped-surrogate loss: -mean(min(rho*A, clip(rho)*A)), rho = exp(new-old)."""
    with np.errstate(over="ignore"):  # overflow -> inf, rejected just below
        ratio = ad.exp(new_logp - Tensor(old_logp))
    if not np.isfinite(ratio.data).all():
        bad = int(np.flatnonzero(~np.isfinite(ratio.data))[0])
        raise TrainingDiverged(f"non-finite importance ratio at step {bad}")
    adv = Tensor(np.asarray(advantages, dtype=np.float64))
    objective = ad.minimum(ratio * adv, ad.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)
    return ad.neg(ad.tmean(objective))


def value_loss(values: Tensor, targets: np.ndarray) -> Tensor:
    diff = values - Tensor(np.asarray(targets, dtype=np.float64))
    return ad.tmean(diff * diff)


def total_loss(
    policy_loss_t: Tensor, value_loss_t: Tensor, entropy_t: Tensor, alpha: float, beta: float
) -> Tensor:
    """Loss to minimize: policy + alpha*value - beta*entropy."""
    return policy_loss_t + alpha * value_loss_t - beta * entropy_t


class Adam:
    """Adam with global gradient-norm clipping, over a ParamSet."""

    def __init__(
        self,
        ps: ParamSet,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        grad_clip: float = 0.5,
    ):
        self.ps = ps
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in ps.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in ps.params.items()}

    def step(self) -> float:
        """Apply one update from accumulated gradients; returns the grad norm."""
        grads = {}
        sq = 0.0
        for name, p in self.ps.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            grads[name] = g
            sq += float((g * g).sum())
        norm = float(np.sqrt(sq))
        scale = 1.0
        if self.grad_clip > 0.0 and norm > self.grad_clip:
            scale = self.grad_clip / (norm + 1e-12)
        self.t += 1
        bias1 = 1.0 - self.b1**self.t
        bias2 = 1.0 - self.b2**self.t
        for name, p in self.ps.params.items():
            g = grads[name] * scale
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return norm


# ---------------------------------------------------------------------------
# Rollout data


@dataclass
class Transition:
    obs: Observation
    action: tuple[int, ...]
    log_probs: np.ndarray  # (9,)
    total_log_prob: float
    value: float
    reward: RewardBreakdown
    done: bool
    masks: list[np.ndarray]
    version: int


@dataclass
class Segment:
    transitions: list[Transition]
    init_state: LSTMState
    bootstrap_value: float
    version: int
    final_outcome: Outcome | None = None

    def __len__(self) -> int:
        return len(self.transitions)


class RolloutCollector:
    """Plays episodes with the latest snapshot, cutting fixed-length segments.

    Episode seeds are partitioned across actors: actor k of n uses
    base_seed + k, base_seed + k + n, ...  Segments never span episode
    boundaries; a truncated segment bootstraps with the value estimate of the
    next observation under the parameters that collected it.
    """

    def __init__(
        self,
        env,
        snapshot_provider: Callable[[], ParamSet],
        cfg: TrainConfig,
        base_seed: int,
        actor_id: int = 0,
        n_actors: int = 1,
    ):
        self.env = env
        self.provider = snapshot_provider
        self.cfg = cfg
        self.base_seed = base_seed
        self.actor_id = actor_id
        self.n_actors = n_actors
        self.episode_index = 0
        self.sample_rng = np.random.default_rng(
            np.random.SeedSequence([base_seed, actor_id, 0xA5])
        )
        self.outcomes: deque[Outcome] = deque(maxlen=200)
        self.episode_rewards: deque[float] = deque(maxlen=200)
        self.total_steps = 0

    def next_episode_seed(self) -> int:
        seed = self.base_seed + self.actor_id + self.episode_index * self.n_actors
        self.episode_index += 1
        return seed

    def segments(self) -> Iterable[Segment]:
        """Generator of segments; fetches a fresh snapshot per segment."""
        cfg = self.cfg
        while True:
            ps = self.provider()
            version = ps.version
            obs = self.env.reset(self.next_episode_seed())
            state = LSTMState.zeros(ps.cfg)
            episode_reward = 0.0
            transitions: list[Transition] = []
            seg_init = state.copy()
            done = False
            while not done:
                out = act(ps, obs, state, self.env.mask_fn, rng=self.sample_rng)
                if len(transitions) == cfg.rollout_length:
                    # Truncated segment: bootstrap with V of the pending obs.
                    yield Segment(
                        transitions=transitions,
                        init_state=seg_init,
                        bootstrap_value=out.value,
                        version=version,
                    )
                    transitions = []
                    seg_init = state.copy()
                    ps = self.provider()
                    version = ps.version
                state = out.state
                next_obs, breakdown, done, info = self.env.step(out.action)
                episode_reward += breakdown.total
                self.total_steps += 1
                transitions.append(
                    Transition(
                        obs=obs,
                        action=out.action,
                        log_probs=out.log_probs,
                        total_log_prob=out.total_log_prob,
                        value=out.value,
                        reward=breakdown,
                        done=done,
                        masks=info["masks"],
                        version=version,
                    )
                )
                obs = next_obs
                if done:
                    outcome = info.get("outcome")
                    if outcome is not None:
                        self.outcomes.append(outcome)
                    self.episode_rewards.append(episode_reward)
                    yield Segment(
                        transitions=transitions,
                        init_state=seg_init,
                        bootstrap_value=0.0,
                        version=version,
                        final_outcome=outcome,
                    )

    def win_rate(self) -> float:
        if not self.outcomes:
            return 0.0
        wins = sum(1 for o in self.outcomes if o == Outcome.AGENT_WIN)
        return wins / len(self.outcomes)


# ---------------------------------------------------------------------------
# Batch assembly and the learner


@dataclass
class RolloutBatch:
    """Padded segment arrays with advantages computed before any update."""

    basic: np.ndarray  # (N, T, B)
    opponent: np.ndarray
    env: np.ndarray
    depth: np.ndarray
    lidar: np.ndarray
    actions: np.ndarray  # (N, T, 9)
    masks: list[np.ndarray]  # per head (N, T, size)
    old_logp: np.ndarray  # (N, T)
    old_values: np.ndarray
    advantages: np.ndarray
    targets: np.ndarray
    step_mask: np.ndarray  # (N, T) 1 for real steps
    init_h: np.ndarray
    init_c: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.step_mask.sum())


def build_batch(segments: list[Segment], cfg: TrainConfig) -> RolloutBatch:
    n = len(segments)
    t_max = max(len(s) for s in segments)
    first = segments[0].transitions[0].obs
    b_dim = first.basic.shape[0]
    o_dim = first.opponent.shape[0]
    e_dim = first.env.shape[0]
    d_shape = first.depth.shape
    l_shape = first.lidar.shape
    h_dim = segments[0].init_state.h.shape[1]

    basic = np.zeros((n, t_max, b_dim))
    opponent = np.zeros((n, t_max, o_dim))
    env_b = np.zeros((n, t_max, e_dim))
    depth = np.zeros((n, t_max, *d_shape))
    lidar = np.zeros((n, t_max, *l_shape))
    actions = np.zeros((n, t_max, N_HEADS), dtype=np.int64)
    masks = [np.ones((n, t_max, size), dtype=bool) for size in HEAD_SIZES]
    old_logp = np.zeros((n, t_max))
    old_values = np.zeros((n, t_max))
    advantages = np.zeros((n, t_max))
    targets = np.zeros((n, t_max))
    step_mask = np.zeros((n, t_max))
    init_h = np.zeros((n, h_dim))
    init_c = np.zeros((n, h_dim))

    for i, seg in enumerate(segments):
        t_len = len(seg)
        rewards = np.array([tr.reward.total for tr in seg.transitions])
        values = np.array([tr.value for tr in seg.transitions])
        dones = np.array([float(tr.done) for tr in seg.transitions])
        adv, tgt = compute_gae(rewards, values, dones, seg.bootstrap_value, cfg.gamma, cfg.lam)
        if cfg.mc_value_targets:
            tgt = discounted_returns(rewards, dones, seg.bootstrap_value, cfg.gamma)
        advantages[i, :t_len] = adv
        targets[i, :t_len] = tgt
        old_values[i, :t_len] = values
        step_mask[i, :t_len] = 1.0
        init_h[i] = seg.init_state.h[0]
        init_c[i] = seg.init_state.c[0]
        for t, tr in enumerate(seg.transitions):
            basic[i, t] = tr.obs.basic
            opponent[i, t] = tr.obs.opponent
            env_b[i, t] = tr.obs.env
            depth[i, t] = tr.obs.depth
            lidar[i, t] = tr.obs.lidar
            actions[i, t] = tr.action
            old_logp[i, t] = tr.total_log_prob
            for hi in range(N_HEADS):
                masks[hi][i, t] = tr.masks[hi]

    if cfg.normalize_advantages:
        valid = step_mask > 0
        vals = advantages[valid]
        mean = vals.mean()
        std = vals.std()
        advantages = np.where(valid, (advantages - mean) / (std + 1e-8), 0.0)

    return RolloutBatch(
        basic=basic,
        opponent=opponent,
        env=env_b,
        depth=depth,
        lidar=lidar,
        actions=actions,
        masks=masks,
        old_logp=old_logp,
        old_values=old_values,
        advantages=advantages,
        targets=targets,
        step_mask=step_mask,
        init_h=init_h,
        init_c=init_c,
    )


class Learner:
    """Sole writer of parameters; publishes immutable versioned snapshots."""

    def __init__(
        self, ps: ParamSet, cfg: TrainConfig, seed: int = 0, dump_dir: str | None = None
    ):
        cfg.validate()
        self.ps = ps
        self.cfg = cfg
        self.adam = Adam(ps, lr=cfg.learning_rate, grad_clip=cfg.grad_clip)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1EAF]))
        self.staleness_dropped = 0
        self.consumed_lags: Counter = Counter()
        self.dump_dir = dump_dir
        self._snapshot = ps.copy()

    def snapshot(self) -> ParamSet:
        return self._snapshot

    def filter_stale(self, segments: list[Segment]) -> list[Segment]:
        kept = []
        for seg in segments:
            lag = self.ps.version - seg.version
            if lag > self.cfg.staleness_bound:
                self.staleness_dropped += 1
            else:
                self.consumed_lags[lag] += 1
                kept.append(seg)
        return kept

    def update(self, segments: list[Segment]) -> dict:
        """One full PPO update over a batch of segments; bumps the version."""
        segments = self.filter_stale(segments)
        if not segments:
            return {"skipped": True}
        cfg = self.cfg
        batch = build_batch(segments, cfg)
        n = len(segments)
        policy_losses, value_losses, entropies, grad_norms = [], [], [], []
        for _ in range(cfg.epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.minibatch_segments):
                idx = order[start : start + cfg.minibatch_segments]
                metrics = self._minibatch_step(batch, idx)
                policy_losses.append(metrics["policy_loss"])
                value_losses.append(metrics["value_loss"])
                entropies.append(metrics["entropy"])
                grad_norms.append(metrics["grad_norm"])
        self.ps.version += 1
        self._snapshot = self.ps.copy()
        return {
            "version": self.ps.version,
            "policy_loss": float(np.mean(policy_losses)),
            "value_loss": float(np.mean(value_losses)),
            "entropy": float(np.mean(entropies)),
            "grad_norm": float(np.mean(grad_norms)),
            "batch_steps": batch.n_steps,
            "staleness": dict(self.consumed_lags),
        }

    def _minibatch_step(self, batch: RolloutBatch, idx: np.ndarray) -> dict:
        cfg = self.cfg
        masks_mb = [m[idx] for m in batch.masks]
        logps, values, ents = evaluate_actions(
            self.ps,
            batch.basic[idx],
            batch.opponent[idx],
            batch.env[idx],
            batch.depth[idx],
            batch.lidar[idx],
            batch.actions[idx],
            masks_mb,
            LSTMState(h=batch.init_h[idx], c=batch.init_c[idx]),
        )
        valid = np.flatnonzero(batch.step_mask[idx].ravel() > 0)
        logp_v = ad.gather_flat(logps, valid)
        values_v = ad.gather_flat(values, valid)
        ents_v = ad.gather_flat(ents, valid)
        old_logp_v = batch.old_logp[idx].ravel()[valid]
        adv_v = batch.advantages[idx].ravel()[valid]
        tgt_v = batch.targets[idx].ravel()[valid]

        pl = ppo_policy_loss(logp_v, old_logp_v, adv_v, cfg.clip_eps)
        vl = value_loss(values_v, tgt_v)
        ent = ad.tmean(ents_v)
        loss = total_loss(pl, vl, ent, cfg.value_coef, cfg.entropy_coef)
        if not np.isfinite(loss.data):
            path = self._dump(batch, idx)
            raise TrainingDiverged("non-finite total loss", dump_path=path)
        self.ps.zero_grad()
        loss.backward()
        grad_norm = self.adam.step()
        return {
            "policy_loss": float(pl.data),
            "value_loss": float(vl.data),
            "entropy": float(ent.data),
            "grad_norm": grad_norm,
        }

    def _dump(self, batch: RolloutBatch, idx: np.ndarray) -> str | None:
        if self.dump_dir is None:
            return None
        path = Path(self.dump_dir) / f"diverged_v{self.ps.version}.npz"
        np.savez_compressed(
            path,
            old_logp=batch.old_logp[idx],
            advantages=batch.advantages[idx],
            targets=batch.targets[idx],
            step_mask=batch.step_mask[idx],
        )
        return str(path)

    def staleness_histogram(self) -> str:
        return ";".join(f"{lag}:{count}" for lag, count in sorted(self.consumed_lags.items()))


METRICS_HEADER = (
    "version,steps,episodes,mean_reward,win_rate,policy_loss,value_loss,entropy,staleness"
)


def train_single_thread(
    env,
    ps: ParamSet,
    train_cfg: TrainConfig,
    total_steps: int,
    seed: int = 0,
    metrics_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 0,
    log_fn: Callable[[str], None] | None = None,
) -> tuple[ParamSet, list[dict]]:
    """Deterministic alternating collect/update loop on one thread."""
    learner = Learner(ps, train_cfg, seed=seed)
    collector = RolloutCollector(env, lambda: learner.ps, train_cfg, base_seed=seed)
    seg_iter = collector.segments()
    rows: list[dict] = []
    lines: list[str] = [METRICS_HEADER]
    while collector.total_steps < total_steps:
        segments = []
        while len(segments) < train_cfg.batch_segments and collector.total_steps < total_steps:
            segments.append(next(seg_iter))
        metrics = learner.update(segments)
        if metrics.get("skipped"):
            continue
        mean_reward = float(np.mean(collector.episode_rewards)) if collector.episode_rewards else 0.0
        row = {
            "version": metrics["version"],
            "steps": collector.total_steps,
            "episodes": len(collector.episode_rewards),
            "mean_reward": mean_reward,
            "win_rate": collector.win_rate(),
            "policy_loss": metrics["policy_loss"],
            "value_loss": metrics["value_loss"],
            "entropy": metrics["entropy"],
            "staleness": learner.staleness_histogram(),
        }
        rows.append(row)
        lines.append(
            f'{row["version"]},{row["steps"]},{row["episodes"]},{row["mean_reward"]:.4f},'
            f'{row["win_rate"]:.4f},{row["policy_loss"]:.6f},{row["value_loss"]:.6f},'
            f'{row["entropy"]:.6f},{row["staleness"]}'
        )
        if log_fn is not None:
            log_fn(lines[-1])
        if checkpoint_path and checkpoint_every and metrics["version"] % checkpoint_every == 0:
            save_checkpoint(learner.ps, checkpoint_path)
    if checkpoint_path:
        save_checkpoint(learner.ps, checkpoint_path)
    if metrics_path is not None:
        Path(metrics_path).write_text("\n".join(lines) + "\n")
    return learner.ps, rows


# ---------------------------------------------------------------------------
# Concurrent actor/learner (bounded queue with back-pressure)


def actor_loop(
    env_factory: Callable[[], object],
    snapshot_provider: Callable[[], ParamSet],
    sink: "queue.Queue[Segment]",
    cfg: TrainConfig,
    base_seed: int,
    actor_id: int,
    n_actors: int,
    stop: threading.Event,
) -> None:
    """Collect segments into a bounded sink until asked to stop."""
    env = env_factory()
    collector = RolloutCollector(
        env, snapshot_provider, cfg, base_seed=base_seed, actor_id=actor_id, n_actors=n_actors
    )
    for seg in collector.segments():
        while not stop.is_set():
            try:
                sink.put(seg, timeout=0.1)
                break
            except queue.Full:
                continue
        if stop.is_set():
            return


def train_threaded(
    env_factory: Callable[[], object],
    ps: ParamSet,
    train_cfg: TrainConfig,
    total_steps: int,
    seed: int = 0,
    metrics_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    log_fn: Callable[[str], None] | None = None,
) -> tuple[ParamSet, list[dict]]:
    """Actor threads feeding one learner through a bounded FIFO."""
    learner = Learner(ps, train_cfg, seed=seed)
    sink: "queue.Queue[Segment]" = queue.Queue(maxsize=train_cfg.batch_segments * 4)
    stop = threading.Event()
    threads = []
    for k in range(train_cfg.actor_count):
        t = threading.Thread(
            target=actor_loop,
            args=(env_factory, learner.snapshot, sink, train_cfg, seed, k, train_cfg.actor_count, stop),
            daemon=True,
        )
        t.start()
        threads.append(t)
    consumed = 0
    lines = [METRICS_HEADER]
    rows: list[dict] = []
    outcomes: deque[Outcome] = deque(maxlen=200)
    try:
        while consumed < total_steps:
            segments = []
            while len(segments) < train_cfg.batch_segments:
                seg = sink.get()
                segments.append(seg)
                consumed += len(seg)
                if seg.final_outcome is not None:
                    outcomes.append(seg.final_outcome)
            metrics = learner.update(segments)
            if metrics.get("skipped"):
                continue
            wins = sum(1 for o in outcomes if o == Outcome.AGENT_WIN)
            row = {
                "version": metrics["version"],
                "steps": consumed,
                "win_rate": wins / len(outcomes) if outcomes else 0.0,
                "policy_loss": metrics["policy_loss"],
                "value_loss": metrics["value_loss"],
                "entropy": metrics["entropy"],
                "staleness": learner.staleness_histogram(),
            }
            rows.append(row)
            lines.append(
                f'{row["version"]},{row["steps"]},0,0.0,{row["win_rate"]:.4f},'
                f'{row["policy_loss"]:.6f},{row["value_loss"]:.6f},{row["entropy"]:.6f},'
                f'{row["staleness"]}'
            )
            if log_fn is not None:
                log_fn(lines[-1])
    finally:
        stop.set()
        for t in threads:
            t.join(timeout=2.0)
    if checkpoint_path:
        save_checkpoint(learner.ps, checkpoint_path)
    if metrics_path is not None:
        Path(metrics_path).write_text("\n".join(lines) + "\n")
    return learner.ps, rows
