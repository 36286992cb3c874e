"""Actor-critic network with auto-regressive masked action heads.

Scalar blocks go through a two-layer feed-forward encoder; the depth map
through strided 2D convolutions; the lidar through stride-1 circular 1D
convolutions (shift-equivariant before flattening).  Features fuse with the
raw episode block into an LSTM whose hidden state feeds the value head and
the nine action heads.  Heads are decoded sequentially: each head's logits
condition on the summed embeddings of the actions already chosen, and masked
entries are forced to probability exactly zero before sampling.

All math runs on the in-package reverse-mode autodiff (float64), so training
gradients are exact and independently checkable against finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .actions import HEAD_SIZES, N_HEADS
from .autodiff import Tensor
from .perception import Observation

CHECKPOINT_MAGIC = b"SKCK"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class NetConfig:
    basic_dim: int = 16
    opponent_dim: int = 12
    env_dim: int = 32
    depth_shape: tuple[int, int] = (40, 80)
    lidar_shape: tuple[int, int] = (144, 3)
    scalar_hidden: int = 32
    scalar_out: int = 32
    depth_channels: tuple[int, int] = (4, 8)
    depth_kernels: tuple[int, int] = (5, 3)
    depth_strides: tuple[int, int] = (2, 2)
    depth_out: int = 32
    lidar_channels: tuple[int, int] = (4, 4)
    lidar_kernel: int = 5
    lidar_out: int = 16
    fusion_out: int = 64
    lstm_hidden: int = 256
    head_embed_dim: int = 16
    seed: int = 0

    def conv_output_hw(self) -> tuple[int, int]:
        h, w = self.depth_shape
        for k, s in zip(self.depth_kernels, self.depth_strides):
            h = (h - k) // s + 1
            w = (w - k) // s + 1
        return h, w

    def depth_flat(self) -> int:
        h, w = self.conv_output_hw()
        return self.depth_channels[-1] * h * w

    def lidar_flat(self) -> int:
        return self.lidar_channels[-1] * self.lidar_shape[0]

    def validate(self) -> "NetConfig":
        h, w = self.conv_output_hw()
        if h <= 0 or w <= 0:
            raise ValueError("depth conv stack collapses the feature map")
        if self.lidar_kernel > self.lidar_shape[0]:
            raise ValueError("lidar kernel longer than the ray axis")
        if min(
            self.scalar_hidden,
            self.scalar_out,
            self.fusion_out,
            self.lstm_hidden,
            self.head_embed_dim,
        ) < 1:
            raise ValueError("all layer sizes must be >= 1")
        return self


@dataclass
class LSTMState:
    h: np.ndarray  # (N, H)
    c: np.ndarray  # (N, H)

    @staticmethod
    def zeros(cfg: NetConfig, batch: int = 1) -> "LSTMState":
        return LSTMState(
            h=np.zeros((batch, cfg.lstm_hidden)), c=np.zeros((batch, cfg.lstm_hidden))
        )

    def copy(self) -> "LSTMState":
        return LSTMState(h=self.h.copy(), c=self.c.copy())


@dataclass
class PolicyOutput:
    action: tuple[int, ...]
    log_probs: np.ndarray  # (9,) per-head log-prob of the chosen index
    total_log_prob: float
    entropies: np.ndarray  # (9,)
    value: float
    state: LSTMState


class ParamSet:
    """All learnable tensors, deterministically initialized from the seed."""

    def __init__(self, cfg: NetConfig):
        cfg.validate()
        self.cfg = cfg
        self.version = 0
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(cfg.seed)

        def weight(name: str, shape: tuple[int, ...], fan_in: int, fan_out: int):
            s = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[name] = Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)

        def bias(name: str, size: int):
            self.params[name] = Tensor(np.zeros(size), requires_grad=True)

        b, o, e = cfg.basic_dim, cfg.opponent_dim, cfg.env_dim
        weight("scalar.w1", (b + o, cfg.scalar_hidden), b + o, cfg.scalar_hidden)
        bias("scalar.b1", cfg.scalar_hidden)
        weight("scalar.w2", (cfg.scalar_hidden, cfg.scalar_out), cfg.scalar_hidden, cfg.scalar_out)
        bias("scalar.b2", cfg.scalar_out)

        c1, c2 = cfg.depth_channels
        k1, k2 = cfg.depth_kernels
        weight("depth.k1", (c1, 1, k1, k1), k1 * k1, c1 * k1 * k1)
        bias("depth.b1", c1)
        weight("depth.k2", (c2, c1, k2, k2), c1 * k2 * k2, c2 * k2 * k2)
        bias("depth.b2", c2)
        weight("depth.wf", (cfg.depth_flat(), cfg.depth_out), cfg.depth_flat(), cfg.depth_out)
        bias("depth.bf", cfg.depth_out)

        lc1, lc2 = cfg.lidar_channels
        lk = cfg.lidar_kernel
        in_ch = cfg.lidar_shape[1]
        weight("lidar.k1", (lc1, in_ch, lk), in_ch * lk, lc1 * lk)
        bias("lidar.b1", lc1)
        weight("lidar.k2", (lc2, lc1, lk), lc1 * lk, lc2 * lk)
        bias("lidar.b2", lc2)
        weight("lidar.wf", (cfg.lidar_flat(), cfg.lidar_out), cfg.lidar_flat(), cfg.lidar_out)
        bias("lidar.bf", cfg.lidar_out)

        fuse_in = cfg.scalar_out + cfg.depth_out + cfg.lidar_out + e
        weight("fuse.w", (fuse_in, cfg.fusion_out), fuse_in, cfg.fusion_out)
        bias("fuse.b", cfg.fusion_out)

        hd = cfg.lstm_hidden
        weight("lstm.wx", (cfg.fusion_out, 4 * hd), cfg.fusion_out, 4 * hd)
        weight("lstm.wh", (hd, 4 * hd), hd, 4 * hd)
        lstm_b = np.zeros(4 * hd)
        lstm_b[hd : 2 * hd] = 1.0  # forget-gate bias
        self.params["lstm.b"] = Tensor(lstm_b, requires_grad=True)

        for i, size in enumerate(HEAD_SIZES):
            head_in = hd + cfg.head_embed_dim
            weight(f"head{i}.w", (head_in, size), head_in, size)
            bias(f"head{i}.b", size)
            weight(f"embed{i}", (size, cfg.head_embed_dim), size, cfg.head_embed_dim)

        weight("value.w", (hd, 1), hd, 1)
        bias("value.b", 1)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def copy(self) -> "ParamSet":
        out = ParamSet.__new__(ParamSet)
        out.cfg = self.cfg
        out.version = self.version
        out.params = {
            name: Tensor(t.data.copy(), requires_grad=True)
            for name, t in self.params.items()
        }
        return out


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


def encode_scalars(ps: ParamSet, basic: Tensor, opponent: Tensor) -> Tensor:
    """Two-layer feed-forward over the concatenated scalar blocks."""
    x = ad.concat([basic, opponent], axis=1)
    h = ad.tanh(_linear(x, ps["scalar.w1"], ps["scalar.b1"]))
    return ad.tanh(_linear(h, ps["scalar.w2"], ps["scalar.b2"]))


def encode_depth(ps: ParamSet, depth: Tensor) -> Tensor:
    """Strided 2D conv stack + flatten + projection. Input (N, H, W)."""
    cfg = ps.cfg
    n = depth.shape[0]
    x = ad.reshape(depth, (n, 1, *cfg.depth_shape))
    c1, c2 = cfg.depth_channels
    h = ad.tanh(
        ad.conv2d(x, ps["depth.k1"], stride=cfg.depth_strides[0])
        + ad.reshape(ps["depth.b1"], (1, c1, 1, 1))
    )
    h = ad.tanh(
        ad.conv2d(h, ps["depth.k2"], stride=cfg.depth_strides[1])
        + ad.reshape(ps["depth.b2"], (1, c2, 1, 1))
    )
    flat = ad.reshape(h, (n, cfg.depth_flat()))
    return ad.tanh(_linear(flat, ps["depth.wf"], ps["depth.bf"]))


def encode_lidar_map(ps: ParamSet, lidar: Tensor) -> Tensor:
    """Pre-flatten circular feature map (N, C, L); shift-equivariant in L."""
    cfg = ps.cfg
    x = ad.transpose(lidar, (0, 2, 1))  # (N, C_in, L)
    lc1, lc2 = cfg.lidar_channels
    h = ad.tanh(
        ad.conv1d_circular(x, ps["lidar.k1"]) + ad.reshape(ps["lidar.b1"], (1, lc1, 1))
    )
    h = ad.tanh(
        ad.conv1d_circular(h, ps["lidar.k2"]) + ad.reshape(ps["lidar.b2"], (1, lc2, 1))
    )
    return h


def encode_lidar(ps: ParamSet, lidar: Tensor) -> Tensor:
    cfg = ps.cfg
    n = lidar.shape[0]
    h = encode_lidar_map(ps, lidar)
    flat = ad.reshape(h, (n, cfg.lidar_flat()))
    return ad.tanh(_linear(flat, ps["lidar.wf"], ps["lidar.bf"]))


def fuse(ps: ParamSet, scalar_f: Tensor, depth_f: Tensor, lidar_f: Tensor, env: Tensor) -> Tensor:
    """Concatenation (scalars, depth, lidar, episode block) + feed-forward."""
    x = ad.concat([scalar_f, depth_f, lidar_f, env], axis=1)
    return ad.tanh(_linear(x, ps["fuse.w"], ps["fuse.b"]))


def lstm_step(ps: ParamSet, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """Standard LSTM cell; gate order (input, forget, cell, output)."""
    hd = ps.cfg.lstm_hidden
    gates = x @ ps["lstm.wx"] + h @ ps["lstm.wh"] + ps["lstm.b"]
    i = ad.sigmoid(ad.narrow(gates, 1, 0, hd))
    f = ad.sigmoid(ad.narrow(gates, 1, hd, hd))
    g = ad.tanh(ad.narrow(gates, 1, 2 * hd, hd))
    o = ad.sigmoid(ad.narrow(gates, 1, 3 * hd, hd))
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def forward_core(
    ps: ParamSet,
    basic: Tensor,
    opponent: Tensor,
    env: Tensor,
    depth: Tensor,
    lidar: Tensor,
    h: Tensor,
    c: Tensor,
) -> tuple[Tensor, Tensor, Tensor]:
    """Encoders -> fusion -> LSTM.  Returns (core, h', c')."""
    sf = encode_scalars(ps, basic, opponent)
    df = encode_depth(ps, depth)
    lf = encode_lidar(ps, lidar)
    fused = fuse(ps, sf, df, lf, env)
    h_new, c_new = lstm_step(ps, fused, h, c)
    return h_new, h_new, c_new


def head_logits(ps: ParamSet, head_idx: int, core: Tensor, ar_embed: Tensor) -> Tensor:
    x = ad.concat([core, ar_embed], axis=1)
    return _linear(x, ps[f"head{head_idx}.w"], ps[f"head{head_idx}.b"])


def value_head(ps: ParamSet, core: Tensor) -> Tensor:
    return _linear(core, ps["value.w"], ps["value.b"])


def _obs_tensors(obs: Observation) -> tuple[Tensor, ...]:
    return (
        Tensor(obs.basic[None, :].astype(np.float64)),
        Tensor(obs.opponent[None, :].astype(np.float64)),
        Tensor(obs.env[None, :].astype(np.float64)),
        Tensor(obs.depth[None, :, :].astype(np.float64)),
        Tensor(obs.lidar[None, :, :].astype(np.float64)),
    )


def _masked_entropy(logp: np.ndarray) -> float:
    p = np.exp(logp)
    terms = p * np.where(p > 0.0, logp, 0.0)
    return float(-terms.sum())


def act(
    ps: ParamSet,
    obs: Observation,
    state: LSTMState,
    mask_fn: Callable[[int, tuple[int, ...]], np.ndarray],
    rng: np.random.Generator | None = None,
) -> PolicyOutput:
    """One decision step.  ``rng=None`` selects argmax (ties -> lowest index).

    ``mask_fn(head_idx, partial_action)`` must return the legality vector for
    the next head given the indices already chosen.
    """
    cfg = ps.cfg
    with ad.no_grad():
        basic, opponent, env, depth, lidar = _obs_tensors(obs)
        h = Tensor(state.h)
        c = Tensor(state.c)
        core, h_new, c_new = forward_core(ps, basic, opponent, env, depth, lidar, h, c)

        chosen: list[int] = []
        log_probs = np.zeros(N_HEADS)
        entropies = np.zeros(N_HEADS)
        ar = Tensor(np.zeros((1, cfg.head_embed_dim)))
        for i in range(N_HEADS):
            mask = np.asarray(mask_fn(i, tuple(chosen)), dtype=bool)
            logits = head_logits(ps, i, core, ar)
            logp = ad.masked_log_softmax(logits, mask[None, :]).data[0]
            if rng is None:
                idx = int(np.argmax(logp))
            else:
                p = np.exp(logp)
                p = p / p.sum()
                idx = int(rng.choice(len(p), p=p))
            chosen.append(idx)
            log_probs[i] = logp[idx]
            entropies[i] = _masked_entropy(logp)
            ar = ar + ad.gather_rows(ps[f"embed{i}"], np.array([idx]))
        value = float(value_head(ps, core).data[0, 0])
    return PolicyOutput(
        action=tuple(chosen),
        log_probs=log_probs,
        total_log_prob=float(log_probs.sum()),
        entropies=entropies,
        value=value,
        state=LSTMState(h=h_new.data, c=c_new.data),
    )


def evaluate_actions(
    ps: ParamSet,
    basic: np.ndarray,  # (N, T, B)
    opponent: np.ndarray,  # (N, T, O)
    env: np.ndarray,  # (N, T, E)
    depth: np.ndarray,  # (N, T, H, W)
    lidar: np.ndarray,  # (N, T, L, C)
    actions: np.ndarray,  # (N, T, 9) int
    masks: list[np.ndarray],  # per head: (N, T, size) bool
    init_state: LSTMState,  # arrays (N, H)
) -> tuple[Tensor, Tensor, Tensor]:
    """Teacher-forced re-evaluation of stored actions under current params.

    Returns per-step (total log-probs, values, entropies), each (N, T),
    differentiable w.r.t. every parameter.  Masks must be the ones in force
    when the actions were collected.
    """
    cfg = ps.cfg
    n, t_len = actions.shape[0], actions.shape[1]
    h = Tensor(init_state.h)
    c = Tensor(init_state.c)
    logp_steps: list[Tensor] = []
    value_steps: list[Tensor] = []
    entropy_steps: list[Tensor] = []
    for t in range(t_len):
        core, h, c = forward_core(
            ps,
            Tensor(basic[:, t]),
            Tensor(opponent[:, t]),
            Tensor(env[:, t]),
            Tensor(depth[:, t]),
            Tensor(lidar[:, t]),
            h,
            c,
        )
        ar = Tensor(np.zeros((n, cfg.head_embed_dim)))
        logp_total: Tensor | None = None
        ent_total: Tensor | None = None
        for i in range(N_HEADS):
            logits = head_logits(ps, i, core, ar)
            logp = ad.masked_log_softmax(logits, masks[i][:, t])
            idx = actions[:, t, i]
            picked = ad.pick(logp, idx)
            p = ad.exp(logp)
            safe_logp = ad.where_const(masks[i][:, t], logp, 0.0)
            ent = ad.neg(ad.tsum(p * safe_logp, axis=1))
            logp_total = picked if logp_total is None else logp_total + picked
            ent_total = ent if ent_total is None else ent_total + ent
            ar = ar + ad.gather_rows(ps[f"embed{i}"], idx)
        logp_steps.append(ad.reshape(logp_total, (n, 1)))
        entropy_steps.append(ad.reshape(ent_total, (n, 1)))
        value_steps.append(value_head(ps, core))
    return (
        ad.concat(logp_steps, axis=1),
        ad.concat(value_steps, axis=1),
        ad.concat(entropy_steps, axis=1),
    )


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(ps: ParamSet, path: str | Path) -> None:
    """Binary checkpoint: JSON header + flat float64 parameter payload."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": _config_to_dict(ps.cfg),
        "version": ps.version,
        "tensors": [[name, list(t.data.shape)] for name, t in ps.params.items()],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in ps.params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ParamSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode())
        if header["format"] != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header['format']}")
        cfg = _config_from_dict(header["config"])
        ps = ParamSet(cfg)
        ps.version = int(header["version"])
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            ps.params[name] = Tensor(data.copy(), requires_grad=True)
    return ps


def _config_to_dict(cfg: NetConfig) -> dict:
    d = asdict(cfg)
    for key, value in d.items():
        if isinstance(value, tuple):
            d[key] = list(value)
    return d


def _config_from_dict(d: dict) -> NetConfig:
    kwargs = dict(d)
    for key in ("depth_shape", "lidar_shape", "depth_channels", "depth_kernels",
                "depth_strides", "lidar_channels"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return NetConfig(**kwargs)


# ---------------------------------------------------------------------------
# Gradient checking


def gradient_check(
    ps: ParamSet,
    rng: np.random.Generator,
    coords_per_param: int = 3,
    step: float = 1e-4,
    batch: int = 2,
    seq_len: int = 2,
) -> float:
    """Compare analytic gradients against central differences.

    Builds one random teacher-forced case, backpropagates a composite loss,
    and checks ``coords_per_param`` random coordinates of every parameter.
    Returns the maximum relative error observed.
    """
    cfg = ps.cfg
    n, t = batch, seq_len
    basic = rng.uniform(-1, 1, (n, t, cfg.basic_dim))
    opponent = rng.uniform(-1, 1, (n, t, cfg.opponent_dim))
    env = rng.uniform(-1, 1, (n, t, cfg.env_dim))
    depth = rng.uniform(0, 1, (n, t, *cfg.depth_shape))
    lidar = rng.uniform(0, 1, (n, t, *cfg.lidar_shape))
    masks = []
    actions = np.zeros((n, t, N_HEADS), dtype=np.int64)
    for i, size in enumerate(HEAD_SIZES):
        m = rng.random((n, t, size)) < 0.7
        m[..., 0] |= ~m.any(axis=-1)  # keep at least one legal entry
        masks.append(m)
        for bi in range(n):
            for ti in range(t):
                legal = np.flatnonzero(m[bi, ti])
                actions[bi, ti, i] = legal[int(rng.integers(len(legal)))]
    init = LSTMState.zeros(cfg, batch=n)
    init.h = rng.uniform(-0.5, 0.5, init.h.shape)
    init.c = rng.uniform(-0.5, 0.5, init.c.shape)

    def loss_value() -> float:
        logps, values, entropies = evaluate_actions(
            ps, basic, opponent, env, depth, lidar, actions, masks, init
        )
        loss = ad.tmean(logps) + ad.tmean(values) + 0.5 * ad.tmean(entropies)
        return loss.item()

    ps.zero_grad()
    logps, values, entropies = evaluate_actions(
        ps, basic, opponent, env, depth, lidar, actions, masks, init
    )
    loss = ad.tmean(logps) + ad.tmean(values) + 0.5 * ad.tmean(entropies)
    loss.backward()

    max_err = 0.0
    for name, tensor in ps.params.items():
        size = tensor.data.size
        k = min(coords_per_param, size)
        flat_idx = rng.choice(size, size=k, replace=False)
        coords = [np.unravel_index(int(fi), tensor.data.shape) for fi in flat_idx]
        numeric = ad.numeric_gradient(loss_value, tensor, coords, step=step)
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        for coord, num in numeric.items():
            err = ad.relative_error(float(analytic[coord]), num)
            if abs(float(analytic[coord])) < 1e-10 and abs(num) < 1e-7:
                err = 0.0  # both zero within finite-difference noise
            max_err = max(max_err, err)
    return max_err
