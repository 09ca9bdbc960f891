"""Noise-prediction network with segment-aware cross-attention.

The roll ``(2, T, P)`` is read as a length-``T`` sequence of ``2P``-wide
frames. A small encoder-decoder over that sequence (residual conv blocks,
timestep FiLM, masked cross-attention to the condition) predicts the noise.

All parameters live in one flat float64 vector; layers see named views.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .conditioning import resample_matrix

VISUAL = "visual"
LANGUAGE = "language"


@dataclass(frozen=True)
class SegmentMask:
    size: int
    k: int
    matrix: np.ndarray


def build_mask(size: int, k: int) -> SegmentMask:
    """Block-diagonal mask: ``i`` and ``j`` see each other iff ``i//k == j//k``."""
    if size < 1 or k < 1:
        raise ValueError("size and k must be >= 1")
    block = np.arange(size) // k
    matrix = (block[:, None] == block[None, :]).astype(np.uint8)
    return SegmentMask(size, k, matrix)


def rescaled_block(k: int, length: int, frames: int) -> int:
    """Block size on a length-``length`` axis spanning ``k`` of ``frames`` frames."""
    return max(1, int(math.floor(k * length / frames + 0.5)))


class SelectedCondition(NamedTuple):
    features: np.ndarray
    modality: str


def select_condition(fv, fl, timestep: int, t0: int) -> SelectedCondition:
    """Language features while ``timestep > t0``, visual features from ``t0`` down."""
    if timestep > t0:
        return SelectedCondition(np.asarray(fl, dtype=np.float64), LANGUAGE)
    return SelectedCondition(np.asarray(fv, dtype=np.float64), VISUAL)


@dataclass(frozen=True)
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray


def _attend(x: Tensor, tokens: Tensor, w_q, w_k, w_v, w_o, mask) -> Tensor:
    q = x @ w_q
    keys = tokens @ w_k
    values = tokens @ w_v
    logits = (q @ ag.swap_last(keys)) * (1.0 / math.sqrt(w_q.shape[-1]))
    weights = ag.masked_softmax(logits, mask)
    return (weights @ values) @ w_o


def attention_weights(x, fc, params: AttentionParams, mask: SegmentMask) -> np.ndarray:
    """Post-mask row-stochastic attention matrix (for inspection and tests)."""
    q = np.asarray(x) @ params.w_q
    keys = np.asarray(fc) @ params.w_k
    logits = Tensor(q @ keys.T / math.sqrt(params.w_q.shape[1]))
    return ag.masked_softmax(logits, mask.matrix.astype(bool)).data


def segment_cross_attention(x, fc, params: AttentionParams, mask: SegmentMask) -> np.ndarray:
    """``x + softmax(mask(Q K^T / sqrt(d_key))) V W_o`` for one sequence."""
    x = np.asarray(x, dtype=np.float64)
    fc = np.asarray(fc, dtype=np.float64)
    if x.ndim != 2 or fc.ndim != 2 or x.shape[0] != fc.shape[0]:
        raise ValueError(f"x {x.shape} and condition {fc.shape} must be (L, d) with equal L")
    if mask.matrix.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"mask is {mask.matrix.shape}, sequence length is {x.shape[0]}")
    if params.w_q.shape[0] != x.shape[1] or params.w_k.shape[0] != fc.shape[1]:
        raise ValueError("attention weights do not match input widths")
    if params.w_o.shape[1] != x.shape[1]:
        raise ValueError("output projection must map back to d_model")
    out = _attend(Tensor(x), Tensor(fc), *(Tensor(w) for w in
                  (params.w_q, params.w_k, params.w_v, params.w_o)),
                  mask.matrix.astype(bool))
    return x + out.data


@dataclass(frozen=True)
class Architecture:
    time_steps: int = 128
    pitch_bins: int = 128
    channels: int = 2
    levels: int = 2
    d_model: int = 32
    d_cond: int = 16
    d_key: int = 16
    d_value: int = 16
    d_time: int = 32
    d_fv: int = 512
    d_fl: int = 768
    kernel: int = 3
    k: int = 8
    t0: int = 200

    def __post_init__(self):
        if self.channels != 2:
            raise ValueError("rolls have exactly 2 channels")
        if self.levels < 1 or self.time_steps % 2 ** (self.levels - 1):
            raise ValueError("time_steps must be divisible by 2**(levels-1)")
        if self.kernel % 2 != 1 or self.d_time % 2:
            raise ValueError("kernel must be odd and d_time even")

    @property
    def roll_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.time_steps, self.pitch_bins)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        names = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in d.items() if k in names})

    def block_names(self) -> list[str]:
        enc = [f"enc{l}" for l in range(self.levels)]
        dec = [f"dec{l}" for l in reversed(range(self.levels - 1))]
        return enc + dec


def param_layout(arch: Architecture) -> list[tuple[str, tuple[int, ...], str]]:
    """``(name, shape, init)`` triples in flat-vector order.

    ``init`` is one of ``normal`` (std 1/sqrt(fan_in)), ``ones``, ``zeros``.
    """
    c, feat = arch.d_model, arch.channels * arch.pitch_bins
    layout = [("in.w", (feat, c), "normal"), ("in.b", (c,), "zeros"),
              ("time.w", (arch.d_time, c), "normal"), ("time.b", (c,), "zeros")]
    for name in arch.block_names():
        layout += [
            (f"{name}.n1.g", (c,), "ones"), (f"{name}.n1.b", (c,), "zeros"),
            (f"{name}.c1.w", (arch.kernel, c, c), "normal"), (f"{name}.c1.b", (c,), "zeros"),
            (f"{name}.scale.w", (c, c), "normal"), (f"{name}.scale.b", (c,), "zeros"),
            (f"{name}.shift.w", (c, c), "normal"), (f"{name}.shift.b", (c,), "zeros"),
            (f"{name}.n2.g", (c,), "ones"), (f"{name}.n2.b", (c,), "zeros"),
            (f"{name}.c2.w", (arch.kernel, c, c), "normal"), (f"{name}.c2.b", (c,), "zeros"),
            (f"{name}.na.g", (c,), "ones"), (f"{name}.na.b", (c,), "zeros"),
            (f"{name}.q", (c, arch.d_key), "normal"),
            (f"{name}.k", (arch.d_cond, arch.d_key), "normal"),
            (f"{name}.v", (arch.d_cond, arch.d_value), "normal"),
            (f"{name}.o", (arch.d_value, c), "normal"),
        ]
    layout += [
        ("cond.fv.w", (arch.d_fv, arch.d_cond), "normal"), ("cond.fv.b", (arch.d_cond,), "zeros"),
        ("cond.fl.w", (arch.d_fl, arch.d_cond), "normal"), ("cond.fl.b", (arch.d_cond,), "zeros"),
        ("out.n.g", (c,), "ones"), ("out.n.b", (c,), "zeros"),
        ("out.w", (c, feat), "zeros"), ("out.b", (feat,), "zeros"),
        ("skip.w", (c, 1), "zeros"), ("skip.b", (1,), "zeros"),
    ]
    return layout


def _fan_in(shape) -> int:
    return int(np.prod(shape[:-1]))


class DenoiserNet:
    """Architecture descriptor plus a flat parameter vector."""

    def __init__(self, arch: Architecture, params: np.ndarray | None = None, seed: int = 0):
        self.arch = arch
        self.layout = param_layout(arch)
        self.slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        offset = 0
        for name, shape, _ in self.layout:
            n = int(np.prod(shape))
            self.slices[name] = (slice(offset, offset + n), shape)
            offset += n
        self.param_count = offset
        if params is None:
            params = self._initial_params(seed)
        params = np.array(params, dtype=np.float64)
        if params.shape != (offset,):
            raise ValueError(f"expected {offset} parameters, got {params.shape}")
        if not np.isfinite(params).all():
            raise ValueError("parameters must be finite")
        self.params = params

    def _initial_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        chunks = []
        for _, shape, init in self.layout:
            if init == "normal":
                chunks.append(rng.standard_normal(shape).ravel() / math.sqrt(_fan_in(shape)))
            elif init == "ones":
                chunks.append(np.ones(int(np.prod(shape))))
            else:
                chunks.append(np.zeros(int(np.prod(shape))))
        return np.concatenate(chunks)

    def view(self, name: str) -> np.ndarray:
        sl, shape = self.slices[name]
        return self.params[sl].reshape(shape)

    def bind(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {name: Tensor(self.view(name), requires_grad) for name in self.slices}

    def gather(self, leaves: dict[str, Tensor]) -> np.ndarray:
        grad = np.zeros(self.param_count)
        for name, t in leaves.items():
            if t.grad is not None:
                grad[self.slices[name][0]] = t.grad.ravel()
        return grad

    def copy(self) -> "DenoiserNet":
        return DenoiserNet(self.arch, self.params.copy())

    def __call__(self, x_t, timestep, cond=None) -> np.ndarray:
        return forward(self, x_t, timestep, cond)


def sinusoidal(values, dim: int) -> np.ndarray:
    """``(n, dim)`` sin/cos embedding of ``values``."""
    values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = values * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def metrical_position(length: int, dim: int) -> np.ndarray:
    """``(length, dim)`` sin/cos position code with periods of 2, 4, 8, ... steps.

    Power-of-two periods line up with sixteenth, beat, bar and phrase
    boundaries, so the position inside a bar is a linear function of the code.
    """
    half = dim // 2
    angles = np.arange(length, dtype=np.float64)[:, None] * (2 * math.pi / 2.0 ** np.arange(1, half + 1))
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _condition_tokens(p, arch: Architecture, conds, length: int):
    """Project and resample each batch element's condition to ``length`` rows.

    Returns ``(tokens, mask)`` with tokens ``(B, length, d_cond)`` and a
    boolean ``(B, length, length)`` block mask.
    """
    batch = len(conds)
    fv = np.zeros((batch, length, arch.d_fv))
    fl = np.zeros((batch, length, arch.d_fl))
    gate = np.zeros((batch, 1, 1))
    mask = np.zeros((batch, length, length), dtype=bool)
    for i, c in enumerate(conds):
        feats = np.asarray(c.features, dtype=np.float64)
        frames = feats.shape[0]
        resampled = resample_matrix(frames, length) @ feats
        if c.modality == VISUAL:
            if feats.shape[1] != arch.d_fv:
                raise ValueError(f"visual features have width {feats.shape[1]}, "
                                 f"net expects {arch.d_fv}")
            fv[i] = resampled
            gate[i] = 1.0
        elif c.modality == LANGUAGE:
            if feats.shape[1] != arch.d_fl:
                raise ValueError(f"language features have width {feats.shape[1]}, "
                                 f"net expects {arch.d_fl}")
            fl[i] = resampled
        else:
            raise ValueError(f"unknown modality {c.modality!r}")
        mask[i] = build_mask(length, rescaled_block(arch.k, length, frames)).matrix.astype(bool)
    tokens = None
    if gate.any():
        tokens = (fv @ p["cond.fv.w"] + p["cond.fv.b"]) * gate
    if (gate == 0).any():
        lang = (fl @ p["cond.fl.w"] + p["cond.fl.b"]) * (1.0 - gate)
        tokens = lang if tokens is None else tokens + lang
    return tokens, mask


def _block(p, name: str, h: Tensor, temb: Tensor, cond) -> Tensor:
    r = ag.conv1d(ag.silu(ag.layer_norm(h, p[f"{name}.n1.g"], p[f"{name}.n1.b"])),
                  p[f"{name}.c1.w"], p[f"{name}.c1.b"])
    scale = temb @ p[f"{name}.scale.w"] + p[f"{name}.scale.b"]
    shift = temb @ p[f"{name}.shift.w"] + p[f"{name}.shift.b"]
    r = ag.layer_norm(r, p[f"{name}.n2.g"], p[f"{name}.n2.b"]) * (scale + 1.0) + shift
    r = ag.conv1d(ag.silu(r), p[f"{name}.c2.w"], p[f"{name}.c2.b"])
    h = h + r
    if cond is not None:
        tokens, mask = cond
        a = ag.layer_norm(h, p[f"{name}.na.g"], p[f"{name}.na.b"])
        h = h + _attend(a, tokens, p[f"{name}.q"], p[f"{name}.k"], p[f"{name}.v"],
                        p[f"{name}.o"], mask)
    return h


def apply(p: dict[str, Tensor], arch: Architecture, x_t: np.ndarray, timesteps, conds) -> Tensor:
    """Run the network on a batch.

    ``x_t`` is ``(B, 2, T, P)``; ``timesteps`` has ``B`` entries; ``conds`` is
    ``None`` (unconditional) or a list of ``B`` selected conditions. The result
    is in sequence layout ``(B, T, 2P)``.
    """
    batch = x_t.shape[0]
    seq = x_t.transpose(0, 2, 1, 3).reshape(batch, arch.time_steps, -1)
    pos = metrical_position(arch.time_steps, arch.d_model)
    h = ag.add(seq @ p["in.w"] + p["in.b"], pos)
    temb = ag.silu(Tensor(sinusoidal(timesteps, arch.d_time)) @ p["time.w"] + p["time.b"])
    temb = ag.reshape(temb, (batch, 1, arch.d_model))
    lengths = [arch.time_steps // 2 ** l for l in range(arch.levels)]
    level_cond = [None] * arch.levels
    if conds is not None:
        if len(conds) != batch:
            raise ValueError(f"{len(conds)} conditions for a batch of {batch}")
        level_cond = [_condition_tokens(p, arch, conds, n) for n in lengths]
    skips = []
    for l in range(arch.levels):
        h = _block(p, f"enc{l}", h, temb, level_cond[l])
        if l < arch.levels - 1:
            skips.append(h)
            h = ag.pool2(h)
    for l in reversed(range(arch.levels - 1)):
        h = ag.upsample2(h) + skips[l]
        h = _block(p, f"dec{l}", h, temb, level_cond[l])
    h = ag.layer_norm(h, p["out.n.g"], p["out.n.b"])
    # the noisy input passes straight through, scaled per timestep
    gate = temb @ p["skip.w"] + p["skip.b"]
    return ag.silu(h) @ p["out.w"] + p["out.b"] + gate * seq


def to_sequence(x: np.ndarray) -> np.ndarray:
    """``(B, 2, T, P)`` to ``(B, T, 2P)``."""
    return x.transpose(0, 2, 1, 3).reshape(x.shape[0], x.shape[2], -1)


def from_sequence(s: np.ndarray, arch: Architecture) -> np.ndarray:
    b = s.shape[0]
    return s.reshape(b, arch.time_steps, arch.channels, arch.pitch_bins).transpose(0, 2, 1, 3)


def _as_batch(net: DenoiserNet, x_t, timestep, cond):
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != net.arch.roll_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match {net.arch.roll_shape}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite values in network input")
    t = np.broadcast_to(np.asarray(timestep), (x.shape[0],))
    if cond is not None and isinstance(cond, SelectedCondition):
        cond = [cond] * x.shape[0]
    return x, t, cond, single


def forward(net: DenoiserNet, x_t, timestep, cond=None) -> np.ndarray:
    """Predicted noise with the same shape as ``x_t`` (single roll or batch)."""
    x, t, cond, single = _as_batch(net, x_t, timestep, cond)
    out = from_sequence(apply(net.bind(), net.arch, x, t, cond).data, net.arch)
    return out[0] if single else out


@dataclass
class LossGraph:
    loss: Tensor
    leaves: dict


def loss_graph(net: DenoiserNet, x_t, timestep, cond, eps) -> LossGraph:
    """Record the mean-square noise-prediction loss for a backward pass."""
    x, t, cond, _ = _as_batch(net, x_t, timestep, cond)
    eps = np.asarray(eps, dtype=np.float64).reshape(x.shape)
    leaves = net.bind(requires_grad=True)
    pred = apply(leaves, net.arch, x, t, cond)
    return LossGraph(ag.mse(pred, to_sequence(eps)), leaves)


def backward(net: DenoiserNet, graph: LossGraph) -> np.ndarray:
    """Gradient of ``graph.loss`` with respect to the flat parameter vector."""
    graph.loss.backward()
    return net.gather(graph.leaves)
