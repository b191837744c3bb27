"""The denoising network: a 1-D convolutional U-Net over 2-channel trajectories.

Residual conv blocks (two per resolution level in both encoder and decoder,
each block = conv, group norm, additive step embedding, Mish, conv, group
norm, Mish, plus a skip), stride-2 conv downsampling, nearest-neighbor +
conv upsampling with channel-concatenated skips, cross-channel attention at
the bottleneck, and a zero-initialized output conv on top of a global
residual, so the untrained network is the identity map.

Forward and backward are hand-written; the backward pass produces exact
reverse-mode gradients for every tensor and is checked against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..diffusion import TrajBatch
from .layers import (
    attention_backward,
    attention_forward,
    conv1d_backward,
    conv1d_forward,
    groupnorm_backward,
    groupnorm_forward,
    linear_backward,
    linear_forward,
    mish_backward,
    mish_forward,
    sinusoidal_embedding,
    upsample2_backward,
    upsample2_forward,
)


@dataclass(frozen=True)
class ArchDescriptor:
    """Architecture and modeling constants; serialized into checkpoints."""

    widths: tuple = (32, 64, 128)
    kernel_len: int = 5
    gn_groups: int = 8
    emb_dim: int = 32
    in_channels: int = 2
    t_obs: int = 8
    t_pred: int = 12
    n_steps: int = 25
    coord_scale: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ValueError("widths must be a non-empty tuple of positive ints")
        if self.kernel_len % 2 != 1:
            raise ValueError("kernel_len must be odd")
        if self.emb_dim % 2 != 0 or self.emb_dim < 2:
            raise ValueError("emb_dim must be a positive even integer")
        if self.traj_len % self.downsample_factor != 0:
            raise ValueError(
                f"trajectory length {self.traj_len} not divisible by the "
                f"total downsampling factor {self.downsample_factor}"
            )

    @property
    def n_levels(self) -> int:
        return len(self.widths)

    @property
    def traj_len(self) -> int:
        return self.t_obs + self.t_pred

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.n_levels - 1)

    @property
    def bottleneck_len(self) -> int:
        return self.traj_len // self.downsample_factor

    def groups_for(self, channels: int) -> int:
        """Largest divisor of `channels` not exceeding gn_groups."""
        for g in range(min(self.gn_groups, channels), 0, -1):
            if channels % g == 0:
                return g
        return 1


@dataclass
class DenoiserParams:
    """Named parameter tensors plus the architecture they belong to."""

    tensors: dict
    arch: ArchDescriptor

    @property
    def n_params(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


def _res_block_specs(prefix, c_in, c_out, k, emb_dim):
    specs = [
        (f"{prefix}.conv1.w", (c_out, c_in, k), "conv"),
        (f"{prefix}.conv1.b", (c_out,), "zeros"),
        (f"{prefix}.gn1.g", (c_out,), "ones"),
        (f"{prefix}.gn1.b", (c_out,), "zeros"),
        (f"{prefix}.emb.w", (emb_dim, c_out), "linear"),
        (f"{prefix}.emb.b", (c_out,), "zeros"),
        (f"{prefix}.conv2.w", (c_out, c_out, k), "conv"),
        (f"{prefix}.conv2.b", (c_out,), "zeros"),
        (f"{prefix}.gn2.g", (c_out,), "ones"),
        (f"{prefix}.gn2.b", (c_out,), "zeros"),
    ]
    if c_in != c_out:
        specs.append((f"{prefix}.skip.w", (c_out, c_in, 1), "conv"))
        specs.append((f"{prefix}.skip.b", (c_out,), "zeros"))
    return specs


def param_specs(desc: ArchDescriptor):
    """Full list of (name, shape, init kind) for the architecture."""
    w = desc.widths
    k = desc.kernel_len
    e = desc.emb_dim
    last = desc.n_levels - 1
    specs = [
        ("time_mlp.fc1.w", (e, e), "linear"),
        ("time_mlp.fc1.b", (e,), "zeros"),
        ("time_mlp.fc2.w", (e, e), "linear"),
        ("time_mlp.fc2.b", (e,), "zeros"),
    ]
    for lvl in range(desc.n_levels):
        c_in = desc.in_channels if lvl == 0 else w[lvl]
        specs += _res_block_specs(f"enc.{lvl}.0", c_in, w[lvl], k, e)
        specs += _res_block_specs(f"enc.{lvl}.1", w[lvl], w[lvl], k, e)
        if lvl < last:
            specs.append((f"down.{lvl}.w", (w[lvl + 1], w[lvl], k), "conv"))
            specs.append((f"down.{lvl}.b", (w[lvl + 1],), "zeros"))
    width = desc.bottleneck_len
    for tag in ("q", "k", "v", "o"):
        specs.append((f"attn.w{tag}", (width, width), "attn"))
        specs.append((f"attn.b{tag}", (width,), "zeros"))
    specs += _res_block_specs(f"dec.{last}.0", w[last], w[last], k, e)
    specs += _res_block_specs(f"dec.{last}.1", w[last], w[last], k, e)
    for lvl in range(last - 1, -1, -1):
        specs.append((f"up.{lvl}.w", (w[lvl], w[lvl + 1], k), "conv"))
        specs.append((f"up.{lvl}.b", (w[lvl],), "zeros"))
        specs += _res_block_specs(f"dec.{lvl}.0", 2 * w[lvl], w[lvl], k, e)
        specs += _res_block_specs(f"dec.{lvl}.1", w[lvl], w[lvl], k, e)
    specs.append(("out.w", (desc.in_channels, w[0], k), "zero_out"))
    specs.append(("out.b", (desc.in_channels,), "zeros"))
    return specs


def init_params(desc: ArchDescriptor, seed: int = 0) -> DenoiserParams:
    """Seeded parameter initialization.

    Values are rounded through float32 so a freshly initialized model
    round-trips bit-exactly through the float32 checkpoint format.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, kind in param_specs(desc):
        if kind == "ones":
            t = np.ones(shape)
        elif kind in ("zeros", "zero_out"):
            t = np.zeros(shape)
        else:
            if kind == "conv":
                fan_in = shape[1] * shape[2]
                std = np.sqrt(2.0 / fan_in)
            elif kind == "linear":
                std = np.sqrt(1.0 / shape[0])
            else:  # attn
                std = np.sqrt(1.0 / shape[0])
            t = (rng.standard_normal(shape) * std).astype(np.float32).astype(np.float64)
        tensors[name] = t
    return DenoiserParams(tensors=tensors, arch=desc)


# ----------------------------------------------------------- residual block

def _res_forward(p, prefix, x, emb, desc):
    c_out = p[f"{prefix}.conv1.w"].shape[0]
    groups = desc.groups_for(c_out)
    h, c_conv1 = conv1d_forward(x, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"])
    h, c_gn1 = groupnorm_forward(h, p[f"{prefix}.gn1.g"], p[f"{prefix}.gn1.b"], groups)
    eb, c_emb = linear_forward(emb, p[f"{prefix}.emb.w"], p[f"{prefix}.emb.b"])
    h = h + eb[:, :, None]
    h, c_m1 = mish_forward(h)
    h, c_conv2 = conv1d_forward(h, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"])
    h, c_gn2 = groupnorm_forward(h, p[f"{prefix}.gn2.g"], p[f"{prefix}.gn2.b"], groups)
    h, c_m2 = mish_forward(h)
    has_skip = f"{prefix}.skip.w" in p
    if has_skip:
        s, c_skip = conv1d_forward(x, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"])
    else:
        s, c_skip = x, None
    return h + s, (c_conv1, c_gn1, c_emb, c_m1, c_conv2, c_gn2, c_m2, c_skip, has_skip)


def _res_backward(p, prefix, dy, cache, grads):
    """Returns (dx, d_emb); parameter gradients land in `grads`."""
    c_conv1, c_gn1, c_emb, c_m1, c_conv2, c_gn2, c_m2, c_skip, has_skip = cache
    if has_skip:
        dx_skip, dw, db = conv1d_backward(dy, p[f"{prefix}.skip.w"], c_skip)
        grads[f"{prefix}.skip.w"] = dw
        grads[f"{prefix}.skip.b"] = db
    else:
        dx_skip = dy
    dh = mish_backward(dy, c_m2)
    dh, dg, db = groupnorm_backward(dh, c_gn2)
    grads[f"{prefix}.gn2.g"] = dg
    grads[f"{prefix}.gn2.b"] = db
    dh, dw, db = conv1d_backward(dh, p[f"{prefix}.conv2.w"], c_conv2)
    grads[f"{prefix}.conv2.w"] = dw
    grads[f"{prefix}.conv2.b"] = db
    dh = mish_backward(dh, c_m1)
    d_eb = dh.sum(axis=2)
    d_emb, dw, db = linear_backward(d_eb, p[f"{prefix}.emb.w"], c_emb)
    grads[f"{prefix}.emb.w"] = dw
    grads[f"{prefix}.emb.b"] = db
    dh, dg, db = groupnorm_backward(dh, c_gn1)
    grads[f"{prefix}.gn1.g"] = dg
    grads[f"{prefix}.gn1.b"] = db
    dx, dw, db = conv1d_backward(dh, p[f"{prefix}.conv1.w"], c_conv1)
    grads[f"{prefix}.conv1.w"] = dw
    grads[f"{prefix}.conv1.b"] = db
    return dx + dx_skip, d_emb


# ------------------------------------------------------------- whole network

def _check_input(params: DenoiserParams, x: np.ndarray, i) -> np.ndarray:
    desc = params.arch
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != desc.in_channels:
        raise ValueError(f"input must have shape (B, T, {desc.in_channels}), got {x.shape}")
    if x.shape[1] % desc.downsample_factor != 0:
        raise ValueError(
            f"trajectory length {x.shape[1]} not divisible by the total "
            f"downsampling factor {desc.downsample_factor}"
        )
    if x.shape[1] != desc.traj_len:
        raise ValueError(
            f"trajectory length {x.shape[1]} does not match the descriptor's {desc.traj_len}"
        )
    i_arr = np.broadcast_to(np.asarray(i, dtype=np.int64), (x.shape[0],))
    if np.any(i_arr < 1) or np.any(i_arr > desc.n_steps):
        raise IndexError(f"step index out of range 1..{desc.n_steps}")
    return i_arr


def forward_with_cache(params: DenoiserParams, x: np.ndarray, i):
    """Network forward on (B, T, 2) inputs; i is an int or a (B,) int array."""
    desc = params.arch
    p = params.tensors
    i_arr = _check_input(params, x, i)
    x_cf = np.ascontiguousarray(np.asarray(x, dtype=np.float64).transpose(0, 2, 1))

    emb0 = sinusoidal_embedding(i_arr, desc.emb_dim)
    t1, c_t1 = linear_forward(emb0, p["time_mlp.fc1.w"], p["time_mlp.fc1.b"])
    tm, c_tm = mish_forward(t1)
    emb, c_t2 = linear_forward(tm, p["time_mlp.fc2.w"], p["time_mlp.fc2.b"])

    last = desc.n_levels - 1
    h = x_cf
    skips, enc_caches, down_caches = [], [], []
    for lvl in range(desc.n_levels):
        for blk in (0, 1):
            h, c = _res_forward(p, f"enc.{lvl}.{blk}", h, emb, desc)
            enc_caches.append(c)
        if lvl < last:
            skips.append(h)
            h, c = conv1d_forward(h, p[f"down.{lvl}.w"], p[f"down.{lvl}.b"], stride=2)
            down_caches.append(c)

    h, c_attn = attention_forward(h, p, "attn")

    dec_caches, up_caches = [], []
    for blk in (0, 1):
        h, c = _res_forward(p, f"dec.{last}.{blk}", h, emb, desc)
        dec_caches.append(c)
    for lvl in range(last - 1, -1, -1):
        h, c_rep = upsample2_forward(h)
        h, c_up = conv1d_forward(h, p[f"up.{lvl}.w"], p[f"up.{lvl}.b"])
        up_caches.append((c_rep, c_up))
        h = np.concatenate([h, skips[lvl]], axis=1)
        for blk in (0, 1):
            h, c = _res_forward(p, f"dec.{lvl}.{blk}", h, emb, desc)
            dec_caches.append(c)

    yc, c_out = conv1d_forward(h, p["out.w"], p["out.b"])
    y = x_cf + yc
    cache = {
        "time": (c_t1, c_tm, c_t2),
        "enc": enc_caches,
        "down": down_caches,
        "attn": c_attn,
        "dec": dec_caches,
        "up": up_caches,
        "out": c_out,
    }
    return np.ascontiguousarray(y.transpose(0, 2, 1)), cache


def backward_from_cache(params: DenoiserParams, cache: dict, upstream: np.ndarray):
    """Reverse-mode pass; returns (grads, d_input) with grads keyed like tensors."""
    desc = params.arch
    p = params.tensors
    last = desc.n_levels - 1
    dy = np.asarray(upstream, dtype=np.float64).transpose(0, 2, 1)

    grads: dict = {}
    d_emb_total = 0.0

    dh, dw, db = conv1d_backward(dy, p["out.w"], cache["out"])
    grads["out.w"] = dw
    grads["out.b"] = db
    dx_residual = dy  # global residual branch straight to the input

    dec_caches = list(cache["dec"])
    up_caches = list(cache["up"])
    d_skips = {}
    # decoder levels 0 .. last-1 were run last; unwind them first
    for lvl in range(last):
        for blk in (1, 0):
            dh, de = _res_backward(p, f"dec.{lvl}.{blk}", dh, dec_caches.pop(), grads)
            d_emb_total += de
        n_up = p[f"up.{lvl}.w"].shape[0]
        d_skips[lvl] = dh[:, n_up:, :]
        dh = dh[:, :n_up, :]
        c_rep, c_up = up_caches.pop()
        dh, dw, db = conv1d_backward(dh, p[f"up.{lvl}.w"], c_up)
        grads[f"up.{lvl}.w"] = dw
        grads[f"up.{lvl}.b"] = db
        dh = upsample2_backward(dh, c_rep)
    for blk in (1, 0):
        dh, de = _res_backward(p, f"dec.{last}.{blk}", dh, dec_caches.pop(), grads)
        d_emb_total += de

    dh = attention_backward(dh, p, "attn", cache["attn"], grads)

    enc_caches = list(cache["enc"])
    down_caches = list(cache["down"])
    for lvl in range(last, -1, -1):
        if lvl < last:
            dh, dw, db = conv1d_backward(dh, p[f"down.{lvl}.w"], down_caches.pop())
            grads[f"down.{lvl}.w"] = dw
            grads[f"down.{lvl}.b"] = db
            dh = dh + d_skips[lvl]
        for blk in (1, 0):
            dh, de = _res_backward(p, f"enc.{lvl}.{blk}", dh, enc_caches.pop(), grads)
            d_emb_total += de

    c_t1, c_tm, c_t2 = cache["time"]
    dt, dw, db = linear_backward(d_emb_total, p["time_mlp.fc2.w"], c_t2)
    grads["time_mlp.fc2.w"] = dw
    grads["time_mlp.fc2.b"] = db
    dt = mish_backward(dt, c_tm)
    _, dw, db = linear_backward(dt, p["time_mlp.fc1.w"], c_t1)
    grads["time_mlp.fc1.w"] = dw
    grads["time_mlp.fc1.b"] = db

    dx = (dx_residual + dh).transpose(0, 2, 1)
    return grads, np.ascontiguousarray(dx)


# ------------------------------------------------------------- public surface

def denoiser_forward(params: DenoiserParams, x_cond: TrajBatch, i) -> TrajBatch:
    """Predict the clean trajectory from a conditioned noisy batch at step i."""
    y, _ = forward_with_cache(params, x_cond.samples, i)
    return x_cond.like(y)


def denoiser_backward(params: DenoiserParams, x_cond: TrajBatch, i,
                      upstream_grad: np.ndarray) -> dict:
    """Gradients of sum(forward * upstream_grad) w.r.t. every parameter tensor."""
    upstream = np.asarray(upstream_grad, dtype=np.float64)
    if upstream.shape != x_cond.samples.shape:
        raise ValueError(
            f"upstream_grad shape {upstream.shape} does not match batch {x_cond.samples.shape}"
        )
    _, cache = forward_with_cache(params, x_cond.samples, i)
    grads, _ = backward_from_cache(params, cache, upstream)
    return grads


def cross_channel_attention(features: np.ndarray, params: DenoiserParams) -> np.ndarray:
    """Apply the bottleneck attention to a single (C, W) feature map."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be (C, W), got shape {features.shape}")
    y, _ = attention_forward(features[None], params.tensors, "attn")
    return y[0]
