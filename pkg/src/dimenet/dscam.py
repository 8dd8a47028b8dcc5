"""Dual-stage cross attention: illumination-aware channel attention, then a
four-direction selective state-space scan."""
from __future__ import annotations

import enum
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


class LayerNorm2d(nn.Module):
    """Layer normalization over the channel axis of an NCHW tensor."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = x.var(1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


def channel_attention(q, k, v, heads: int, alpha: torch.Tensor):
    """Transposed attention with channels as tokens.

    ``q, k, v``: (B, C, H, W); ``alpha``: (heads,) positive temperatures.
    Returns the (B, C, H, W) aggregation and the (B, heads, d_k, d_k) weights.
    """
    b, c, h, w = q.shape
    d_k = c // heads
    qc = q.reshape(b, heads, d_k, h * w)
    kc = k.reshape(b, heads, d_k, h * w)
    vc = v.reshape(b, heads, d_k, h * w)
    logits = qc @ kc.transpose(-2, -1) / alpha.view(1, heads, 1, 1)
    attn = logits.softmax(dim=-1)
    return (attn @ vc).reshape(b, c, h, w), attn


class IlluminationAwareCrossAttention(nn.Module):
    """Queries from illumination features, keys/values from encoder features."""

    def __init__(self, channels: int, heads: int = 4, zero_init: bool = True):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"channels ({channels}) must be divisible by heads ({heads})")
        self.heads = heads
        d_k = channels // heads
        self.q_proj = nn.Conv2d(channels, channels, 1)
        self.k_proj = nn.Conv2d(channels, channels, 1)
        self.v_proj = nn.Conv2d(channels, channels, 1)
        self.q_dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.k_dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.v_dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.log_alpha = nn.Parameter(torch.full((heads,), 0.5 * math.log(d_k)))
        self.out = nn.Conv2d(channels, channels, 1)
        if zero_init:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)
        self.last_attn = None

    @property
    def alpha(self):
        return self.log_alpha.exp()

    def qkv(self, f_enc, l_feat):
        q = self.q_dw(self.q_proj(l_feat))
        k = self.k_dw(self.k_proj(f_enc))
        v = self.v_dw(self.v_proj(f_enc))
        return q, k, v

    def forward(self, f_enc, l_feat):
        if f_enc.shape != l_feat.shape:
            raise ShapeError(f"encoder {tuple(f_enc.shape)} and illumination {tuple(l_feat.shape)} "
                             "features must be aligned before cross attention")
        q, k, v = self.qkv(f_enc, l_feat)
        agg, self.last_attn = channel_attention(q, k, v, self.heads, self.alpha)
        return self.out(agg)


class ScanDirection(enum.IntEnum):
    RowFwd = 0
    RowBwd = 1
    ColFwd = 2
    ColBwd = 3


def scan_order(h: int, w: int, direction: ScanDirection) -> torch.Tensor:
    """Sequence position -> row-major flat index for one direction."""
    if direction in (ScanDirection.RowFwd, ScanDirection.RowBwd):
        order = torch.arange(h * w)
    else:
        order = torch.arange(h * w).reshape(h, w).t().reshape(-1)
    if direction in (ScanDirection.RowBwd, ScanDirection.ColBwd):
        order = order.flip(0)
    return order


def scan_expand(feat: torch.Tensor, direction: ScanDirection) -> torch.Tensor:
    """(B, C, H, W) -> (B, H*W, C) sequence in the given order."""
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat[:, :, scan_order(h, w, direction).to(feat.device)].transpose(1, 2)


def scan_merge(seqs, h: int, w: int, directions=tuple(ScanDirection)) -> torch.Tensor:
    """Undo each direction's ordering and sum the spatial maps."""
    out = None
    for seq, direction in zip(seqs, directions, strict=True):
        if seq.shape[1] != h * w:
            raise ShapeError(f"sequence length {seq.shape[1]} does not match {h}x{w}")
        order = scan_order(h, w, direction).to(seq.device)
        inv = torch.empty_like(order)
        inv[order] = torch.arange(order.numel(), device=order.device)
        spatial = seq[:, inv, :].transpose(1, 2).reshape(seq.shape[0], seq.shape[2], h, w)
        out = spatial if out is None else out + spatial
    return out


def s6_scan(x, delta, A, B, C):
    """Sequential selective scan.

    x, delta: (..., L, D); A: (D, N); B, C: (..., L, N). Returns y: (..., L, D) with
    ``h_t = exp(delta_t A) * h_{t-1} + delta_t B_t x_t`` and ``y_t = <C_t, h_t>``.
    """
    a_bar = torch.exp(delta.unsqueeze(-1) * A)                 # (..., L, D, N)
    bx = (delta * x).unsqueeze(-1) * B.unsqueeze(-2)           # (..., L, D, N)
    # unbind once: per-step slicing would make autograd allocate full-size buffers each step
    h = torch.zeros_like(a_bar[..., 0, :, :])
    states = []
    for a_t, bx_t in zip(a_bar.unbind(-3), bx.unbind(-3)):
        h = torch.addcmul(bx_t, a_t, h)
        states.append(h)
    return (torch.stack(states, dim=-3) * C.unsqueeze(-2)).sum(-1)


class SelectiveSSM(nn.Module):
    """Input-dependent step size and input/output projections around :func:`s6_scan`."""

    def __init__(self, d_model: int, d_state: int = 8, dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        self.A_log = nn.Parameter(torch.log(torch.arange(1, d_state + 1, dtype=torch.float32)).repeat(d_model, 1))
        self.delta_proj = nn.Linear(d_model, d_model)
        nn.init.normal_(self.delta_proj.weight, std=d_model ** -0.5 * 0.1)
        dt = torch.exp(torch.linspace(math.log(dt_min), math.log(dt_max), d_model))
        with torch.no_grad():
            self.delta_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))  # softplus^-1(dt)
        self.B_proj = nn.Linear(d_model, d_state, bias=False)
        self.C_proj = nn.Linear(d_model, d_state, bias=False)

    @property
    def A(self):
        return -self.A_log.exp()

    def forward(self, x):
        delta = F.softplus(self.delta_proj(x))
        return s6_scan(x, delta, self.A, self.B_proj(x), self.C_proj(x))


class SequentialStateGlobalAttention(nn.Module):
    """Four-direction expansion, selective scan, merge by summation, 1x1 output conv."""

    def __init__(self, channels: int, d_state: int = 8, per_direction: bool = False, zero_init: bool = True):
        super().__init__()
        n = 4 if per_direction else 1
        self.ssm = nn.ModuleList(SelectiveSSM(channels, d_state) for _ in range(n))
        self.out = nn.Conv2d(channels, channels, 1)
        if zero_init:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def forward(self, x):
        b, c, h, w = x.shape
        seqs = [scan_expand(x, d) for d in ScanDirection]
        if len(self.ssm) == 1:
            ys = self.ssm[0](torch.cat(seqs, 0)).split(b, 0)  # shared params: one batched scan
        else:
            ys = [m(s) for m, s in zip(self.ssm, seqs)]
        return self.out(scan_merge(ys, h, w))


class DSCAM(nn.Module):
    def __init__(self, channels: int, heads: int = 4, d_state: int = 8,
                 per_direction: bool = False, zero_init: bool = True):
        super().__init__()
        self.norm1 = LayerNorm2d(channels)
        self.iaca = IlluminationAwareCrossAttention(channels, heads, zero_init)
        self.norm2 = LayerNorm2d(channels)
        self.ssga = SequentialStateGlobalAttention(channels, d_state, per_direction, zero_init)

    def forward(self, f_enc, l_feat):
        x = f_enc + self.iaca(self.norm1(f_enc), l_feat)
        return x + self.ssga(self.norm2(x))
