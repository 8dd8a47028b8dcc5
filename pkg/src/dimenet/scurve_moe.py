"""Mixture of S-curve experts with noisy top-k gating, and the illumination head."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

BASE_FLOOR = 1e-12
UNIT_BIAS = math.log(math.expm1(1.0))  # softplus(UNIT_BIAS) == 1
L_BAR_FLOOR = 1e-8  # softplus underflows to 0 for very negative logits


def scurve(x: torch.Tensor, n, sigma) -> torch.Tensor:
    """``x**n / (x**n + sigma**n)``, extended continuously by 0 at x = 0."""
    n = torch.as_tensor(n, dtype=x.dtype)
    sigma = torch.as_tensor(sigma, dtype=x.dtype)
    xn = x.clamp(min=BASE_FLOOR) ** n
    out = xn / (xn + sigma ** n)
    return torch.where(x > 0, out, torch.zeros_like(out))


def expert_n_values(num_experts: int = 16, n_min: float = 0.2, n_max: float = 5.0) -> list[float]:
    return [float(v) for v in np.geomspace(n_min, n_max, num_experts)]


def ablation_n_values(num_experts: int, n_min: float, n_max: float, below: bool) -> list[float]:
    """Bank restricted to one side of n = 1, spanning the same range as the default bank."""
    full = expert_n_values(num_experts, n_min, n_max)
    if below:
        inner = max(v for v in full if v < 1.0)
        return expert_n_values(num_experts, n_min, inner)
    inner = min(v for v in full if v > 1.0)
    return expert_n_values(num_experts, inner, n_max)


class SCurveExpert(nn.Module):
    def __init__(self, n: float, sigma: float = 0.5, learnable_n: bool = False):
        super().__init__()
        if not n > 0:
            raise ConfigError(f"expert exponent must be positive, got {n}")
        if not 0 < sigma < 1:
            raise ConfigError(f"expert midpoint must lie in (0, 1), got {sigma}")
        log_n = torch.tensor(math.log(n))
        if learnable_n:
            self.log_n = nn.Parameter(log_n)
        else:
            self.register_buffer("log_n", log_n)
        self.register_buffer("sigma", torch.tensor(float(sigma)))
        self.calls = 0  # images evaluated; instrumentation for sparsity checks

    @property
    def n(self) -> torch.Tensor:
        return self.log_n.exp()

    def forward(self, x):
        self.calls += x.shape[0]
        return scurve(x, self.n.to(x.dtype), self.sigma.to(x.dtype))


@dataclass
class GateDecision:
    scores: torch.Tensor    # (B, E) noisy logits H
    weights: torch.Tensor   # (B, E) sparse softmax G
    selected: torch.Tensor  # (B, k) expert indices, best first


def top_k_indices(scores: torch.Tensor, k: int) -> torch.Tensor:
    # stable descending sort: among equal scores the lower index comes first
    return torch.sort(scores, dim=-1, descending=True, stable=True).indices[..., :k]


def sparse_softmax(scores: torch.Tensor, k: int):
    selected = top_k_indices(scores.detach(), k)
    keep = torch.zeros_like(scores, dtype=torch.bool).scatter(-1, selected, True)
    masked = scores.masked_fill(~keep, float("-inf"))
    return F.softmax(masked, dim=-1), selected


class NoisyTopKGate(nn.Module):
    def __init__(self, num_experts: int = 16, k: int = 4, noise: bool = True, in_features: int = 3):
        super().__init__()
        if not 1 <= k <= num_experts:
            raise ConfigError(f"gate needs 1 <= k <= num_experts, got k={k}, E={num_experts}")
        self.num_experts = num_experts
        self.k = k
        self.noise = noise
        self.w_gate = nn.Parameter(torch.randn(in_features, num_experts))
        self.w_noise = nn.Parameter(torch.zeros(in_features, num_experts))

    def forward(self, i_star: torch.Tensor, generator: torch.Generator | None = None) -> GateDecision:
        clean = i_star @ self.w_gate
        if self.noise and self.training:
            eps = torch.randn(clean.shape, generator=generator, dtype=clean.dtype)
            scores = clean + eps * F.softplus(i_star @ self.w_noise)
        else:
            scores = clean
        weights, selected = sparse_softmax(scores, self.k)
        return GateDecision(scores=scores, weights=weights, selected=selected)


def moe_combine(img: torch.Tensor, weights: torch.Tensor, experts) -> torch.Tensor:
    """``sum_i G_i * E_i(img)`` evaluating each expert only on images that selected it."""
    out = torch.zeros_like(img)
    active = weights.detach() != 0
    for i, expert in enumerate(experts):
        rows = active[:, i].nonzero().flatten()
        if rows.numel() == 0:
            continue
        g = weights[rows, i].view(-1, 1, 1, 1)
        out = out.index_add(0, rows, g * expert(img[rows]))
    return out


def cv_squared(x: torch.Tensor) -> torch.Tensor:
    if x.numel() <= 1:
        return x.new_zeros(())
    return x.float().var() / (x.float().mean() ** 2 + 1e-10)


@dataclass
class IlluminationEstimate:
    L_bar: torch.Tensor   # (B, 3, H, W) compensation map, > 0
    L_feat: torch.Tensor  # (B, C_l, H, W)
    decision: GateDecision | None = None
    moe_out: torch.Tensor | None = None

    def balance_loss(self) -> torch.Tensor:
        """Importance loss: squared coefficient of variation of per-expert gate mass."""
        if self.decision is None:
            return self.L_bar.new_zeros(())
        return cv_squared(self.decision.weights.sum(0))


class IlluminationEstimator(nn.Module):
    """Predicts the compensation map and illumination features from an image.

    The head concatenates ``[img, MoE(img), mean_c(img)]`` (7 channels), then a
    3x3 conv, a depthwise 3x3 conv and a zero-initialized 1x1 conv whose bias
    makes ``softplus`` output exactly 1 at initialization.
    """

    def __init__(self, n_values=None, sigma: float = 0.5, k: int = 4, noise: bool = True,
                 learnable_n: bool = False, feat_channels: int = 16, use_moe: bool = True):
        super().__init__()
        n_values = list(n_values) if n_values else expert_n_values()
        self.use_moe = use_moe
        self.experts = nn.ModuleList(SCurveExpert(n, sigma, learnable_n) for n in n_values)
        self.gate = NoisyTopKGate(len(n_values), k, noise)
        self.feat = nn.Conv2d(7, feat_channels, 3, padding=1)
        self.depthwise = nn.Conv2d(feat_channels, feat_channels, 3, padding=1, groups=feat_channels)
        self.head = nn.Conv2d(feat_channels, 3, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.constant_(self.head.bias, UNIT_BIAS)

    def gate_input(self, img):
        return img.mean(dim=(2, 3))  # per-channel global mean ("average RGB")

    def forward(self, img: torch.Tensor, generator: torch.Generator | None = None) -> IlluminationEstimate:
        decision = None
        if self.use_moe:
            decision = self.gate(self.gate_input(img), generator)
            moe_out = moe_combine(img, decision.weights, self.experts)
        else:
            moe_out = img
        x = torch.cat([img, moe_out, img.mean(dim=1, keepdim=True)], dim=1)
        l_feat = self.depthwise(self.feat(x))
        l_bar = F.softplus(self.head(l_feat)).clamp_min(L_BAR_FLOOR)
        return IlluminationEstimate(L_bar=l_bar, L_feat=l_feat, decision=decision, moe_out=moe_out)
