"""End-to-end assembly: ``R = I * L_bar + F_D(I * L_bar, L_feat)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import Config
from .errors import ConfigError, ShapeError
from .metrics import as_batch
from .restorer import DamageRestorer
from .scurve_moe import IlluminationEstimate, IlluminationEstimator, ablation_n_values, expert_n_values


def compose_retinex(R: torch.Tensor, L: torch.Tensor, clamp: bool = False) -> torch.Tensor:
    """Elementwise ``R * L``; clamp to [0, 1] only when materializing an image."""
    if R.shape != L.shape:
        raise ShapeError(f"shape mismatch: {tuple(R.shape)} vs {tuple(L.shape)}")
    out = R * L
    return out.clamp(0.0, 1.0) if clamp else out


def resolve_n_values(cfg: Config) -> list[float]:
    e, lo, hi = cfg["moe.num_experts"], cfg["moe.n_min"], cfg["moe.n_max"]
    if cfg["ablation.all_n_below_1"]:
        return ablation_n_values(e, lo, hi, below=True)
    if cfg["ablation.all_n_above_1"]:
        return ablation_n_values(e, lo, hi, below=False)
    if cfg["moe.n_values"]:
        values = list(cfg["moe.n_values"])
        if len(values) != e:
            raise ConfigError(f"moe.n_values has {len(values)} entries but moe.num_experts = {e}")
        return values
    return expert_n_values(e, lo, hi)


@dataclass
class ForwardResult:
    output: torch.Tensor           # unclamped reflectance estimate R
    lit: torch.Tensor              # I * L_bar
    minus_C: torch.Tensor | None
    estimate: IlluminationEstimate


class DimeNet(nn.Module):
    def __init__(self, config: Config | None = None, seed: int | None = 0):
        super().__init__()
        self.config = config or Config()
        cfg = self.config
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            self._build(cfg)

    def _build(self, cfg: Config):
        c_l = cfg["moe.feat_channels"]
        self.no_estimator = cfg["ablation.no_estimator"]
        self.no_restorer = cfg["ablation.no_restorer"]
        if self.no_estimator:
            self.estimator = None
            self.fallback_feat = nn.Conv2d(3, c_l, 3, padding=1)
        else:
            self.estimator = IlluminationEstimator(
                n_values=resolve_n_values(cfg), sigma=cfg["moe.sigma"], k=cfg["moe.k"],
                noise=cfg["moe.noise"], learnable_n=cfg["moe.learnable_n"],
                feat_channels=c_l, use_moe=not cfg["ablation.no_moe"],
            )
        self.restorer = None if self.no_restorer else DamageRestorer(
            base_channels=cfg["restorer.base_channels"], depth=cfg["restorer.depth"],
            dscam_blocks=cfg["restorer.dscam_blocks"], illum_channels=c_l,
            heads=cfg["dscam.heads"], d_state=cfg["dscam.d_state"],
            per_direction=cfg["dscam.per_direction"], zero_init=cfg["dscam.zero_init"],
        )

    @property
    def multiple(self) -> int:
        return 2 ** self.config["restorer.depth"]

    def estimate(self, img, generator=None) -> IlluminationEstimate:
        if self.estimator is None:
            return IlluminationEstimate(L_bar=torch.ones_like(img), L_feat=self.fallback_feat(img))
        return self.estimator(img, generator)

    def forward(self, img: torch.Tensor, generator: torch.Generator | None = None) -> ForwardResult:
        est = self.estimate(img, generator)
        lit = img * est.L_bar  # not clamped: overexposed regions legitimately exceed 1
        minus_c = None
        out = lit
        if self.restorer is not None:
            minus_c = self.restorer(lit, est.L_feat).minus_C
            out = lit + minus_c
        return ForwardResult(output=out, lit=lit, minus_C=minus_c, estimate=est)

    def enhance_tensor(self, img: torch.Tensor, generator=None, clamp: bool = True) -> torch.Tensor:
        """Pad reflectively to a multiple of ``2**depth``, run, crop back, clamp."""
        h, w = img.shape[-2:]
        m = self.multiple
        ph, pw = (-h) % m, (-w) % m
        x = F.pad(img, (0, pw, 0, ph), mode="reflect") if (ph or pw) else img
        out = self.forward(x, generator).output[..., :h, :w]
        return out.clamp(0.0, 1.0) if clamp else out

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def enhance(img, model: DimeNet, generator=None):
    """Enhance one ``H x W x 3`` array (or a batch tensor); returns the same kind."""
    was_array = isinstance(img, np.ndarray)
    dtype = next(model.parameters()).dtype
    x = as_batch(img, dtype=dtype)
    training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model.enhance_tensor(x, generator)
    finally:
        model.train(training)
    if was_array:
        return out[0].permute(1, 2, 0).cpu().numpy()
    return out
