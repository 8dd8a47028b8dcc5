"""PSNR and single-scale SSIM on ``(B, 3, H, W)`` tensors or ``H x W x 3`` arrays."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def as_batch(x, dtype=None) -> torch.Tensor:
    """Accept an ``H x W x 3`` array/tensor or a ``(B, 3, H, W)`` tensor."""
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if x.dim() == 3:
        x = x.permute(2, 0, 1).unsqueeze(0)
    if x.dim() != 4:
        raise ShapeError(f"expected HxWx3 or Bx3xHxW, got shape {tuple(x.shape)}")
    if dtype is not None:
        x = x.to(dtype)
    elif not x.is_floating_point():
        x = x.float()
    return x


def _pair(a, b):
    a, b = as_batch(a), as_batch(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    dtype = torch.promote_types(a.dtype, b.dtype)
    return a.to(dtype), b.to(dtype)


def psnr_per_image(a, b, peak: float = 1.0) -> torch.Tensor:
    a, b = _pair(a, b)
    mse = ((a - b) ** 2).flatten(1).mean(1)
    out = torch.full_like(mse, PSNR_CAP)
    nz = mse > 0
    out[nz] = 10.0 * torch.log10(peak ** 2 / mse[nz])
    return out.clamp(max=PSNR_CAP)


def psnr(a, b, peak: float = 1.0) -> float:
    """Mean PSNR in dB over the batch; identical images give the 99 dB cap."""
    return float(psnr_per_image(a, b, peak).mean())


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim_map(a, b, data_range: float = 1.0) -> torch.Tensor:
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {tuple(a.shape[-2:])}")
    c = a.shape[1]
    win = gaussian_window(dtype=a.dtype).to(a.device).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(x):
        return F.conv2d(x, win, groups=c)  # valid region only

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim_per_image(a, b) -> torch.Tensor:
    return ssim_map(a, b).flatten(1).mean(1)


def ssim(a, b) -> torch.Tensor:
    """Mean SSIM over channels, positions and batch (differentiable scalar)."""
    return ssim_map(a, b).mean()


@dataclass
class MetricReport:
    names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, name, a, b):
        self.names.append(str(name))
        self.psnr.append(psnr(a, b))
        with torch.no_grad():
            self.ssim.append(float(ssim(a, b)))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def to_tsv(self) -> str:
        lines = ["path\tpsnr\tssim"]
        lines += [f"{n}\t{p:.4f}\t{s:.6f}" for n, p, s in zip(self.names, self.psnr, self.ssim)]
        lines.append(f"mean\t{self.mean_psnr:.4f}\t{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"
