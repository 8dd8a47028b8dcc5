"""Composite loss, schedule, augmentation and the deterministic training loop."""
from __future__ import annotations

import base64
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .config import Config
from .errors import NonFiniteGradientError, NonFiniteLossError
from .metrics import psnr_per_image, ssim

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    w_l1: float = 1.0
    w_ssim: float = 0.5
    w_perc: float = 0.1

    def __post_init__(self):
        if min(self.w_l1, self.w_ssim, self.w_perc) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    patch: int = 64
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    mixup: bool = True
    rotation: bool = True
    flip: bool = True
    mixup_alpha: float = 0.2
    grad_clip: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    log_every: int = 100
    checkpoint_every: int = 500
    dtype: str = "float32"
    balance_loss_weight: float = 0.0

    def __post_init__(self):
        if not self.lr_final < self.lr_init:
            raise ValueError("lr_final must be smaller than lr_init")

    @classmethod
    def from_config(cls, cfg: Config) -> "TrainConfig":
        t = cfg.section("train")
        return cls(
            iterations=t["iterations"], batch_size=t["batch_size"], patch=t["patch"],
            lr_init=t["lr_init"], lr_final=t["lr_final"], betas=tuple(t["betas"]), seed=t["seed"],
            mixup=t["mixup"], rotation=t["rotation"], flip=t["flip"], mixup_alpha=t["mixup_alpha"],
            grad_clip=t["grad_clip"], weights=LossWeights(t["w_l1"], t["w_ssim"], t["w_perc"]),
            log_every=t["log_every"], checkpoint_every=t["checkpoint_every"], dtype=t["dtype"],
            balance_loss_weight=cfg["moe.balance_loss_weight"],
        )


class RandomProjectionFeatures(nn.Module):
    """Frozen three-layer stride-2 conv stack with fixed-seed random weights.

    A deterministic stand-in for pretrained VGG features; it is NOT equivalent
    to a VGG perceptual loss. Any module mapping (B, 3, H, W) to a feature
    tensor can be used instead.
    """

    def __init__(self, widths=(16, 32, 64), seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, cin = [], 3
        for cout in widths:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / (cin * 9)))
                conv.bias.zero_()
            layers += [conv, nn.GELU()]
            cin = cout
        self.net = nn.Sequential(*layers)
        self.requires_grad_(False)

    def forward(self, x):
        return self.net(x)


def composite_loss(pred, target, weights: LossWeights = LossWeights(), extractor=None):
    """Weighted l1 + (1 - SSIM) + feature-space l1. Returns (total, components)."""
    l1 = (pred - target).abs().mean()
    ssim_term = 1.0 - ssim(pred, target)
    if extractor is not None and weights.w_perc > 0:
        perc = (extractor(pred) - extractor(target)).abs().mean()
    else:
        perc = pred.new_zeros(())
    total = weights.w_l1 * l1 + weights.w_ssim * ssim_term + weights.w_perc * perc
    return total, {"l1": l1, "ssim": ssim_term, "perc": perc}


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    if not 0 <= t <= cfg.iterations:
        raise ValueError(f"iteration {t} outside [0, {cfg.iterations}]")
    if cfg.iterations == 0:
        return cfg.lr_init
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1 + math.cos(math.pi * t / cfg.iterations))


@dataclass(frozen=True)
class AugmentDraw:
    top: int
    left: int
    rot90: int
    hflip: bool
    vflip: bool


def draw_geometry(rng: np.random.Generator, shape, cfg: TrainConfig) -> AugmentDraw:
    h, w = shape
    p = cfg.patch
    if p > h or p > w:
        raise ValueError(f"patch {p} larger than image {h}x{w}")
    return AugmentDraw(
        top=int(rng.integers(0, h - p + 1)),
        left=int(rng.integers(0, w - p + 1)),
        rot90=int(rng.integers(0, 4)) if cfg.rotation else 0,
        hflip=bool(rng.random() < 0.5) if cfg.flip else False,
        vflip=bool(rng.random() < 0.5) if cfg.flip else False,
    )


def apply_geometry(img: torch.Tensor, draw: AugmentDraw, patch: int) -> torch.Tensor:
    """Crop, rotate, flip a (3, H, W) tensor."""
    out = img[:, draw.top:draw.top + patch, draw.left:draw.left + patch]
    if draw.rot90:
        out = torch.rot90(out, draw.rot90, dims=(1, 2))
    if draw.hflip:
        out = out.flip(2)
    if draw.vflip:
        out = out.flip(1)
    return out


def mixup(pair_i, pair_j, lam: float):
    return tuple(lam * a + (1.0 - lam) * b for a, b in zip(pair_i, pair_j))


def augment(pair, cfg: TrainConfig, rng: np.random.Generator, partner=None):
    """Apply one shared geometric draw to both images, then optionally mix with ``partner``."""
    degraded, clean = pair
    draw = draw_geometry(rng, degraded.shape[-2:], cfg)
    out = (apply_geometry(degraded, draw, cfg.patch), apply_geometry(clean, draw, cfg.patch))
    if cfg.mixup and partner is not None:
        pdraw = draw_geometry(rng, partner[0].shape[-2:], cfg)
        other = (apply_geometry(partner[0], pdraw, cfg.patch), apply_geometry(partner[1], pdraw, cfg.patch))
        lam = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
        out = mixup(out, other, lam)
    return out


class NamedAdam:
    """Adam over named parameters; refuses to step on non-finite gradients."""

    def __init__(self, named_params, betas=(0.9, 0.999), eps: float = 1e-8):
        self.named = [(n, p) for n, p in named_params if p.requires_grad]
        self.opt = torch.optim.Adam([p for _, p in self.named], lr=0.0, betas=tuple(betas), eps=eps)

    def check_finite(self):
        for name, p in self.named:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteGradientError(name)

    def step(self, lr: float):
        self.check_finite()
        for group in self.opt.param_groups:
            group["lr"] = lr
        self.opt.step()

    def zero_grad(self):
        self.opt.zero_grad(set_to_none=True)


@dataclass
class TrainResult:
    model: nn.Module
    records: list
    totals: list      # per-iteration total loss (full trace)
    rng_state: dict


LOG_FIELDS = ["iter", "lr", "l1", "ssim", "perc", "total", "psnr"]


def format_record(rec: dict) -> str:
    return " ".join(f"{k}={rec[k]:.6g}" if k != "iter" else f"iter={rec[k]}" for k in LOG_FIELDS)


def to_chw(img: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).to(dtype)


def rng_snapshot(rng: np.random.Generator, gen: torch.Generator) -> dict:
    return {"numpy": rng.bit_generator.state,
            "torch": base64.b64encode(gen.get_state().numpy().tobytes()).decode("ascii")}


def train(model, dataset, cfg: TrainConfig, log_path=None, csv_path=None, checkpoint_fn=None,
          extractor=None) -> TrainResult:
    """Train ``model`` in place on a list of :class:`PairedSample`.

    ``checkpoint_fn(model, iteration, rng_state)`` is called every
    ``cfg.checkpoint_every`` iterations and at the end.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    model.to(dtype)
    model.train()
    extractor = (extractor or RandomProjectionFeatures()).to(dtype)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    pairs = [(to_chw(s.degraded, dtype), to_chw(s.clean, dtype)) for s in dataset]
    opt = NamedAdam(model.named_parameters(), cfg.betas)
    records, totals = [], []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    csv_fh = open(csv_path, "w", newline="", encoding="utf-8") if csv_path else None
    writer = csv.DictWriter(csv_fh, fieldnames=LOG_FIELDS) if csv_fh else None
    if writer:
        writer.writeheader()

    def sample_batch():
        ids = rng.integers(0, len(pairs), size=cfg.batch_size)
        deg, cln = [], []
        for i in ids:
            partner = pairs[int(rng.integers(0, len(pairs)))] if cfg.mixup else None
            d, c = augment(pairs[int(i)], cfg, rng, partner)
            deg.append(d)
            cln.append(c)
        return ids, torch.stack(deg), torch.stack(cln)

    def step_loss(degraded, clean):
        result = model(degraded, gen)
        total, parts = composite_loss(result.output, clean, cfg.weights, extractor)
        if cfg.balance_loss_weight > 0:
            total = total + cfg.balance_loss_weight * result.estimate.balance_loss()
        return result, total, parts

    def emit(t, lr, result, clean, total, parts):
        with torch.no_grad():
            train_psnr = float(psnr_per_image(result.output.clamp(0, 1), clean).mean())
        rec = {"iter": t, "lr": lr, "l1": parts["l1"].item(), "ssim": parts["ssim"].item(),
               "perc": parts["perc"].item(), "total": total.item(), "psnr": train_psnr}
        records.append(rec)
        line = format_record(rec)
        log.info(line)
        if log_fh:
            log_fh.write(line + "\n")
            log_fh.flush()
        if writer:
            writer.writerow(rec)

    try:
        for t in range(cfg.iterations):
            ids, degraded, clean = sample_batch()
            lr = cosine_lr(t, cfg)
            result, total, parts = step_loss(degraded, clean)
            if not torch.isfinite(total):
                raise NonFiniteLossError(t, ids.tolist())
            totals.append(total.item())
            if t % cfg.log_every == 0:
                emit(t, lr, result, clean, total, parts)
            opt.zero_grad()
            total.backward()
            if cfg.grad_clip > 0:
                nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step(lr)
            done = t + 1
            if checkpoint_fn and cfg.checkpoint_every > 0 and done % cfg.checkpoint_every == 0 and done < cfg.iterations:
                checkpoint_fn(model, done, rng_snapshot(rng, gen))
        # closing record at the schedule endpoint, no update
        ids, degraded, clean = sample_batch()
        with torch.no_grad():
            result, total, parts = step_loss(degraded, clean)
        emit(cfg.iterations, cosine_lr(cfg.iterations, cfg), result, clean, total, parts)
    finally:
        if log_fh:
            log_fh.close()
        if csv_fh:
            csv_fh.close()
    state = rng_snapshot(rng, gen)
    if checkpoint_fn:
        checkpoint_fn(model, cfg.iterations, state)
    return TrainResult(model=model, records=records, totals=totals, rng_state=state)
