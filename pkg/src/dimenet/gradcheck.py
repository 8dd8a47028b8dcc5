"""Central finite-difference verification of autograd gradients (64-bit).

Relative error per entry is ``|a - n| / max(|a|, |n|, floor)`` with
``floor = 1e-5 * max(1, |f|)``; the floor keeps entries whose true gradient is
near zero from being judged on round-off alone. A fragment passes when the
largest error over every checked entry is below ``tol``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import Config
from .dscam import DSCAM, IlluminationAwareCrossAttention, SelectiveSSM
from .metrics import ssim
from .model import DimeNet
from .restorer import DamageRestorer
from .scurve_moe import NoisyTopKGate, SCurveExpert, moe_combine, scurve
from .training import LossWeights, RandomProjectionFeatures, composite_loss

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class GradcheckReport:
    name: str
    max_rel_err: float
    worst: str
    checked: int
    passed: bool
    error: str | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.error})" if self.error else ""
        return f"{status} {self.name}: max_rel_err={self.max_rel_err:.3e} at {self.worst} over {self.checked} entries{extra}"


def check_gradients(name, fn, tensors: dict, h: float = STEP, tol: float = TOLERANCE,
                    max_entries: int | None = None, seed: int = 0) -> GradcheckReport:
    """Compare ``autograd`` against central differences of the scalar ``fn()``.

    ``tensors`` maps labels to leaf tensors that ``fn`` reads. With
    ``max_entries`` set, at most that many randomly chosen entries per tensor
    are checked (all tensors are always covered).
    """
    leaves = list(tensors.values())
    for t in leaves:
        t.requires_grad_(True)
    value = fn()
    grads = torch.autograd.grad(value, leaves, allow_unused=True)
    floor = 1e-5 * max(1.0, abs(value.item()))
    gen = torch.Generator().manual_seed(seed)
    worst, worst_at, checked = 0.0, "-", 0
    for (label, t), g in zip(tensors.items(), grads):
        g = torch.zeros_like(t) if g is None else g
        if not torch.isfinite(g).all():
            bad = int(torch.nonzero(~torch.isfinite(g))[0].flatten()[0]) if g.dim() else 0
            return GradcheckReport(name, math.inf, f"{label}[{bad}]", checked, False,
                                   "non-finite analytic gradient")
        flat = t.data.view(-1)
        gflat = g.reshape(-1)
        idx = torch.arange(flat.numel())
        if max_entries is not None and flat.numel() > max_entries:
            idx = torch.randperm(flat.numel(), generator=gen)[:max_entries]
        for i in idx.tolist():
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                fp = float(fn())
                flat[i] = orig - h
                fm = float(fn())
                flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = float(gflat[i])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if err > worst:
                worst, worst_at = err, f"{label}[{i}]"
    return GradcheckReport(name, worst, worst_at, checked, worst < tol)


def randomize_zero_params(module: nn.Module, gen: torch.Generator, scale: float = 0.2):
    """Refill all-zero parameters (zero-init heads) so gradients are non-trivial."""
    with torch.no_grad():
        for p in module.parameters():
            if p.numel() and not p.abs().sum():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)
    return module


def _projector(out: torch.Tensor, seed: int):
    gen = torch.Generator().manual_seed(seed)
    w = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    return lambda y: (y * w).sum()


def _named(module: nn.Module) -> dict:
    return {f"param:{n}": p for n, p in module.named_parameters() if p.requires_grad}


def frag_scurve(seed):
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64) * 0.9 + 0.05
    n = torch.tensor(1.7, dtype=torch.float64)
    sigma = torch.tensor(0.5, dtype=torch.float64)
    proj = _projector(x, seed)
    return lambda: proj(scurve(x, n, sigma)), {"input": x, "n": n, "sigma": sigma}, None


def frag_gate(seed):
    gen = torch.Generator().manual_seed(seed)
    gate = NoisyTopKGate(16, 4, noise=False).double()
    i_star = torch.rand(3, 3, generator=gen, dtype=torch.float64)
    proj = _projector(torch.zeros(3, 16, dtype=torch.float64), seed)
    return lambda: proj(gate(i_star).weights), {"i_star": i_star, **_named(gate)}, None


def frag_moe(seed):
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    gate = NoisyTopKGate(16, 4, noise=False).double()
    experts = nn.ModuleList(SCurveExpert(n, 0.5, learnable_n=True) for n in (0.2, 0.35, 0.6, 0.8, 1.2, 1.7, 2.9, 5.0,
                                                                           0.25, 0.45, 0.7, 0.9, 1.4, 2.2, 3.5, 4.2)).double()
    img = torch.rand(2, 3, 4, 4, generator=gen, dtype=torch.float64) * 0.9 + 0.05
    proj = _projector(img, seed)

    def fn():
        return proj(moe_combine(img, gate(img.mean(dim=(2, 3))).weights, experts))

    return fn, {"input": img, **_named(gate), **_named(experts)}, None


def frag_iaca(seed):
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    mod = IlluminationAwareCrossAttention(8, heads=2, zero_init=False).double()
    f = torch.randn(1, 8, 4, 4, generator=gen, dtype=torch.float64)
    l = torch.randn(1, 8, 4, 4, generator=gen, dtype=torch.float64)
    proj = _projector(f, seed)
    return lambda: proj(mod(f, l)), {"f_enc": f, "l_feat": l, **_named(mod)}, None


def frag_s6(seed):
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    mod = SelectiveSSM(8, 4).double()
    x = torch.randn(2, 12, 8, generator=gen, dtype=torch.float64)
    proj = _projector(x, seed)
    return lambda: proj(mod(x)), {"seq": x, **_named(mod)}, None


def frag_dscam(seed):
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    mod = DSCAM(8, heads=2, d_state=4, zero_init=False).double()
    f = torch.randn(1, 8, 4, 4, generator=gen, dtype=torch.float64)
    l = torch.randn(1, 8, 4, 4, generator=gen, dtype=torch.float64)
    proj = _projector(f, seed)
    return lambda: proj(mod(f, l)), {"f_enc": f, "l_feat": l, **_named(mod)}, None


def frag_restore(seed):
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    mod = randomize_zero_params(DamageRestorer(zero_init=False).double(), gen)
    lit = torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64) * 1.2
    lf = torch.randn(1, 16, 16, 16, generator=gen, dtype=torch.float64)
    proj = _projector(lit, seed)
    return lambda: proj(mod(lit, lf).minus_C), {"lit": lit, "l_feat": lf, **_named(mod)}, 6


def frag_ssim(seed):
    gen = torch.Generator().manual_seed(seed)
    a = torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64)
    b = torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64)
    return lambda: 1.0 - ssim(a, b), {"pred": a}, None


def frag_full_loss(seed):
    gen = torch.Generator().manual_seed(seed)
    cfg = Config({"dscam.zero_init": False})
    model = randomize_zero_params(DimeNet(cfg, seed=seed).double(), gen, scale=0.05)
    model.eval()  # gate noise off
    img = torch.rand(2, 3, 16, 16, generator=gen, dtype=torch.float64) * 0.5
    target = torch.rand(2, 3, 16, 16, generator=gen, dtype=torch.float64) * 0.4 + 0.6
    extractor = RandomProjectionFeatures().double()

    def fn():
        return composite_loss(model(img).output, target, LossWeights(), extractor)[0]

    return fn, {"input": img, **_named(model)}, 4


def frag_constant(seed):
    x = torch.rand(3, 3, dtype=torch.float64)
    return lambda: (x * 0).sum() + 2.0, {"input": x}, None


FRAGMENTS = {
    "scurve_apply": frag_scurve,
    "gate": frag_gate,
    "moe_combine": frag_moe,
    "iaca_forward": frag_iaca,
    "s6_scan": frag_s6,
    "dscam_forward": frag_dscam,
    "restore": frag_restore,
    "ssim_loss": frag_ssim,
    "full_loss": frag_full_loss,
}


def run_fragment(name: str, seed: int = 0, tol: float = TOLERANCE, h: float = STEP) -> GradcheckReport:
    builder = FRAGMENTS[name] if name in FRAGMENTS else frag_constant
    fn, tensors, max_entries = builder(seed)
    return check_gradients(name, fn, tensors, h=h, tol=tol, max_entries=max_entries, seed=seed)


def run_suite(names=None, seed: int = 0, tol: float = TOLERANCE) -> list[GradcheckReport]:
    return [run_fragment(n, seed, tol) for n in (names or FRAGMENTS)]
