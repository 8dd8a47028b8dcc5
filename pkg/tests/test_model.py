import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dimenet.config import Config
from dimenet.errors import ConfigError, ShapeError
from dimenet.gradcheck import randomize_zero_params
from dimenet.model import DimeNet, compose_retinex, enhance, resolve_n_values
from dimenet.scurve_moe import expert_n_values
from dimenet.training import composite_loss


@pytest.fixture(scope="module")
def untrained():
    return DimeNet()


def test_compose_retinex_examples():
    R = torch.rand(1, 3, 4, 4)
    assert torch.equal(compose_retinex(R, torch.ones_like(R)), R)
    assert torch.all(compose_retinex(torch.zeros_like(R), torch.rand_like(R) + 0.1) == 0)


def test_compose_retinex_loop_oracle():
    g = torch.Generator().manual_seed(0)
    R = torch.rand(4, 4, 3, generator=g, dtype=torch.float64) * 2
    L = torch.rand(4, 4, 3, generator=g, dtype=torch.float64) + 0.1
    out = compose_retinex(R, L, clamp=True)
    for y in range(4):
        for x in range(4):
            for c in range(3):
                v = min(max(R[y, x, c].item() * L[y, x, c].item(), 0.0), 1.0)
                assert out[y, x, c].item() == v


def test_compose_retinex_shape_mismatch():
    with pytest.raises(ShapeError):
        compose_retinex(torch.ones(2, 2), torch.ones(3, 2))


@settings(max_examples=25, deadline=None)
@given(h=st.integers(16, 64), w=st.integers(16, 64), seed=st.integers(0, 2**31 - 1))
def test_untrained_model_is_identity(untrained, h, w, seed):
    img = np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)
    out = enhance(img, untrained)
    assert out.shape == img.shape
    assert np.max(np.abs(out - img)) <= 1e-6


def test_enhance_restores_train_flag_and_accepts_tensors(untrained):
    untrained.train()
    x = torch.rand(2, 3, 20, 28)
    out = enhance(x, untrained)
    assert untrained.training
    assert out.shape == x.shape


def perturbed(cfg=None, seed=5):
    m = DimeNet(cfg)
    randomize_zero_params(m, torch.Generator().manual_seed(seed))
    return m.eval()


@pytest.mark.parametrize("size", [(17, 23), (64, 64), (5, 9)])
def test_enhance_output_in_unit_range(size):
    m = perturbed()
    img = np.random.default_rng(0).random((*size, 3)).astype(np.float32)
    out = enhance(img, m)
    assert out.shape == img.shape
    assert out.min() >= 0 and out.max() <= 1


def test_no_restorer_is_clamped_lit():
    m = perturbed(Config({"ablation.no_restorer": True}))
    assert m.restorer is None
    img = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        est = m.estimate(img)
        expected = (img * est.L_bar).clamp(0, 1)
    torch.testing.assert_close(enhance(img, m), expected, atol=0, rtol=0)


def test_no_estimator_forces_unit_compensation():
    m = perturbed(Config({"ablation.no_estimator": True}))
    img = torch.rand(1, 3, 16, 16)
    fr = m(img)
    assert torch.all(fr.estimate.L_bar == 1)
    assert fr.estimate.L_feat.shape == (1, 16, 16, 16)
    assert torch.equal(fr.lit, img)


def test_no_moe_replaces_mixture_with_image():
    m = DimeNet(Config({"ablation.no_moe": True}))
    assert not m.estimator.use_moe
    img = torch.rand(1, 3, 16, 16)
    assert torch.equal(m(img).estimate.moe_out, img)


def test_ablation_banks():
    below = resolve_n_values(Config({"ablation.all_n_below_1": True}))
    above = resolve_n_values(Config({"ablation.all_n_above_1": True}))
    assert len(below) == len(above) == 16
    assert max(below) < 1 < min(above)
    assert resolve_n_values(Config()) == expert_n_values(16, 0.2, 5.0)
    with pytest.raises(ConfigError):
        resolve_n_values(Config({"moe.n_values": [1.0, 2.0]}))


def test_same_seed_same_parameters():
    a, b = DimeNet(seed=3), DimeNet(seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)


def test_every_parameter_gets_finite_gradient():
    m = DimeNet(Config({"dscam.zero_init": False}))
    randomize_zero_params(m, torch.Generator().manual_seed(0))
    img, clean = torch.rand(2, 3, 16, 16), torch.rand(2, 3, 16, 16)
    total, _ = composite_loss(m(img).output, clean)
    total.backward()
    names = [n for n, p in m.named_parameters() if p.requires_grad]
    assert len(names) == len(set(names))
    for n, p in m.named_parameters():
        if p.requires_grad:
            assert p.grad is not None, n
            assert torch.isfinite(p.grad).all(), n
