
import numpy as np
import pytest
import torch

from dimenet.errors import ShapeError
from dimenet.metrics import K1, MetricReport, psnr, ssim
from oracles import loop_ssim


def test_psnr_examples():
    a = np.zeros((8, 8, 3))
    assert psnr(a, a) == 99.0
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(a, a + 1.0) == pytest.approx(0.0)


def test_ssim_self_is_one():
    a = np.random.default_rng(0).uniform(size=(16, 16, 3))
    assert float(ssim(a, a)) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_closed_form():
    a, b = np.zeros((16, 16, 3)), np.ones((16, 16, 3))
    c1 = K1 ** 2
    assert float(ssim(a, b)) == pytest.approx(c1 / (1 + c1), rel=1e-9)


def test_ssim_matches_loop_oracle():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    assert float(ssim(a, b)) == pytest.approx(loop_ssim(a, b), abs=1e-6)


def test_symmetry_and_range():
    rng = np.random.default_rng(9)
    for _ in range(5):
        a, b = rng.uniform(size=(12, 14, 3)), rng.uniform(size=(12, 14, 3))
        assert float(ssim(a, b)) == pytest.approx(float(ssim(b, a)), abs=1e-12)
        assert psnr(a, b) == pytest.approx(psnr(b, a))
        assert -1 <= float(ssim(a, b)) <= 1
        assert psnr(a, b) >= 0
        # positively correlated non-negative images stay in (0, 1]
        c = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        assert 0 < float(ssim(a, c)) <= 1


def test_ssim_too_small():
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


def test_ssim_loss_gradient_matches_fd():
    from dimenet.gradcheck import run_fragment
    rep = run_fragment("ssim_loss")
    assert rep.passed, rep.line()


def test_report_tsv():
    rep = MetricReport()
    a = np.random.default_rng(1).uniform(size=(16, 16, 3))
    rep.add("a.png", a, a)
    text = rep.to_tsv()
    assert text.splitlines()[0] == "path\tpsnr\tssim"
    assert text.splitlines()[-1].startswith("mean\t99.0000\t1.000000")


def test_batch_input():
    a = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    assert psnr(a, a) == 99.0
