import numpy as np
import pytest

from sparsesplat.depth_reg import DepthPair, ScheduleConfig
from sparsesplat.errors import InvalidArgumentError
from sparsesplat.losses import (
    LossBreakdown,
    LossWeights,
    l1_loss,
    l1_loss_grad,
    psnr,
    ssim,
    ssim_grad,
    total_loss,
    total_loss_grad,
)
from sparsesplat.renderer import RenderOutput


def _naive_ssim(a, b):
    """Independent oracle: direct window loops over the valid interior."""
    x = np.arange(11) - 5.0
    w1 = np.exp(-(x**2) / (2 * 1.5**2))
    w1 /= w1.sum()
    win = np.outer(w1, w1)
    c1, c2 = 0.01**2, 0.03**2
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w, ch = a.shape
    vals = []
    for c in range(ch):
        for r in range(h - 10):
            for col in range(w - 10):
                pa = a[r : r + 11, col : col + 11, c]
                pb = b[r : r + 11, col : col + 11, c]
                mua = (win * pa).sum()
                mub = (win * pb).sum()
                va = (win * pa * pa).sum() - mua**2
                vb = (win * pb * pb).sum() - mub**2
                cov = (win * pa * pb).sum() - mua * mub
                vals.append(
                    ((2 * mua * mub + c1) * (2 * cov + c2))
                    / ((mua**2 + mub**2 + c1) * (va + vb + c2))
                )
    return float(np.mean(vals))


class TestL1:
    def test_identical(self):
        img = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
        assert l1_loss(img, img) == 0.0

    def test_constant_offset(self):
        a = np.zeros((8, 8, 3))
        assert np.isclose(l1_loss(a, a + 0.5), 0.5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 1, (9, 7, 3))
        b = rng.uniform(0, 1, (9, 7, 3))
        expect = sum(abs(float(x) - float(y)) for x, y in zip(a.flat, b.flat)) / a.size
        assert np.isclose(l1_loss(a, b), expect)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            l1_loss(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_grad(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, (6, 6, 3))
        b = rng.uniform(0, 1, (6, 6, 3))
        val, g = l1_loss_grad(a, b)
        assert np.allclose(g, np.sign(a - b) / a.size)


class TestSsim:
    def test_identical_is_one(self):
        img = np.random.default_rng(3).uniform(0, 1, (16, 16, 3))
        assert np.isclose(ssim(img, img), 1.0)

    def test_inverted_binary_negative(self):
        rng = np.random.default_rng(4)
        a = (rng.uniform(size=(24, 24)) > 0.5).astype(np.float64)
        assert ssim(a, 1.0 - a) < 0.0

    def test_constant_pair_is_one(self):
        a = np.full((16, 16), 0.3)
        assert np.isclose(ssim(a, a.copy()), 1.0)

    def test_too_small_raises(self):
        with pytest.raises(InvalidArgumentError):
            ssim(np.zeros((10, 16)), np.zeros((10, 16)))

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0, 1, (16, 20, 3))
        b = rng.uniform(0, 1, (16, 20, 3))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, (14, 15))
        b = np.clip(a + 0.2 * rng.normal(size=(14, 15)), 0, 1)
        assert abs(ssim(a, b) - _naive_ssim(a, b)) < 1e-10

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(0.1, 0.9, (14, 13, 3))
        b = rng.uniform(0.1, 0.9, (14, 13, 3))
        val, g = ssim_grad(a, b)
        assert np.isclose(val, ssim(a, b))
        h = 1e-6
        for _ in range(25):
            idx = tuple(rng.integers(0, s) for s in a.shape)
            ap, am = a.copy(), a.copy()
            ap[idx] += h
            am[idx] -= h
            fd = (ssim(ap, b) - ssim(am, b)) / (2 * h)
            assert abs(fd - g[idx]) < 1e-6 + 1e-4 * abs(fd)


class TestPsnr:
    def test_identical_infinite(self):
        img = np.random.default_rng(8).uniform(0, 1, (8, 8, 3))
        assert psnr(img, img) == float("inf")

    def test_uniform_error(self):
        a = np.zeros((8, 8, 3))
        assert np.isclose(psnr(a, a + 0.1), 20.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        a = rng.uniform(0, 1, (8, 8, 3))
        b = rng.uniform(0, 1, (8, 8, 3))
        mse = float(np.mean((a - b) ** 2))
        assert np.isclose(psnr(a, b), 10 * np.log10(1 / mse))


class TestLossWeights:
    def test_paper_defaults(self):
        w = LossWeights()
        assert (w.lambda1, w.lambda2, w.lambda3) == (0.8, 1.0, 0.5)

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            LossWeights(lambda1=1.5)
        with pytest.raises(InvalidArgumentError):
            LossWeights(lambda2=-0.1)


def _render_like(img, depth=None, alpha=None):
    h, w = img.shape[:2]
    return RenderOutput(
        rgb=np.asarray(img, dtype=np.float64),
        depth=np.ones((h, w)) if depth is None else depth,
        alpha=np.ones((h, w)) if alpha is None else alpha,
    )


class TestTotalLoss:
    def test_perfect_inputs_zero(self):
        rng = np.random.default_rng(10)
        img = rng.uniform(0, 1, (16, 16, 3))
        ref = rng.uniform(1, 2, (16, 16))
        pair = DepthPair(2.0 * ref + 1.0, ref, np.ones((16, 16), dtype=bool))
        lb = total_loss(_render_like(img), img.copy(), pair, LossWeights(), 0, ScheduleConfig())
        assert abs(lb.total) < 1e-12
        assert lb.l1 == 0.0 and abs(lb.ssim_term) < 1e-12 and lb.mlcr == 0.0 and lb.asmg < 1e-9

    def test_photometric_reduction(self):
        rng = np.random.default_rng(11)
        a = rng.uniform(0, 1, (16, 16, 3))
        b = rng.uniform(0, 1, (16, 16, 3))
        w = LossWeights(lambda1=0.8, lambda2=0.0, lambda3=0.0)
        lb = total_loss(_render_like(a), b, None, w, 0, ScheduleConfig())
        expect = 0.8 * l1_loss(a, b) + 0.2 * (1.0 - ssim(a, b))
        assert np.isclose(lb.total, expect)
        assert lb.mlcr == 0.0 and lb.asmg == 0.0

    def test_breakdown_identity(self):
        rng = np.random.default_rng(12)
        a = rng.uniform(0, 1, (20, 20, 3))
        b = rng.uniform(0, 1, (20, 20, 3))
        ref = rng.uniform(1, 2, (20, 20))
        pair = DepthPair(ref + rng.normal(size=(20, 20)), ref, np.ones((20, 20), dtype=bool))
        w = LossWeights()
        lb = total_loss(_render_like(a), b, pair, w, 2500, ScheduleConfig())
        recon = w.lambda1 * lb.l1 + (1 - w.lambda1) * lb.ssim_term + w.lambda2 * lb.mlcr + w.lambda3 * lb.asmg
        assert abs(lb.total - recon) < 1e-9

    def test_dssim_direction(self):
        # a worse image must increase the ssim_term (1 - ssim convention)
        rng = np.random.default_rng(13)
        b = rng.uniform(0, 1, (16, 16, 3))
        near = np.clip(b + 0.01 * rng.normal(size=b.shape), 0, 1)
        far = rng.uniform(0, 1, (16, 16, 3))
        lb_near = total_loss(_render_like(near), b, None, LossWeights(), 0, ScheduleConfig())
        lb_far = total_loss(_render_like(far), b, None, LossWeights(), 0, ScheduleConfig())
        assert lb_near.ssim_term < lb_far.ssim_term
        assert lb_near.total < lb_far.total

    def test_real_views_skip_regularizers(self):
        rng = np.random.default_rng(14)
        a = rng.uniform(0, 1, (16, 16, 3))
        b = rng.uniform(0, 1, (16, 16, 3))
        ref = rng.uniform(1, 2, (16, 16))
        pair = DepthPair(ref + rng.normal(size=(16, 16)), ref, np.ones((16, 16), dtype=bool))
        lb = total_loss(_render_like(a), b, pair, LossWeights(), 0, ScheduleConfig(), pseudo_view=False)
        assert lb.mlcr == 0.0 and lb.asmg == 0.0

    def test_grad_consistency_with_value(self):
        rng = np.random.default_rng(15)
        a = rng.uniform(0, 1, (16, 16, 3))
        b = rng.uniform(0, 1, (16, 16, 3))
        lb1, d_rgb, d_depth = total_loss_grad(_render_like(a), b, None, LossWeights(), 0, ScheduleConfig())
        lb2 = total_loss(_render_like(a), b, None, LossWeights(), 0, ScheduleConfig())
        assert np.isclose(lb1.total, lb2.total)
        assert d_rgb.shape == a.shape
        assert not d_depth.any()  # no depth term without a pair

    def test_target_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            total_loss(_render_like(np.zeros((16, 16, 3))), np.zeros((16, 17, 3)), None,
                       LossWeights(), 0, ScheduleConfig())
