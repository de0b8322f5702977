"""Photometric losses, the total training objective, and eval metrics.

SSIM uses the 11x11 Gaussian window (sigma 1.5) on the valid interior
(no padded borders), stabilizers C1=0.01^2, C2=0.03^2 on [0,1] images,
averaged over channels. The objective uses the dissimilarity form
(1 - SSIM) so that zero is the minimum at identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .depth_reg import DepthPair, ScheduleConfig, asmg_total, asmg_total_grad
from .errors import InvalidArgumentError
from .pyramid import mlcr_loss, mlcr_loss_grad
from .renderer import RenderOutput

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    """Weighting scales of the total objective."""

    lambda1: float = 0.8
    lambda2: float = 1.0
    lambda3: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.lambda1 <= 1.0):
            raise InvalidArgumentError("lambda1 must lie in [0, 1]")
        if self.lambda2 < 0 or self.lambda3 < 0:
            raise InvalidArgumentError("lambda2/lambda3 must be non-negative")


@dataclass
class LossBreakdown:
    l1: float
    ssim_term: float  # 1 - SSIM
    mlcr: float
    asmg: float
    total: float


def _check_same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1_loss(a, b) -> float:
    """Mean absolute difference over every pixel and channel."""
    a, b = _check_same_shape(a, b)
    return float(np.abs(a - b).mean())


def l1_loss_grad(a, b):
    a, b = _check_same_shape(a, b)
    diff = a - b
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def _ssim_window() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    return w / w.sum()


def _win_filter(img2d: np.ndarray) -> np.ndarray:
    """Separable window correlation restricted to the valid interior."""
    w = _ssim_window()
    r = SSIM_WINDOW // 2
    out = correlate1d(img2d, w, axis=0, mode="constant")[r:-r]
    return correlate1d(out, w, axis=1, mode="constant")[:, r:-r]


def _win_filter_adjoint(grad_valid: np.ndarray) -> np.ndarray:
    """Adjoint of `_win_filter`: zero-embed then correlate (symmetric w)."""
    w = _ssim_window()
    r = SSIM_WINDOW // 2
    padded = np.pad(grad_valid, ((r, r), (r, r)))
    out = correlate1d(padded, w, axis=0, mode="constant")
    return correlate1d(out, w, axis=1, mode="constant")


def _ssim_channel_terms(a2d: np.ndarray, b2d: np.ndarray):
    mu_a = _win_filter(a2d)
    mu_b = _win_filter(b2d)
    pa = _win_filter(a2d * a2d)
    pb = _win_filter(b2d * b2d)
    pab = _win_filter(a2d * b2d)
    var_a = pa - mu_a**2
    var_b = pb - mu_b**2
    cov = pab - mu_a * mu_b
    a1 = 2.0 * mu_a * mu_b + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = mu_a**2 + mu_b**2 + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    return mu_a, mu_b, a1, a2, b1, b2, a1 * a2 / (b1 * b2)


def _as_channels(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[:, :, None] if img.ndim == 2 else img


def ssim(a, b) -> float:
    """Mean structural similarity in [-1, 1]; needs min dimension >= 11."""
    a, b = _check_same_shape(a, b)
    a, b = _as_channels(a), _as_channels(b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise InvalidArgumentError(f"ssim needs min dimension >= {SSIM_WINDOW}")
    vals = [_ssim_channel_terms(a[:, :, c], b[:, :, c])[-1].mean() for c in range(a.shape[2])]
    return float(np.mean(vals))


def ssim_grad(a, b):
    """(ssim value, d ssim / d a); same windowing as `ssim`."""
    a, b = _check_same_shape(a, b)
    squeeze = np.asarray(a).ndim == 2
    a3, b3 = _as_channels(a), _as_channels(b)
    if min(a3.shape[0], a3.shape[1]) < SSIM_WINDOW:
        raise InvalidArgumentError(f"ssim needs min dimension >= {SSIM_WINDOW}")
    C = a3.shape[2]
    grad = np.zeros_like(a3)
    total = 0.0
    for c in range(C):
        a2d, b2d = a3[:, :, c], b3[:, :, c]
        mu_a, mu_b, a1, a2, b1, b2, s = _ssim_channel_terms(a2d, b2d)
        total += s.mean()
        t = 1.0 / (s.size * C)  # upstream weight of the double mean
        inv_b1b2 = 1.0 / (b1 * b2)
        d_mu = 2.0 * mu_b * (a2 - a1) * inv_b1b2 + 2.0 * mu_a * s * (1.0 / b2 - 1.0 / b1)
        d_pa = -s / b2
        d_pab = 2.0 * a1 * inv_b1b2
        grad[:, :, c] = (
            _win_filter_adjoint(t * d_mu)
            + _win_filter_adjoint(t * d_pa) * 2.0 * a2d
            + _win_filter_adjoint(t * d_pab) * b2d
        )
    value = float(total / C)
    return value, (grad[:, :, 0] if squeeze else grad)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images; inf when equal."""
    a, b = _check_same_shape(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def total_loss(
    rendered: RenderOutput,
    target,
    depth_pair: DepthPair | None,
    weights: LossWeights,
    t: int,
    schedule: ScheduleConfig,
    pseudo_view: bool = True,
    pyramid_levels: int = 3,
    pyramid_weights=None,
    pyramid_top_weight: float = 1.0,
) -> LossBreakdown:
    """Full objective: photometric terms plus (pseudo views only) the
    band consistency and scheduled depth correlation regularizers."""
    lb, _, _ = total_loss_grad(
        rendered, target, depth_pair, weights, t, schedule,
        pseudo_view=pseudo_view, pyramid_levels=pyramid_levels,
        pyramid_weights=pyramid_weights, pyramid_top_weight=pyramid_top_weight,
        need_grad=False,
    )
    return lb


def total_loss_grad(
    rendered: RenderOutput,
    target,
    depth_pair: DepthPair | None,
    weights: LossWeights,
    t: int,
    schedule: ScheduleConfig,
    pseudo_view: bool = True,
    pyramid_levels: int = 3,
    pyramid_weights=None,
    pyramid_top_weight: float = 1.0,
    need_grad: bool = True,
):
    """LossBreakdown plus gradients w.r.t. the rendered RGB and depth maps."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != rendered.rgb.shape:
        raise InvalidArgumentError(
            f"target shape {target.shape} does not match render {rendered.rgb.shape}"
        )
    d_rgb = np.zeros_like(rendered.rgb)
    d_depth = np.zeros_like(rendered.depth)

    if need_grad:
        l1, g_l1 = l1_loss_grad(rendered.rgb, target)
        s_val, g_s = ssim_grad(rendered.rgb, target)
        d_rgb += weights.lambda1 * g_l1 - (1.0 - weights.lambda1) * g_s
    else:
        l1 = l1_loss(rendered.rgb, target)
        s_val = ssim(rendered.rgb, target)
    ssim_term = 1.0 - s_val

    mlcr = 0.0
    if pseudo_view and weights.lambda2 > 0.0:
        if need_grad:
            mlcr, g_m = mlcr_loss_grad(
                rendered.rgb, target, pyramid_weights, pyramid_levels, pyramid_top_weight
            )
            d_rgb += weights.lambda2 * g_m
        else:
            mlcr = mlcr_loss(
                rendered.rgb, target, pyramid_weights, pyramid_levels, pyramid_top_weight
            )

    asmg = 0.0
    if pseudo_view and weights.lambda3 > 0.0 and depth_pair is not None:
        if need_grad:
            asmg, g_d = asmg_total_grad(depth_pair, t, schedule)
            d_depth += weights.lambda3 * g_d
        else:
            asmg = asmg_total(depth_pair, t, schedule)

    total = (
        weights.lambda1 * l1
        + (1.0 - weights.lambda1) * ssim_term
        + weights.lambda2 * mlcr
        + weights.lambda3 * asmg
    )
    return LossBreakdown(l1=l1, ssim_term=ssim_term, mlcr=mlcr, asmg=asmg, total=total), d_rgb, d_depth
