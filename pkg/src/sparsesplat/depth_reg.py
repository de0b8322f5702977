"""Scheduled, masked, multi-scale depth-correlation regularization.

The per-scale loss is 1 - PearsonCorr(rendered depth, reference depth),
minimized at perfect positive correlation and invariant to positive
affine rescaling of either map, so depth supervision needs no absolute
scale. Scales are 2x area-mean poolings (invalid pixels excluded from
pooled means). The spatially masked term restricts correlation to
foreground pixels (normalized reference depth below a threshold) and is
switched on after a warmup fraction of training, then decayed:

    total(t) = unmasked + beta * eta(t) * masked        for t >= alpha*T
    total(t) = unmasked                                 for t <  alpha*T
    eta(t)   = max(0.5, 1 - (t - alpha*T) / (0.5*T))

Degenerate statistics (a flat depth map at some scale, or fewer than
two usable pixels) contribute zero rather than erroring, since flat
rendered depth is normal early in training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

REL_STD_FLOOR = 1e-12  # below this relative spread a map counts as constant


@dataclass(frozen=True)
class ScheduleConfig:
    """Hyperparameters of the depth regularizer and its schedule."""

    alpha: float = 0.3  # warmup fraction before the masked term turns on
    beta: float = 1.0  # post-warmup weight of the masked term
    total_iters: int = 6000
    scales: tuple[int, ...] = (1, 2, 4)  # downsample divisors (1 = full res)
    scale_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    mask_threshold: float = 0.4

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise InvalidArgumentError("alpha must lie in [0, 1)")
        if self.total_iters <= 0:
            raise InvalidArgumentError("total_iters must be positive")
        if len(self.scales) != len(self.scale_weights):
            raise InvalidArgumentError("scales and scale_weights must have equal length")
        if any(w < 0 for w in self.scale_weights):
            raise InvalidArgumentError("scale_weights must be non-negative")
        for s in self.scales:
            _halvings(s)


def _halvings(scale) -> int:
    """Number of 2x poolings for a scale given as divisor (2) or fraction (1/2)."""
    s = float(scale)
    if s <= 0:
        raise InvalidArgumentError(f"scale must be positive, got {scale}")
    div = 1.0 / s if s < 1.0 else s
    k = int(round(np.log2(div)))
    if abs(div - 2.0**k) > 1e-9:
        raise InvalidArgumentError(f"scale {scale} is not a power-of-two factor")
    return k


@dataclass
class DepthPair:
    """Rendered/reference depth maps plus the usable-pixel mask."""

    d_rend: np.ndarray
    d_ref: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.d_rend = np.asarray(self.d_rend, dtype=np.float64)
        self.d_ref = np.asarray(self.d_ref, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.d_rend.shape == self.d_ref.shape == self.valid.shape):
            raise InvalidArgumentError("depth maps and valid mask must share one shape")
        if int(self.valid.sum()) < 2:
            raise InvalidArgumentError("DepthPair needs at least 2 valid pixels")


def make_depth_pair(render_out, d_ref, alpha_eps: float = 1e-4) -> DepthPair | None:
    """Pair the current render with a reference depth; None if too few
    pixels are usable (reference finite and accumulated alpha above eps)."""
    d_ref = np.asarray(d_ref, dtype=np.float64)
    valid = np.isfinite(d_ref) & (render_out.alpha > alpha_eps)
    if int(valid.sum()) < 2:
        return None
    return DepthPair(render_out.depth, d_ref, valid)


def _centered_stats(x: np.ndarray):
    mean = x.mean()
    cx = x - mean
    ssq = float((cx * cx).sum())
    degenerate = np.sqrt(ssq / len(x)) <= REL_STD_FLOOR * max(1.0, abs(mean))
    return cx, ssq, degenerate


def pearson_corr(a, b, valid) -> float:
    """Sample Pearson correlation over the valid pixels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if a.shape != b.shape or a.shape != valid.shape:
        raise InvalidArgumentError("pearson_corr inputs must share one shape")
    n = int(valid.sum())
    if n < 2:
        raise InvalidArgumentError("pearson_corr needs at least 2 valid pixels")
    ca, sa, dega = _centered_stats(a[valid])
    cb, sb, degb = _centered_stats(b[valid])
    if dega or degb:
        raise DegenerateInputError("zero variance over valid pixels")
    r = float((ca * cb).sum() / np.sqrt(sa * sb))
    return float(np.clip(r, -1.0, 1.0))


def _pool_once(d: np.ndarray, valid: np.ndarray):
    """2x area-mean pooling; invalid pixels are excluded from the means."""
    h, w = d.shape
    ri = np.arange(0, h, 2)
    ci = np.arange(0, w, 2)
    vsum = np.add.reduceat(np.add.reduceat(np.where(valid, d, 0.0), ri, 0), ci, 1)
    cnt = np.add.reduceat(np.add.reduceat(valid.astype(np.float64), ri, 0), ci, 1)
    ok = cnt > 0
    pooled = np.where(ok, vsum / np.where(ok, cnt, 1.0), 0.0)
    return pooled, ok, cnt


def _pool_mask_once(mask: np.ndarray):
    """Majority pooling of a boolean mask (ties count as true)."""
    h, w = mask.shape
    ri = np.arange(0, h, 2)
    ci = np.arange(0, w, 2)
    cnt = np.add.reduceat(np.add.reduceat(mask.astype(np.float64), ri, 0), ci, 1)
    size = np.add.reduceat(np.add.reduceat(np.ones_like(mask, dtype=np.float64), ri, 0), ci, 1)
    return 2.0 * cnt >= size


@dataclass
class _ScaleStack:
    """Pooling pyramid shared by the per-scale losses and their adjoints."""

    rend: list
    ref: list
    valid: list
    counts: list  # counts[j] pooled rend level j+1 from level j
    masks: list | None


def _build_stack(pair: DepthPair, max_halvings: int, mask=None) -> _ScaleStack:
    rend = [pair.d_rend]
    ref = [pair.d_ref]
    valid = [pair.valid]
    counts = []
    masks = [mask] if mask is not None else None
    for _ in range(max_halvings):
        pr, _, cnt = _pool_once(rend[-1], valid[-1])
        pf, ok, _ = _pool_once(ref[-1], valid[-1])
        rend.append(pr)
        ref.append(pf)
        valid.append(ok)
        counts.append(cnt)
        if masks is not None:
            masks.append(_pool_mask_once(masks[-1]))
    return _ScaleStack(rend, ref, valid, counts, masks)


def _scale_loss_and_grad(stack: _ScaleStack, level: int, masked: bool, need_grad: bool):
    """(1 - corr) at one pyramid level and, optionally, its gradient
    w.r.t. the rendered depth at that level (zero on degenerate input)."""
    sel = stack.valid[level]
    if masked:
        sel = sel & stack.masks[level]
    n = int(sel.sum())
    zero_grad = np.zeros_like(stack.rend[level]) if need_grad else None
    if n < 2:
        return 0.0, zero_grad
    a = stack.rend[level][sel]
    b = stack.ref[level][sel]
    ca, sa, dega = _centered_stats(a)
    cb, sb, degb = _centered_stats(b)
    if dega or degb:
        return 0.0, zero_grad
    denom = np.sqrt(sa * sb)
    sab = float((ca * cb).sum())
    r = sab / denom
    loss = 1.0 - float(np.clip(r, -1.0, 1.0))
    if not need_grad:
        return loss, None
    if abs(r) >= 1.0:
        # clipped: flat region of the clamp, consistent zero subgradient
        return loss, zero_grad
    d_a = -(cb - (sab / sa) * ca) / denom
    grad = np.zeros_like(stack.rend[level])
    grad[sel] = d_a
    return loss, grad


def _grad_to_full_res(stack: _ScaleStack, level: int, grad: np.ndarray) -> np.ndarray:
    """Adjoint of the pooling chain: push a level-j gradient back to level 0."""
    for j in range(level - 1, -1, -1):
        cnt = stack.counts[j]
        safe = np.where(cnt > 0, cnt, 1.0)
        h, w = stack.rend[j].shape
        up = np.repeat(np.repeat(grad / safe, 2, axis=0), 2, axis=1)[:h, :w]
        grad = np.where(stack.valid[j], up, 0.0)
    return grad


def depth_corr_loss_per_scale(pair: DepthPair, scale) -> float:
    """1 - Pearson correlation of the two maps pooled to one scale."""
    k = _halvings(scale)
    stack = _build_stack(pair, k)
    loss, _ = _scale_loss_and_grad(stack, k, masked=False, need_grad=False)
    return loss


def multiscale_depth_loss(pair: DepthPair, cfg: ScheduleConfig) -> float:
    """Weighted sum of the per-scale correlation losses."""
    return sum(
        w * depth_corr_loss_per_scale(pair, s) for s, w in zip(cfg.scales, cfg.scale_weights)
    )


def spatial_mask(d_ref, threshold: float) -> np.ndarray:
    """Foreground mask: min-max normalized reference depth below threshold.

    A constant map normalizes degenerately and yields an all-true mask
    (over its finite pixels)."""
    d_ref = np.asarray(d_ref, dtype=np.float64)
    finite = np.isfinite(d_ref)
    if not np.any(finite):
        raise InvalidArgumentError("spatial_mask needs at least one finite pixel")
    lo = d_ref[finite].min()
    hi = d_ref[finite].max()
    if hi - lo <= 0.0:
        return finite.copy()
    norm = np.zeros_like(d_ref)
    norm[finite] = (d_ref[finite] - lo) / (hi - lo)
    return finite & (norm < threshold)


def masked_multiscale_depth_loss(pair: DepthPair, cfg: ScheduleConfig) -> float:
    """Multi-scale loss restricted to the foreground mask at every scale."""
    mask = spatial_mask(pair.d_ref, cfg.mask_threshold)
    ks = [_halvings(s) for s in cfg.scales]
    stack = _build_stack(pair, max(ks), mask=mask)
    return sum(
        w * _scale_loss_and_grad(stack, k, masked=True, need_grad=False)[0]
        for k, w in zip(ks, cfg.scale_weights)
    )


def eta(t: int, cfg: ScheduleConfig) -> float:
    """Decay of the masked term after its onset at alpha*T (floored at 0.5)."""
    onset = cfg.alpha * cfg.total_iters
    return max(0.5, 1.0 - (t - onset) / (0.5 * cfg.total_iters))


def asmg_total(pair: DepthPair, t: int, cfg: ScheduleConfig) -> float:
    """Scheduled combination of the unmasked and masked multi-scale losses."""
    value, _ = asmg_total_grad(pair, t, cfg, need_grad=False)
    return value


def asmg_total_grad(pair: DepthPair, t: int, cfg: ScheduleConfig, need_grad: bool = True):
    """ASMG value and its gradient w.r.t. the rendered depth map."""
    gate_masked = t >= cfg.alpha * cfg.total_iters
    ks = [_halvings(s) for s in cfg.scales]
    mask = spatial_mask(pair.d_ref, cfg.mask_threshold) if gate_masked else None
    stack = _build_stack(pair, max(ks) if ks else 0, mask=mask)

    value = 0.0
    grad = np.zeros_like(pair.d_rend) if need_grad else None
    for k, w in zip(ks, cfg.scale_weights):
        loss, g = _scale_loss_and_grad(stack, k, masked=False, need_grad=need_grad)
        value += w * loss
        if need_grad and g is not None:
            grad += w * _grad_to_full_res(stack, k, g)
    if gate_masked and cfg.beta > 0.0:
        coeff = cfg.beta * eta(t, cfg)
        for k, w in zip(ks, cfg.scale_weights):
            loss, g = _scale_loss_and_grad(stack, k, masked=True, need_grad=need_grad)
            value += coeff * w * loss
            if need_grad and g is not None:
                grad += coeff * w * _grad_to_full_res(stack, k, g)
    return value, grad
