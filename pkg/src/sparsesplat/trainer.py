"""Optimization loop: round-robin views, scheduled losses, density control.

The optimizer is gradient descent with momentum and per-parameter-group
learning rates (position lr decays exponentially over training).
Every update renormalizes quaternions, clips colors to [0,1], and
bounds log-scales so covariances stay invertible.

Determinism contract: given identical seed, config, and inputs, the
training log is bit-identical. Everything that consumes randomness goes
through one seeded generator, and gradient reductions happen in fixed
tile order inside `gradients.backward`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .depth_reg import ScheduleConfig, make_depth_pair
from .errors import InvalidArgumentError, NumericError
from .gaussians import GaussianSet, sigmoid
from .geometry import CameraView, quat_to_matrix
from .gradients import GaussianGrads, backward
from .losses import LossWeights, psnr, ssim, total_loss_grad
from .renderer import render

LOG_SCALE_BOUNDS = (-12.0, 6.0)


@dataclass
class TrainConfig:
    total_iters: int = 6000
    lr_mu: float = 1.6e-3
    lr_mu_final: float = 1.6e-5
    lr_rot: float = 1e-3
    lr_log_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    momentum: float = 0.9
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    pyramid_levels: int = 3
    pyramid_weights: tuple | None = None
    pyramid_top_weight: float = 1.0
    densify_interval: int = 100
    densify_start: int = 500
    densify_stop_fraction: float = 0.5
    densify_grad_threshold: float = 0.1
    densify_size_threshold: float = 0.05
    prune_opacity: float = 0.005
    max_gaussians: int = 150000
    eval_interval: int = 1000
    seed: int = 0
    real_view_repeat: int = 1
    regularize_train_views: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.total_iters < 0:
            raise InvalidArgumentError("total_iters must be >= 0")
        for name in ("lr_mu", "lr_mu_final", "lr_rot", "lr_log_scale", "lr_opacity", "lr_color"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        if self.max_gaussians < 1:
            raise InvalidArgumentError("max_gaussians must be positive")
        if self.real_view_repeat < 1:
            raise InvalidArgumentError("real_view_repeat must be >= 1")


@dataclass
class TrainLog:
    """Per-iteration loss records plus held-out metric records."""

    iterations: list = field(default_factory=list)
    evals: list = field(default_factory=list)

    def records(self):
        for rec in self.iterations:
            yield {"kind": "iter", **rec}
        for rec in self.evals:
            yield {"kind": "eval", **rec}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.records())

    def write(self, path):
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass
class _ViewEntry:
    view: CameraView
    image: np.ndarray
    d_ref: np.ndarray | None
    pseudo: bool


def _interleave(a: list, b: list) -> list:
    """Evenly merge two lists preserving each one's internal order."""
    if not a:
        return list(b)
    if not b:
        return list(a)
    out, ia, ib = [], 0, 0
    na, nb = len(a), len(b)
    while ia < na or ib < nb:
        if ib >= nb or (ia < na and ia * nb <= ib * na):
            out.append(a[ia])
            ia += 1
        else:
            out.append(b[ib])
            ib += 1
    return out


def _build_schedule(train_views, pseudo_views, cfg: TrainConfig) -> list[_ViewEntry]:
    real = [
        _ViewEntry(view, np.asarray(img, dtype=np.float64), None, False)
        for view, img in train_views
    ]
    real = real * cfg.real_view_repeat
    pseudo = []
    if pseudo_views is not None:
        for pv in pseudo_views.views:
            pseudo.append(_ViewEntry(pv.view, pv.image, pv.depth, True))
    return _interleave(real, pseudo)


class _Momentum:
    """Per-group EMA momentum buffers plus a scalar gradient-RMS tracker.

    The update is momentum gradient descent with the stated per-group
    learning rates; each group's gradient is normalized by a running
    RMS estimate (one scalar per group) so a learning rate reads as a
    per-iteration step size in parameter units. Without this, raw image
    losses produce gradient magnitudes that differ by orders of
    magnitude between parameter groups and the fixed rates stall.
    """

    GROUPS = ("mus", "rots", "log_scales", "opacity_logits", "colors")
    RMS_EPS = 1e-12

    def __init__(self, scene: GaussianSet):
        self.buf = {g: np.zeros_like(getattr(scene, g)) for g in self.GROUPS}
        self.rms = {g: 0.0 for g in self.GROUPS}

    def remap(self, src_map: np.ndarray):
        """Carry buffers across a densify/prune step (new entries start at 0)."""
        for g, old in self.buf.items():
            new = np.zeros((len(src_map),) + old.shape[1:], dtype=old.dtype)
            keep = src_map >= 0
            new[keep] = old[src_map[keep]]
            self.buf[g] = new


def _apply_update(scene: GaussianSet, grads: GaussianGrads, mom: _Momentum, lrs: dict, momentum: float):
    pairs = (
        ("mus", grads.d_mu, lrs["mu"]),
        ("rots", grads.d_rot, lrs["rot"]),
        ("log_scales", grads.d_log_scale, lrs["log_scale"]),
        ("opacity_logits", grads.d_opacity_logit, lrs["opacity"]),
        ("colors", grads.d_color, lrs["color"]),
    )
    for name, g, lr in pairs:
        rms = float(np.sqrt(np.mean(g * g)))
        mom.rms[name] = momentum * mom.rms[name] + (1.0 - momentum) * rms
        buf = mom.buf[name]
        buf *= momentum
        buf += (1.0 - momentum) * g
        getattr(scene, name)[...] -= (lr / (mom.rms[name] + mom.RMS_EPS)) * buf
    # re-project onto the valid parameter domain
    norms = np.linalg.norm(scene.rots, axis=1, keepdims=True)
    scene.rots /= np.where(norms > 0, norms, 1.0)
    np.clip(scene.colors, 0.0, 1.0, out=scene.colors)
    np.clip(scene.log_scales, *LOG_SCALE_BOUNDS, out=scene.log_scales)


def densify_and_prune(
    scene: GaussianSet,
    mean_pos_grads: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[GaussianSet, np.ndarray]:
    """Adaptive density control step.

    Gaussians whose mean positional-gradient magnitude exceeds the
    threshold are cloned (small ones duplicated with jitter, large ones
    split into two children with scales / 1.6). Primitives below the
    opacity floor are pruned, and the configured cap is enforced by
    dropping the lowest-opacity primitives.

    Returns the new scene and a source map: src_map[i] is the index of
    the surviving original Gaussian, or -1 for freshly created ones.
    """
    n = scene.n
    mean_pos_grads = np.asarray(mean_pos_grads, dtype=np.float64).reshape(n)
    hot = mean_pos_grads > cfg.densify_grad_threshold
    big = scene.scales.max(axis=1) > cfg.densify_size_threshold
    clone_idx = np.nonzero(hot & ~big)[0]
    split_idx = np.nonzero(hot & big)[0]

    keep = np.ones(n, dtype=bool)
    keep[split_idx] = False

    new_parts = []
    new_src = []
    for i in clone_idx:
        scale = scene.scales[i]
        jitter = rng.normal(size=3) * 0.1 * scale
        g = scene.subset([i])
        g.mus[0] += jitter
        new_parts.append(g)
        new_src.append(-1)
    for i in split_idx:
        R = quat_to_matrix(scene.rots[i])
        scale = scene.scales[i]
        for _ in range(2):
            offset = R @ (rng.normal(size=3) * scale)
            g = scene.subset([i])
            g.mus[0] += offset
            g.log_scales[0] -= np.log(1.6)
            new_parts.append(g)
            new_src.append(-1)

    out = scene.subset(keep)
    src_map = list(np.nonzero(keep)[0])
    for part, src in zip(new_parts, new_src):
        out = out.concat(part)
        src_map.append(src)
    src_map = np.asarray(src_map, dtype=np.intp)

    alive = sigmoid(out.opacity_logits) >= cfg.prune_opacity
    out = out.subset(alive)
    src_map = src_map[alive]

    if out.n > cfg.max_gaussians:
        order = np.argsort(-out.opacity_logits, kind="stable")[: cfg.max_gaussians]
        order = np.sort(order)
        out = out.subset(order)
        src_map = src_map[order]
    return out, src_map


def _eval_pass(scene, eval_views, iteration, log: TrainLog, workers: int):
    for view, img in eval_views:
        out = render(scene, view, workers=workers)
        log.evals.append(
            {
                "iter": iteration,
                "view": view.id,
                "psnr": psnr(out.rgb, img),
                "ssim": ssim(out.rgb, img),
            }
        )


def train(
    scene: GaussianSet,
    train_views,
    pseudo_views,
    cfg: TrainConfig,
    eval_views=None,
    checkpoint_dir=None,
) -> tuple[GaussianSet, TrainLog]:
    """Optimize the scene against real + pseudo views under the schedule.

    train_views / eval_views are (CameraView, image) pairs; pseudo_views
    is a PseudoViewBundle (or None / empty for the no-pseudo ablation).
    """
    if not train_views:
        raise InvalidArgumentError("need at least one training view")
    log = TrainLog()
    scene = scene.copy()
    if cfg.total_iters == 0:
        return scene, log

    rng = np.random.default_rng(cfg.seed)
    entries = _build_schedule(train_views, pseudo_views, cfg)
    mom = _Momentum(scene)
    accum_grad = np.zeros(scene.n)
    accum_cnt = np.zeros(scene.n)
    densify_stop = int(cfg.densify_stop_fraction * cfg.total_iters)
    lr_decay = (cfg.lr_mu_final / cfg.lr_mu) if cfg.lr_mu > 0 else 1.0
    T = cfg.total_iters

    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    for t in range(T):
        e = entries[t % len(entries)]
        out, cache = render(scene, e.view, workers=cfg.workers, return_cache=True)
        pair = make_depth_pair(out, e.d_ref) if e.d_ref is not None else None
        lb, d_rgb, d_depth = total_loss_grad(
            out, e.image, pair, cfg.weights, t, cfg.schedule,
            pseudo_view=e.pseudo or cfg.regularize_train_views,
            pyramid_levels=cfg.pyramid_levels,
            pyramid_weights=cfg.pyramid_weights,
            pyramid_top_weight=cfg.pyramid_top_weight,
        )
        for term in ("l1", "ssim_term", "mlcr", "asmg", "total"):
            if not np.isfinite(getattr(lb, term)):
                raise NumericError(f"non-finite loss term '{term}' at iteration {t}")

        grads = backward(scene, e.view, out, d_rgb, d_depth, workers=cfg.workers, cache=cache)
        lr_mu_t = cfg.lr_mu * lr_decay ** (t / max(T - 1, 1))
        _apply_update(
            scene, grads, mom,
            {"mu": lr_mu_t, "rot": cfg.lr_rot, "log_scale": cfg.lr_log_scale,
             "opacity": cfg.lr_opacity, "color": cfg.lr_color},
            cfg.momentum,
        )

        gn = np.linalg.norm(grads.d_mu, axis=1)
        accum_grad += gn
        accum_cnt += gn > 0

        log.iterations.append(
            {
                "iter": t,
                "l1": lb.l1,
                "ssim_term": lb.ssim_term,
                "mlcr": lb.mlcr,
                "asmg": lb.asmg,
                "total": lb.total,
                "n_gaussians": scene.n,
            }
        )

        if (
            cfg.densify_interval > 0
            and cfg.densify_start <= t < densify_stop
            and (t - cfg.densify_start) % cfg.densify_interval == 0
        ):
            mean_grads = accum_grad / np.maximum(accum_cnt, 1.0)
            scene, src_map = densify_and_prune(scene, mean_grads, cfg, rng)
            mom.remap(src_map)
            accum_grad = np.zeros(scene.n)
            accum_cnt = np.zeros(scene.n)

        if cfg.eval_interval > 0 and (t + 1) % cfg.eval_interval == 0:
            if eval_views:
                _eval_pass(scene, eval_views, t + 1, log, cfg.workers)
            if checkpoint_dir is not None:
                from .plyio import save_gaussians_ply

                save_gaussians_ply(checkpoint_dir / f"scene_iter{t + 1:06d}.ply", scene)

    if eval_views and (cfg.eval_interval <= 0 or T % cfg.eval_interval != 0):
        _eval_pass(scene, eval_views, T, log, cfg.workers)
    return scene, log
