"""Synthetic Lambertian scene oracle.

Stands in for the external dense-stereo + view-synthesis stack at desk
scale: a random ground-truth Gaussian scene in the unit box is rendered
by the reference path to produce training images, ideal pseudo-view
content along interpolated trajectories, reference depths, and held-out
evaluation views. The initialization point cloud is the ground-truth
centers degraded by configurable positional noise and subsampling,
which emulates an imperfect stereo reconstruction.

Everything is a pure function of the arguments: the same seed yields
bit-identical scenes, images, and bundles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bundle import PseudoView, PseudoViewBundle
from .errors import InvalidArgumentError
from .gaussians import GaussianSet, PointCloud, logit
from .geometry import CameraView, Intrinsics, interpolate_trajectory, look_at_pose
from .renderer import ALPHA_EPS, render_pointmap, render_reference

ARC_RADIUS = 2.4
ARC_SPAN_DEG = 50.0
EVAL_FRACTIONS = (0.08, 0.22, 0.36, 0.5, 0.64, 0.78, 0.92)


@dataclass
class SyntheticScene:
    """Ground truth plus everything the training pipeline consumes."""

    gt_scene: GaussianSet
    train_views: list  # (CameraView, image)
    pseudo_bundle: PseudoViewBundle
    eval_views: list  # (CameraView, image)
    init_cloud: PointCloud
    seed: int = 0
    params: dict = field(default_factory=dict)


def _arc_view(angle_rad: float, intr: Intrinsics, vid: str) -> CameraView:
    pos = (ARC_RADIUS * np.sin(angle_rad), 0.0, -ARC_RADIUS * np.cos(angle_rad))
    return CameraView(intr, look_at_pose(pos, (0.0, 0.0, 0.0)), vid)


def _random_scene(rng: np.random.Generator, n: int) -> GaussianSet:
    mus = rng.uniform(-0.5, 0.5, (n, 3))
    base = np.exp(rng.uniform(np.log(0.04), np.log(0.09), n))
    log_scales = np.log(base)[:, None] + rng.uniform(-0.3, 0.3, (n, 3))
    rots = rng.normal(size=(n, 4))
    logits = logit(rng.uniform(0.6, 0.95, n))
    colors = rng.uniform(0.05, 0.95, (n, 3))
    return GaussianSet(mus, rots, log_scales, logits, colors)


def _gt_depth(out) -> np.ndarray:
    """Reference depth with unusable (empty) pixels marked NaN."""
    depth = out.depth.copy()
    depth[out.alpha <= ALPHA_EPS] = np.nan
    return depth


def generate_synthetic(
    seed: int,
    n_gaussians: int = 300,
    n_train_views: int = 2,
    n_pseudo_views: int = 5,
    noise_sigma: float = 0.01,
    subsample: float = 1.0,
    image_size: int = 64,
) -> SyntheticScene:
    """Build the full oracle dataset for one seed.

    n_pseudo_views is the trajectory sample count L per consecutive
    train-view pair (endpoints included, matching the trajectory
    contract). With n_pseudo_views = 0 the bundle is empty.
    """
    if n_train_views < 2:
        raise InvalidArgumentError("need at least 2 training views")
    if not (0.0 < subsample <= 1.0):
        raise InvalidArgumentError("subsample fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    gt = _random_scene(rng, n_gaussians)

    w = h = int(image_size)
    intr = Intrinsics(fx=1.35 * w, fy=1.35 * w, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, width=w, height=h)

    keep = int(round(subsample * n_gaussians))
    keep = max(1, keep)
    idx = np.sort(rng.choice(n_gaussians, size=keep, replace=False))
    points = gt.mus[idx] + noise_sigma * rng.normal(size=(keep, 3))
    init_cloud = PointCloud(points, gt.colors[idx].copy())

    span = np.deg2rad(ARC_SPAN_DEG)
    train_angles = [-span / 2 + span * k / (n_train_views - 1) for k in range(n_train_views)]
    train_cams = [_arc_view(a, intr, f"train{k:02d}") for k, a in enumerate(train_angles)]
    train_views = [(cam, render_reference(gt, cam).rgb) for cam in train_cams]

    pseudo_views: list[PseudoView] = []
    if n_pseudo_views >= 2:
        for pair_idx in range(n_train_views - 1):
            a, b = train_cams[pair_idx], train_cams[pair_idx + 1]
            poses = interpolate_trajectory(a.pose, b.pose, n_pseudo_views)
            for j, pose in enumerate(poses):
                vid = f"pseudo{pair_idx:02d}_{j:02d}"
                cam = CameraView(intr, pose, vid)
                out = render_reference(gt, cam)
                pseudo_views.append(
                    PseudoView(
                        id=vid,
                        view=cam,
                        image=out.rgb,
                        depth=_gt_depth(out),
                        pointmap=render_pointmap(init_cloud, cam),
                    )
                )
    bundle = PseudoViewBundle(views=pseudo_views, provenance="synthetic-oracle")

    eval_views = []
    for k, frac in enumerate(EVAL_FRACTIONS):
        cam = _arc_view(-span / 2 + span * frac, intr, f"eval{k:02d}")
        eval_views.append((cam, render_reference(gt, cam).rgb))

    return SyntheticScene(
        gt_scene=gt,
        train_views=train_views,
        pseudo_bundle=bundle,
        eval_views=eval_views,
        init_cloud=init_cloud,
        seed=seed,
        params={
            "n_gaussians": n_gaussians,
            "n_train_views": n_train_views,
            "n_pseudo_views": n_pseudo_views,
            "noise_sigma": noise_sigma,
            "subsample": subsample,
            "image_size": image_size,
        },
    )
