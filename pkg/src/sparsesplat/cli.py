"""Command-line surface.

Every failure exits nonzero with a one-line ``error:<category>:``
prefix on stderr (config errors exit 2, everything else 1).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bundle import (
    PseudoViewBundle,
    load_bundle,
    load_view_dir,
    read_pose_file,
    save_bundle,
    save_view_dir,
    write_pose_file,
)
from .config import load_train_config
from .errors import ConfigError, EngineError, InvalidArgumentError
from .gaussians import GaussianSet, PointCloud, init_from_pointcloud
from .geometry import CameraView, interpolate_trajectory
from .images import load_png, save_pfm, save_png
from .losses import psnr, ssim
from .plyio import load_ply, save_gaussians_ply, save_pointcloud_ply
from .pyramid import laplacian_decompose
from .renderer import render
from .synthetic import generate_synthetic
from .trainer import train


def _load_scene(path) -> GaussianSet:
    obj = load_ply(path)
    if isinstance(obj, GaussianSet):
        return obj
    return init_from_pointcloud(obj)


def cmd_init(args) -> int:
    obj = load_ply(args.ply)
    if not isinstance(obj, PointCloud):
        raise InvalidArgumentError(f"{args.ply} is already a Gaussian checkpoint")
    scene = init_from_pointcloud(obj)
    save_gaussians_ply(args.out, scene)
    print(f"initialized {scene.n} gaussians -> {args.out}")
    return 0


def cmd_interp_poses(args) -> int:
    views = read_pose_file(args.poses)
    if len(views) < 2:
        raise InvalidArgumentError("need at least 2 poses to interpolate")
    out_views = []
    for pair_idx in range(len(views) - 1):
        a, b = views[pair_idx], views[pair_idx + 1]
        # Interpolated views reuse the intrinsics of the pair's first view.
        for j, pose in enumerate(interpolate_trajectory(a.pose, b.pose, args.count)):
            out_views.append(
                CameraView(a.intrinsics, pose, f"interp{pair_idx:02d}_{j:02d}")
            )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pose_file(out_dir / "poses.txt", out_views)
    print(f"wrote {len(out_views)} poses -> {out_dir / 'poses.txt'}")
    return 0


def cmd_synth(args) -> int:
    data = generate_synthetic(
        seed=args.seed,
        n_gaussians=args.gaussians,
        n_train_views=args.train_views,
        n_pseudo_views=args.pseudo,
        noise_sigma=args.noise,
        subsample=args.subsample,
        image_size=args.size,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pointcloud_ply(out / "init_points.ply", data.init_cloud)
    save_gaussians_ply(out / "gt_scene.ply", data.gt_scene)
    save_view_dir(out / "train_views", data.train_views)
    save_view_dir(out / "eval_views", data.eval_views)
    save_bundle(out / "bundle", data.pseudo_bundle)
    print(
        f"synthetic scene seed={args.seed}: {data.gt_scene.n} gaussians,"
        f" {len(data.train_views)} train / {len(data.pseudo_bundle)} pseudo /"
        f" {len(data.eval_views)} eval views -> {out}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_train_config(args.config)
    scene = _load_scene(args.scene)
    train_views = load_view_dir(args.views)
    bundle = load_bundle(args.bundle) if args.bundle else PseudoViewBundle.empty()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    final, log = train(scene, train_views, bundle, cfg, checkpoint_dir=out)
    save_gaussians_ply(out / "scene_final.ply", final)
    log.write(out / "trainlog.jsonl")
    last = log.iterations[-1] if log.iterations else None
    tail = f", final loss {last['total']:.5f}" if last else ""
    print(f"trained {cfg.total_iters} iters, {final.n} gaussians{tail} -> {out}")
    return 0


def cmd_render(args) -> int:
    scene = _load_scene(args.scene)
    views = read_pose_file(args.pose)
    if not views:
        raise InvalidArgumentError(f"{args.pose} contains no poses")
    out = render(scene, views[0])
    save_png(args.out, out.rgb)
    if args.depth:
        save_pfm(args.depth, out.depth)
    print(f"rendered view '{views[0].id}' -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    scene = _load_scene(args.scene)
    views = load_view_dir(args.views)
    print(f"{'view':<16}{'psnr_db':>10}{'ssim':>8}")
    psnrs, ssims = [], []
    for view, img in views:
        out = render(scene, view)
        p, s = psnr(out.rgb, img), ssim(out.rgb, img)
        psnrs.append(p)
        ssims.append(s)
        print(f"{view.id:<16}{p:>10.3f}{s:>8.4f}")
    if psnrs:
        print(f"{'mean':<16}{float(np.mean(psnrs)):>10.3f}{float(np.mean(ssims)):>8.4f}")
    return 0


def cmd_pyr(args) -> int:
    img = load_png(args.image)
    pyr = laplacian_decompose(img, args.levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, level in enumerate(pyr.levels):
        save_pfm(out / f"level_{i:02d}.pfm", level)
    save_pfm(out / "top.pfm", pyr.top)
    print(f"wrote {len(pyr.levels)} band-pass levels + top -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsesplat",
        description="Desk-scale differentiable Gaussian splatting for sparse views.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("init", help="initialize gaussians from a point cloud PLY")
    p.add_argument("--ply", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("interp-poses", help="interpolate a smooth trajectory between poses")
    p.add_argument("--poses", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interp_poses)

    p = sub.add_parser("synth", help="generate a synthetic oracle dataset")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--gaussians", type=int, default=300)
    p.add_argument("--train-views", type=int, default=2)
    p.add_argument("--pseudo", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--subsample", type=float, default=1.0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the optimization loop")
    p.add_argument("--scene", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--bundle", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one pose from a scene checkpoint")
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM table against a view directory")
    p.add_argument("--scene", required=True)
    p.add_argument("--views", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pyr", help="dump a Laplacian decomposition (debug)")
    p.add_argument("--image", required=True)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pyr)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
