"""Acceptance gate: every release criterion at its stated tolerance.

Each test prints one [PASS]/[FAIL] line (run pytest with -s to see them
all at once). The slow end-to-end criteria (6, 7) train real scenes and
dominate the suite's runtime.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from sparsesplat.bundle import PseudoViewBundle, load_bundle, save_bundle
from sparsesplat.config import build_train_config, parse_config_text
from sparsesplat.depth_reg import (
    DepthPair,
    ScheduleConfig,
    asmg_total,
    asmg_total_grad,
    depth_corr_loss_per_scale,
    eta,
    make_depth_pair,
    multiscale_depth_loss,
    spatial_mask,
)
from sparsesplat.errors import EngineError, ParseError, ValidationError
from sparsesplat.gaussians import GaussianSet, init_from_pointcloud
from sparsesplat.geometry import CameraView, Intrinsics, look_at_pose
from sparsesplat.gradients import finite_difference_check
from sparsesplat.images import load_pfm, save_pfm
from sparsesplat.losses import LossWeights, l1_loss_grad, psnr, ssim_grad, total_loss
from sparsesplat.plyio import load_ply, save_gaussians_ply, save_pointcloud_ply
from sparsesplat.pyramid import laplacian_decompose, laplacian_reconstruct, mlcr_loss_grad
from sparsesplat.renderer import RenderOutput, render, render_reference
from sparsesplat.synthetic import generate_synthetic
from sparsesplat.trainer import TrainConfig, train


def _report(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _random_scene(rng, n, scale_range=(0.06, 0.25)):
    return GaussianSet(
        mus=rng.uniform(-0.45, 0.45, (n, 3)),
        rots=rng.normal(size=(n, 4)),
        log_scales=rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), (n, 3)),
        opacity_logits=rng.uniform(-1.0, 2.5, n),
        colors=rng.uniform(0.05, 0.95, (n, 3)),
    )


def _camera(rng, w, h):
    pos = tuple(rng.normal([0.0, 0.0, -2.3], 0.15))
    return CameraView(
        Intrinsics(1.2 * w, 1.2 * w, (w - 1) / 2, (h - 1) / 2, w, h),
        look_at_pose(pos, (0.0, 0.0, 0.0)),
        "cam",
    )


def test_c1_gradient_correctness():
    """Analytic vs central differences per loss term, 3 scenes, <60 s."""
    t0 = time.time()
    schedule = ScheduleConfig()
    worst = 0.0
    worst_what = ""
    for seed in (101, 102, 103):
        rng = np.random.default_rng(seed)
        scene = _random_scene(rng, 10)
        view = _camera(rng, 32, 32)
        target_scene = GaussianSet(
            scene.mus + 0.05 * rng.normal(size=scene.mus.shape), scene.rots,
            scene.log_scales, scene.opacity_logits, scene.colors,
        )
        tgt = render_reference(target_scene, view)
        tgt_depth = np.where(tgt.alpha > 1e-4, tgt.depth, np.nan)

        def lf_l1(o):
            v, g = l1_loss_grad(o.rgb, tgt.rgb)
            return v, g, np.zeros_like(o.depth)

        def lf_dssim(o):
            v, g = ssim_grad(o.rgb, tgt.rgb)
            return 1.0 - v, -g, np.zeros_like(o.depth)

        def lf_mlcr(o):
            v, g = mlcr_loss_grad(o.rgb, tgt.rgb)
            return v, g, np.zeros_like(o.depth)

        def lf_asmg(o):
            pair = make_depth_pair(o, tgt_depth)
            if pair is None:
                return 0.0, np.zeros_like(o.rgb), np.zeros_like(o.depth)
            v, g = asmg_total_grad(pair, 2500, schedule)
            return v, np.zeros_like(o.rgb), g

        for name, fn in (("L1", lf_l1), ("D-SSIM", lf_dssim), ("MLCR", lf_mlcr), ("ASMG", lf_asmg)):
            rep = finite_difference_check(scene, view, fn, h=1e-4, min_grad=1e-6)
            if rep.worst_rel_err > worst:
                worst = rep.worst_rel_err
                worst_what = f"{name} seed {seed} at {rep.worst_param}"
    elapsed = time.time() - t0
    _report(
        "criterion 1 (gradient correctness)",
        worst < 1e-3 and elapsed < 60.0,
        f"worst rel err {worst:.2e} ({worst_what}), {elapsed:.1f}s",
    )


def test_c2_renderer_oracle_equivalence():
    """Tiled render equals the reference path on 20 random scenes, <30 s."""
    t0 = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        scene = _random_scene(rng, int(rng.integers(5, 101)))
        view = _camera(rng, 64, 64)
        fast = render(scene, view)
        ref = render_reference(scene, view)
        worst = max(
            worst,
            np.abs(fast.rgb - ref.rgb).max(),
            np.abs(fast.depth - ref.depth).max(),
            np.abs(fast.alpha - ref.alpha).max(),
        )
    elapsed = time.time() - t0
    _report(
        "criterion 2 (renderer oracle equivalence)",
        worst < 1e-5 and elapsed < 30.0,
        f"max abs pixel diff {worst:.2e}, {elapsed:.1f}s",
    )


def test_c3_laplacian_reconstruction():
    """Round-trip error < 1e-6 for K in 1..4 on 10 random 128x128 images."""
    worst = 0.0
    rng = np.random.default_rng(7)
    for _ in range(10):
        img = rng.uniform(0.0, 1.0, (128, 128, 3))
        for k in (1, 2, 3, 4):
            recon = laplacian_reconstruct(laplacian_decompose(img, k))
            worst = max(worst, float(np.abs(recon - img).max()))
    _report(
        "criterion 3 (laplacian perfect reconstruction)",
        worst < 1e-6,
        f"worst per-pixel round-trip error {worst:.2e}",
    )


def test_c4_pearson_asmg_properties():
    """Affine invariance, per-scale range, exact schedule algebra, onset gating."""
    rng = np.random.default_rng(11)
    cfg = ScheduleConfig()  # alpha=0.3, T=6000
    drift = 0.0
    for _ in range(10):
        ref = rng.uniform(1.0, 3.0, (32, 32))
        rend = ref + rng.normal(size=(32, 32))
        valid = rng.uniform(size=(32, 32)) > 0.1
        pair = DepthPair(rend, ref, valid)
        base = asmg_total(pair, 2500, cfg)
        a, b = rng.uniform(0.2, 5.0), rng.uniform(-3.0, 3.0)
        drift = max(drift, abs(asmg_total(DepthPair(rend, a * ref + b, valid), 2500, cfg) - base))
        drift = max(drift, abs(asmg_total(DepthPair(a * rend + b, ref, valid), 2500, cfg) - base))
        m0 = spatial_mask(ref, cfg.mask_threshold)
        assert np.array_equal(m0, spatial_mask(a * ref + b, cfg.mask_threshold))

    in_range = True
    for _ in range(20):
        ref = rng.uniform(1.0, 3.0, (24, 24))
        pair = DepthPair(ref + rng.uniform(0, 3) * rng.normal(size=(24, 24)), ref,
                         np.ones((24, 24), dtype=bool))
        for s in (1, 2, 4):
            v = depth_corr_loss_per_scale(pair, s)
            in_range &= 0.0 <= v <= 2.0

    onset = cfg.alpha * cfg.total_iters
    eta_exact = eta(int(onset), cfg) == 1.0 and eta(int(onset + 0.25 * cfg.total_iters), cfg) == 0.5

    gated = True
    ref = rng.uniform(1.0, 3.0, (24, 24))
    pair = DepthPair(ref + rng.normal(size=(24, 24)), ref, np.ones((24, 24), dtype=bool))
    for t in (0, 500, 1799):
        gated &= asmg_total(pair, t, cfg) == multiscale_depth_loss(pair, cfg)

    _report(
        "criterion 4 (pearson/asmg properties)",
        drift < 1e-9 and in_range and eta_exact and gated,
        f"affine drift {drift:.2e}, per-scale in [0,2]: {in_range},"
        f" eta exact: {eta_exact}, masked gated pre-onset: {gated}",
    )


def test_c5_paper_constants_from_empty_config():
    """Empty config yields the published defaults, wired into the arithmetic."""
    cfg = build_train_config(parse_config_text(""))
    defaults_ok = (
        cfg.weights.lambda1 == 0.8
        and cfg.weights.lambda2 == 1.0
        and cfg.weights.lambda3 == 0.5
        and cfg.total_iters == 6000
        and cfg.schedule.mask_threshold == 0.4
    )
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, (16, 16, 3))
    tgt = rng.uniform(0, 1, (16, 16, 3))
    ref = rng.uniform(1, 2, (16, 16))
    pair = DepthPair(ref + rng.normal(size=(16, 16)), ref, np.ones((16, 16), dtype=bool))
    out = RenderOutput(rgb=img, depth=np.ones((16, 16)), alpha=np.ones((16, 16)))
    lb = total_loss(out, tgt, pair, cfg.weights, 2500, cfg.schedule)
    recon = 0.8 * lb.l1 + 0.2 * lb.ssim_term + 1.0 * lb.mlcr + 0.5 * lb.asmg
    arithmetic_ok = abs(lb.total - recon) < 1e-9 and lb.mlcr > 0 and lb.asmg > 0
    _report(
        "criterion 5 (paper constants from empty config)",
        defaults_ok and arithmetic_ok,
        f"lambda=(0.8,1,0.5) T=6000 mask=0.4 loaded: {defaults_ok};"
        f" breakdown identity at defaults: {arithmetic_ok}",
    )


def test_c6_end_to_end_synthetic_convergence(tmp_path):
    """CLI synth -> train (T=6000) -> eval: PSNR >= 30 dB in under 10 min."""
    t0 = time.time()
    data_dir = tmp_path / "data"
    run_dir = tmp_path / "run"

    def cli(*args):
        proc = subprocess.run(
            [sys.executable, "-m", "sparsesplat.cli", *args], capture_output=True, text=True
        )
        assert proc.returncode == 0, proc.stderr
        return proc.stdout

    cli("synth", "--seed", "1", "--gaussians", "300", "--train-views", "2",
        "--pseudo", "5", "--noise", "0.01", "--out", str(data_dir))
    cli("train", "--scene", str(data_dir / "init_points.ply"),
        "--views", str(data_dir / "train_views"), "--bundle", str(data_dir / "bundle"),
        "--out", str(run_dir))
    out = cli("eval", "--scene", str(run_dir / "scene_final.ply"),
              "--views", str(data_dir / "eval_views"))
    mean_line = [ln for ln in out.splitlines() if ln.startswith("mean")][0]
    mean_psnr = float(mean_line.split()[1])
    elapsed = time.time() - t0
    _report(
        "criterion 6 (end-to-end synthetic convergence)",
        mean_psnr >= 30.0 and elapsed < 600.0,
        f"held-out PSNR {mean_psnr:.2f} dB (>= 30), wall time {elapsed:.0f}s (< 600)",
    )


def _benchmark_run(data, total_iters, lam2, lam3, scales, beta, use_pseudo, seed):
    weights = LossWeights(lambda1=0.8, lambda2=lam2, lambda3=lam3)
    schedule = ScheduleConfig(
        alpha=0.3, beta=beta, total_iters=total_iters,
        scales=scales, scale_weights=tuple(1.0 for _ in scales),
    )
    cfg = TrainConfig(total_iters=total_iters, weights=weights, schedule=schedule,
                      eval_interval=0, seed=seed)
    bundle = data.pseudo_bundle if use_pseudo else PseudoViewBundle.empty()
    scene, _ = train(init_from_pointcloud(data.init_cloud), data.train_views, bundle, cfg)
    return float(np.mean([psnr(render(scene, v).rgb, img) for v, img in data.eval_views]))


def test_c7_ablation_ordering():
    """Mean held-out PSNR must be non-decreasing along the component chain."""
    T = 2000
    chains = {"baseline": [], "+pseudo": [], "+mlcr": [], "+asmg": [], "pearson1": []}
    for seed in (0, 1, 2):
        data = generate_synthetic(seed=seed, n_gaussians=100, n_train_views=2,
                                  n_pseudo_views=7, noise_sigma=0.05, subsample=0.7,
                                  image_size=40)
        chains["baseline"].append(_benchmark_run(data, T, 0.0, 0.0, (1, 2, 4), 1.0, False, seed))
        chains["+pseudo"].append(_benchmark_run(data, T, 0.0, 0.0, (1, 2, 4), 1.0, True, seed))
        chains["+mlcr"].append(_benchmark_run(data, T, 1.0, 0.0, (1, 2, 4), 1.0, True, seed))
        chains["+asmg"].append(_benchmark_run(data, T, 1.0, 0.5, (1, 2, 4), 1.0, True, seed))
        chains["pearson1"].append(_benchmark_run(data, T, 1.0, 0.5, (1,), 0.0, True, seed))
    means = {k: float(np.mean(v)) for k, v in chains.items()}
    order = ["baseline", "+pseudo", "+mlcr", "+asmg"]
    steps_ok = all(means[order[i + 1]] >= means[order[i]] - 0.1 for i in range(3))
    pearson_ok = means["+asmg"] >= means["pearson1"] - 0.1
    detail = " -> ".join(f"{k} {means[k]:.2f}" for k in order) + f"; pearson1 {means['pearson1']:.2f}"
    _report(
        "criterion 7 (ablation ordering)",
        steps_ok and pearson_ok,
        detail + " dB (each step >= previous - 0.1, asmg >= single-scale pearson - 0.1)",
    )


def test_c8_determinism(tmp_path):
    """Identical seed + config + inputs give bit-identical TrainLog files."""
    data = generate_synthetic(seed=5, n_gaussians=40, n_train_views=2, n_pseudo_views=3,
                              noise_sigma=0.03, image_size=32)
    scene0 = init_from_pointcloud(data.init_cloud)
    cfg = TrainConfig(total_iters=80, seed=13, eval_interval=40,
                      densify_interval=20, densify_start=10, densify_stop_fraction=1.0,
                      densify_grad_threshold=0.02,
                      schedule=ScheduleConfig(total_iters=80))
    paths = []
    for name in ("a", "b"):
        scene, log = train(scene0, data.train_views, data.pseudo_bundle, cfg,
                           eval_views=data.eval_views)
        p = tmp_path / f"log_{name}.jsonl"
        log.write(p)
        paths.append(p)
    identical = paths[0].read_bytes() == paths[1].read_bytes()
    n_records = len(paths[0].read_text().splitlines())
    _report(
        "criterion 8 (determinism)",
        identical and n_records > 80,
        f"two runs, {n_records} log records each, byte-identical: {identical}",
    )


def test_c9_format_roundtrips_and_malformed_inputs(tmp_path):
    """Serialization round-trips plus categorized errors (never crashes)."""
    rng = np.random.default_rng(21)
    ok = True
    notes = []

    # binary round trips are bit-exact
    scene = _random_scene(rng, 12)
    save_gaussians_ply(tmp_path / "ck.ply", scene)
    again = load_ply(tmp_path / "ck.ply")
    bit_exact = (
        np.array_equal(again.mus, scene.mus)
        and np.array_equal(again.rots, scene.rots)
        and np.array_equal(again.log_scales, scene.log_scales)
        and np.array_equal(again.opacity_logits, scene.opacity_logits)
        and np.array_equal(again.colors, scene.colors)
    )
    ok &= bit_exact
    notes.append(f"binary PLY bit-exact: {bit_exact}")

    depth = rng.uniform(0.5, 4.0, (24, 24)).astype(np.float32).astype(np.float64)
    save_pfm(tmp_path / "d.pfm", depth)
    ok &= bool(np.array_equal(load_pfm(tmp_path / "d.pfm"), depth))

    data = generate_synthetic(seed=2, n_gaussians=10, n_train_views=2, n_pseudo_views=2,
                              noise_sigma=0.0, image_size=24)
    save_bundle(tmp_path / "bundle", data.pseudo_bundle)
    loaded = load_bundle(tmp_path / "bundle")
    bundle_ok = len(loaded) == len(data.pseudo_bundle) and all(
        np.abs(a.image - b.image).max() <= 0.5 / 255.0 + 1e-12
        and np.allclose(a.depth, b.depth, atol=1e-6, equal_nan=True)
        for a, b in zip(loaded.views, data.pseudo_bundle.views)
    )
    ok &= bundle_ok
    notes.append(f"bundle round-trip within format precision: {bundle_ok}")

    # ASCII scene round trip within text precision
    save_gaussians_ply(tmp_path / "ck_ascii.ply", scene, binary=False)
    ascii_again = load_ply(tmp_path / "ck_ascii.ply")
    ok &= bool(np.abs(ascii_again.mus - scene.mus).max() < 1e-6)

    # malformed inputs: every failure is a categorized EngineError
    malformed = []
    (tmp_path / "bad1.ply").write_text("ply\nformat ascii 1.0\nelement vertex 3\n"
                                       "property float x\nproperty float y\nproperty float z\n"
                                       "end_header\n0 0 0\n")
    malformed.append((tmp_path / "bad1.ply", load_ply, ParseError))
    (tmp_path / "bad2.ply").write_text("not ply\n")
    malformed.append((tmp_path / "bad2.ply", load_ply, ParseError))
    (tmp_path / "bad3.pfm").write_bytes(b"Pf\n8 8\n-1.0\n" + b"\x00" * 10)
    malformed.append((tmp_path / "bad3.pfm", load_pfm, ParseError))
    save_pfm(tmp_path / "bundle" / (data.pseudo_bundle.views[0].id + "_depth.pfm"), np.zeros((3, 3)))
    malformed.append((tmp_path / "bundle", load_bundle, ValidationError))

    categorized = True
    for path, loader, exc_type in malformed:
        try:
            loader(path)
            categorized = False
            notes.append(f"{path.name}: no error raised")
        except exc_type as exc:
            categorized &= isinstance(exc, EngineError) and bool(exc.category)
        except Exception as exc:  # wrong category or a crash
            categorized = False
            notes.append(f"{path.name}: {type(exc).__name__}")
    ok &= categorized
    notes.append(f"malformed inputs categorized: {categorized}")

    _report("criterion 9 (format round-trips)", bool(ok), "; ".join(notes))
