"""Calibration probe for the ablation-ordering benchmark (not shipped in tests)."""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from sparsesplat.bundle import PseudoViewBundle
from sparsesplat.depth_reg import ScheduleConfig
from sparsesplat.gaussians import init_from_pointcloud
from sparsesplat.losses import LossWeights, psnr
from sparsesplat.renderer import render
from sparsesplat.synthetic import generate_synthetic
from sparsesplat.trainer import TrainConfig, train

T = int(sys.argv[1]) if len(sys.argv) > 1 else 800
NOISE = float(sys.argv[2]) if len(sys.argv) > 2 else 0.05
SUB = float(sys.argv[3]) if len(sys.argv) > 3 else 0.7
NG = int(sys.argv[4]) if len(sys.argv) > 4 else 150
SIZE = int(sys.argv[5]) if len(sys.argv) > 5 else 48


def run(data, use_pseudo, lam2, lam3, scales, beta, seed):
    weights = LossWeights(lambda1=0.8, lambda2=lam2, lambda3=lam3)
    schedule = ScheduleConfig(
        alpha=0.3, beta=beta, total_iters=T,
        scales=scales, scale_weights=tuple(1.0 for _ in scales),
    )
    cfg = TrainConfig(total_iters=T, weights=weights, schedule=schedule, eval_interval=0, seed=seed)
    scene0 = init_from_pointcloud(data.init_cloud)
    bundle = data.pseudo_bundle if use_pseudo else PseudoViewBundle.empty()
    scene, _ = train(scene0, data.train_views, bundle, cfg)
    return float(np.mean([psnr(render(scene, v).rgb, img) for v, img in data.eval_views]))


CONFIGS = {
    "baseline": dict(use_pseudo=False, lam2=0.0, lam3=0.0, scales=(1, 2, 4), beta=1.0),
    "+pseudo": dict(use_pseudo=True, lam2=0.0, lam3=0.0, scales=(1, 2, 4), beta=1.0),
    "+mlcr": dict(use_pseudo=True, lam2=1.0, lam3=0.0, scales=(1, 2, 4), beta=1.0),
    "+asmg": dict(use_pseudo=True, lam2=1.0, lam3=0.5, scales=(1, 2, 4), beta=1.0),
    "pearson1": dict(use_pseudo=True, lam2=1.0, lam3=0.5, scales=(1,), beta=0.0),
}

t0 = time.time()
results = {name: [] for name in CONFIGS}
for seed in (0, 1, 2):
    data = generate_synthetic(seed=seed, n_gaussians=NG, n_train_views=2, n_pseudo_views=5,
                              noise_sigma=NOISE, subsample=SUB, image_size=SIZE)
    for name, kw in CONFIGS.items():
        t1 = time.time()
        p = run(data, seed=seed, **kw)
        results[name].append(p)
        print(f"seed {seed} {name:<10}: {p:6.2f} dB  [{time.time()-t1:.0f}s]", flush=True)

print(f"\nT={T} noise={NOISE} sub={SUB} ng={NG} size={SIZE}  total {time.time()-t0:.0f}s")
for name, vals in results.items():
    print(f"{name:<10} mean {np.mean(vals):6.2f}  {['%.2f' % v for v in vals]}")
chain = ["baseline", "+pseudo", "+mlcr", "+asmg"]
means = {k: np.mean(v) for k, v in results.items()}
ok = all(means[chain[i + 1]] >= means[chain[i]] - 0.1 for i in range(3))
ok2 = means["+asmg"] >= means["pearson1"] - 0.1
print("chain ordering ok:", ok, " asmg>=pearson1:", ok2)
