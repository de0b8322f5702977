"""Forward splatting: projection, tiled alpha compositing, reference path.

Pipeline per view:

1. project every Gaussian center into the camera, cull behind the near
   plane, and push the 3D covariance through the affine Jacobian of the
   pinhole projection (plus a small anti-aliasing dilation floor);
2. sort splats globally by (depth, source index);
3. composite front-to-back per pixel. The fast path buckets splats into
   16x16 tiles by their 3-sigma bounding boxes; `render_reference`
   composites every splat at every pixel with no tiling and is the
   correctness oracle for the fast path.

A splat-pixel pair contributes only while the Mahalanobis distance is
within 3 sigma (squared distance <= 9, i.e. a weight >= exp(-4.5));
beyond that the contribution is exactly zero in both paths, which is
what makes tile culling lossless.

The depth map is alpha-composited like color and normalized by the
accumulated alpha where alpha > ALPHA_EPS (0 elsewhere).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .gaussians import GaussianSet, PointCloud, covariance_batch, sigmoid
from .geometry import CameraView

NEAR_PLANE = 0.01
TILE = 16
DILATION_FLOOR = 0.3  # px^2 added to the projected covariance diagonal
MAX_ALPHA = 0.99
CUTOFF_MSQ = 9.0  # 3-sigma squared Mahalanobis cutoff
ALPHA_EPS = 1e-4  # depth normalization / validity threshold


@dataclass(frozen=True)
class Splat2D:
    """Projected footprint of one Gaussian on the image plane."""

    center_px: np.ndarray  # (u, v)
    cov2d: np.ndarray  # 2x2 symmetric
    depth: float
    color: np.ndarray
    opacity: float
    source_index: int


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) alpha-normalized composited camera depth
    alpha: np.ndarray  # (H, W) accumulated opacity in [0, 1]


class ProjectedSplats:
    """Packed per-view projection results for the kept (visible) splats."""

    __slots__ = ("u", "v", "z", "inv", "cov", "color", "opacity", "index", "t_cam", "n_source")

    def __init__(self, u, v, z, inv, cov, color, opacity, index, t_cam, n_source):
        self.u = u
        self.v = v
        self.z = z
        self.inv = inv  # (K, 2, 2) inverse 2D covariance
        self.cov = cov  # (K, 2, 2)
        self.color = color
        self.opacity = opacity
        self.index = index  # indices into the source GaussianSet
        self.t_cam = t_cam  # (K, 3) camera-frame centers
        self.n_source = n_source

    def __len__(self) -> int:
        return len(self.u)


def _projection_jacobian(t_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Jacobian of (u, v) w.r.t. the camera-frame point, per splat: (K, 2, 3)."""
    tx, ty, tz = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    J = np.zeros((len(t_cam), 2, 3))
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * tx / tz**2
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * ty / tz**2
    return J


def project_splats_soa(scene: GaussianSet, view: CameraView, near: float = NEAR_PLANE) -> ProjectedSplats:
    """Project all Gaussians, cull against the near plane, depth-sort.

    Returned splats are ordered by increasing depth with ties broken by
    source index so compositing order is a deterministic total order.
    """
    k = view.intrinsics
    W = view.pose.rotation_matrix()
    t_cam = scene.mus @ W.T + view.pose.translation
    keep = t_cam[:, 2] > near
    idx = np.nonzero(keep)[0]
    t_cam = t_cam[idx]
    z = t_cam[:, 2]

    order = np.lexsort((idx, z))
    idx, t_cam, z = idx[order], t_cam[order], z[order]

    u = k.fx * t_cam[:, 0] / z + k.cx
    v = k.fy * t_cam[:, 1] / z + k.cy

    sigma = covariance_batch(scene.rots[idx], scene.scales[idx])
    M = np.einsum("ij,njk,lk->nil", W, sigma, W)
    J = _projection_jacobian(t_cam, k.fx, k.fy)
    cov2d = np.einsum("nij,njk,nlk->nil", J, M, J)
    cov2d[:, 0, 0] += DILATION_FLOOR
    cov2d[:, 1, 1] += DILATION_FLOOR

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = cov2d[:, 1, 1] / det
    inv[:, 1, 1] = cov2d[:, 0, 0] / det
    inv[:, 0, 1] = -cov2d[:, 0, 1] / det
    inv[:, 1, 0] = -cov2d[:, 1, 0] / det

    return ProjectedSplats(
        u=u, v=v, z=z, inv=inv, cov=cov2d,
        color=scene.colors[idx], opacity=sigmoid(scene.opacity_logits[idx]),
        index=idx, t_cam=t_cam, n_source=scene.n,
    )


def project_covariance(sigma, view: CameraView, mu) -> np.ndarray | None:
    """2D covariance J W Sigma W^T J^T + dilation floor for one Gaussian.

    Returns None when the center is culled by the near plane.
    """
    sigma = np.asarray(sigma, dtype=np.float64).reshape(3, 3)
    k = view.intrinsics
    W = view.pose.rotation_matrix()
    t = view.pose.apply(np.asarray(mu, dtype=np.float64).reshape(3))
    if t[2] <= NEAR_PLANE:
        return None
    J = _projection_jacobian(t[None, :], k.fx, k.fy)[0]
    out = J @ W @ sigma @ W.T @ J.T
    out[0, 0] += DILATION_FLOOR
    out[1, 1] += DILATION_FLOOR
    return out


def project_splats(scene: GaussianSet, view: CameraView) -> list[Splat2D]:
    """Per-splat view of the projection stage (API/debug convenience)."""
    p = project_splats_soa(scene, view)
    return [
        Splat2D(
            center_px=np.array([p.u[i], p.v[i]]),
            cov2d=p.cov[i].copy(),
            depth=float(p.z[i]),
            color=p.color[i].copy(),
            opacity=float(p.opacity[i]),
            source_index=int(p.index[i]),
        )
        for i in range(len(p))
    ]


def _alpha_block(p: ProjectedSplats, rows, X, Y):
    """Per-splat alpha over a pixel block: (K, P) alphas plus the weight mask.

    rows selects splats (in depth order); X, Y are flat pixel coords.
    """
    dx = X[None, :] - p.u[rows, None]
    dy = Y[None, :] - p.v[rows, None]
    inv = p.inv[rows]
    a = inv[:, 0, 0][:, None]
    b = inv[:, 0, 1][:, None]
    c = inv[:, 1, 1][:, None]
    m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    live = m <= CUTOFF_MSQ
    g = np.exp(-0.5 * m)
    g[~live] = 0.0
    alpha = np.minimum(p.opacity[rows, None] * g, MAX_ALPHA)
    return alpha, g, m, dx, dy, live


def _composite_forward(p: ProjectedSplats, rows, X, Y):
    """Front-to-back compositing over one pixel block.

    Returns (C, Draw, A, intermediates) where intermediates carry what the
    backward pass needs (alphas, transmittances, weights, gaussian values).
    """
    P = len(X)
    if len(rows) == 0:
        zero = np.zeros(P)
        return np.zeros((P, 3)), zero.copy(), zero.copy(), None
    alpha, g, m, dx, dy, live = _alpha_block(p, rows, X, Y)
    T = np.empty_like(alpha)
    T[0] = 1.0
    if len(rows) > 1:
        np.cumprod(1.0 - alpha[:-1], axis=0, out=T[1:])
    w = alpha * T
    C = np.einsum("kp,kc->pc", w, p.color[rows])
    A = w.sum(axis=0)
    Draw = (w * p.z[rows, None]).sum(axis=0)
    return C, Draw, A, (alpha, g, m, dx, dy, live, T, w)


def _tile_grid(width: int, height: int):
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    return ntx, nty


def tile_splat_lists(p: ProjectedSplats, width: int, height: int) -> list[np.ndarray]:
    """Depth-ordered splat row lists per tile, bucketed by 3-sigma boxes."""
    ntx, nty = _tile_grid(width, height)
    lists: list[list[int]] = [[] for _ in range(ntx * nty)]
    if len(p) == 0:
        return [np.empty(0, dtype=np.intp) for _ in range(ntx * nty)]
    rx = 3.0 * np.sqrt(p.cov[:, 0, 0])
    ry = 3.0 * np.sqrt(p.cov[:, 1, 1])
    tx0 = np.clip(np.floor((p.u - rx) / TILE).astype(int), 0, ntx - 1)
    tx1 = np.clip(np.floor((p.u + rx) / TILE).astype(int), 0, ntx - 1)
    ty0 = np.clip(np.floor((p.v - ry) / TILE).astype(int), 0, nty - 1)
    ty1 = np.clip(np.floor((p.v + ry) / TILE).astype(int), 0, nty - 1)
    offscreen = (p.u + rx < 0) | (p.u - rx > width - 1) | (p.v + ry < 0) | (p.v - ry > height - 1)
    for row in range(len(p)):  # rows already depth-ordered
        if offscreen[row]:
            continue
        for ty in range(ty0[row], ty1[row] + 1):
            base = ty * ntx
            for tx in range(tx0[row], tx1[row] + 1):
                lists[base + tx].append(row)
    return [np.asarray(lst, dtype=np.intp) for lst in lists]


def _tile_pixels(tx: int, ty: int, width: int, height: int):
    c0, c1 = tx * TILE, min((tx + 1) * TILE, width)
    r0, r1 = ty * TILE, min((ty + 1) * TILE, height)
    cols = np.arange(c0, c1, dtype=np.float64)
    rows_ = np.arange(r0, r1, dtype=np.float64)
    X = np.tile(cols, len(rows_))
    Y = np.repeat(rows_, len(cols))
    return (r0, r1, c0, c1), X, Y


def _normalize_depth(draw: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    out = np.zeros_like(draw)
    m = alpha > ALPHA_EPS
    out[m] = draw[m] / alpha[m]
    return out


class RenderCache:
    """Forward intermediates kept for the analytic backward pass."""

    __slots__ = ("splats", "lists", "tiles")

    def __init__(self, splats, lists, tiles):
        self.splats = splats
        self.lists = lists
        self.tiles = tiles  # per tile: (rect, C, Draw, A, compositing intermediates)


def render(
    scene: GaussianSet, view: CameraView, workers: int = 1, return_cache: bool = False
):
    """Tiled forward splatting producing RGB, depth, and alpha maps.

    With return_cache=True also returns the per-tile intermediates so a
    following `gradients.backward` call can skip the forward recompute.
    """
    k = view.intrinsics
    H, W = k.height, k.width
    p = project_splats_soa(scene, view)
    lists = tile_splat_lists(p, W, H)
    ntx, nty = _tile_grid(W, H)
    rgb = np.zeros((H, W, 3))
    draw = np.zeros((H, W))
    alpha = np.zeros((H, W))

    def do_tile(ti):
        ty, tx = divmod(ti, ntx)
        rect, X, Y = _tile_pixels(tx, ty, W, H)
        C, D, A, inter = _composite_forward(p, lists[ti], X, Y)
        return rect, C, D, A, inter

    tiles = range(ntx * nty)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(do_tile, tiles))
    else:
        results = [do_tile(ti) for ti in tiles]
    for (r0, r1, c0, c1), C, D, A, _ in results:
        sh = (r1 - r0, c1 - c0)
        rgb[r0:r1, c0:c1] = C.reshape(sh + (3,))
        draw[r0:r1, c0:c1] = D.reshape(sh)
        alpha[r0:r1, c0:c1] = A.reshape(sh)
    out = RenderOutput(rgb=rgb, depth=_normalize_depth(draw, alpha), alpha=alpha)
    if return_cache:
        return out, RenderCache(p, lists, results)
    return out


def render_reference(scene: GaussianSet, view: CameraView) -> RenderOutput:
    """Oracle path: global depth sort, every splat against every pixel."""
    k = view.intrinsics
    H, W = k.height, k.width
    p = project_splats_soa(scene, view)
    cols = np.arange(W, dtype=np.float64)
    rows_ = np.arange(H, dtype=np.float64)
    X = np.tile(cols, H)
    Y = np.repeat(rows_, W)
    C, D, A, _ = _composite_forward(p, np.arange(len(p), dtype=np.intp), X, Y)
    return RenderOutput(
        rgb=C.reshape(H, W, 3),
        depth=_normalize_depth(D.reshape(H, W), A.reshape(H, W)),
        alpha=A.reshape(H, W),
    )


def render_pointmap(pc: PointCloud, view: CameraView) -> np.ndarray:
    """Z-buffered 1-pixel point splats on a black background."""
    k = view.intrinsics
    H, W = k.height, k.width
    img = np.zeros((H, W, 3))
    if len(pc) == 0:
        return img
    t_cam = pc.points @ view.pose.rotation_matrix().T + view.pose.translation
    z = t_cam[:, 2]
    keep = z > NEAR_PLANE
    if not np.any(keep):
        return img
    t_cam, z = t_cam[keep], z[keep]
    colors = pc.colors[keep]
    cols = np.floor(k.fx * t_cam[:, 0] / z + k.cx + 0.5).astype(int)
    rows_ = np.floor(k.fy * t_cam[:, 1] / z + k.cy + 0.5).astype(int)
    inb = (cols >= 0) & (cols < W) & (rows_ >= 0) & (rows_ < H)
    cols, rows_, z, colors = cols[inb], rows_[inb], z[inb], colors[inb]
    # Paint far-to-near so the nearest point wins; ties keep the lowest index.
    order = np.lexsort((-np.arange(len(z)), -z))
    img[rows_[order], cols[order]] = np.clip(colors[order], 0.0, 1.0)
    return img
