"""3D Gaussian primitives with factorized covariance.

The scene is a struct-of-arrays (`GaussianSet`) for speed; `Gaussian`
is the per-primitive value view used at API boundaries and in tests.

Parameterization keeps invariants unconditionally true under gradient
descent: scales are stored as logs (scale = exp(log_scale) > 0) and
opacity as a logit (opacity = sigmoid(logit) in (0,1)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, NumericError
from .geometry import quat_normalize, quat_to_matrix

INIT_OPACITY = 0.1
SCALE_CLAMP = (1e-4, 1e2)
COND_LIMIT = 1e12


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class Gaussian:
    """One primitive: center, orientation, log scales, opacity logit, color."""

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3) in [0, 1]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        cols = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(pts) != len(cols):
            raise InvalidArgumentError("points and colors must have equal length")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return len(self.points)


class GaussianSet:
    """Ordered collection of Gaussians stored as packed arrays."""

    def __init__(self, mus, rots, log_scales, opacity_logits, colors):
        self.mus = np.asarray(mus, dtype=np.float64).reshape(-1, 3)
        n = len(self.mus)
        rots = np.array(rots, dtype=np.float64).reshape(n, 4)
        norms = np.linalg.norm(rots, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise InvalidArgumentError("zero-norm quaternion in GaussianSet")
        # normalize only rows that need it so unit input survives bit-exactly
        # (checkpoint round trips must not drift)
        off = np.abs(norms - 1.0) > 1e-12
        if np.any(off):
            rows = off[:, 0]
            rots[rows] = rots[rows] / norms[rows]
        self.rots = rots
        self.log_scales = np.asarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(colors, dtype=np.float64).reshape(n, 3)

    @property
    def n(self) -> int:
        return len(self.mus)

    def __len__(self) -> int:
        return self.n

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            mu=self.mus[i].copy(),
            rot=self.rots[i].copy(),
            log_scale=self.log_scales[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i].copy(),
        )

    @property
    def gaussians(self) -> list[Gaussian]:
        return [self.gaussian(i) for i in range(self.n)]

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 4)) + [1, 0, 0, 0], np.zeros((0, 3)),
            np.zeros(0), np.zeros((0, 3)),
        )

    @classmethod
    def from_gaussians(cls, gaussians) -> "GaussianSet":
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.mu for g in gaussians]),
            np.stack([g.rot for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.color for g in gaussians]),
        )

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.mus.copy(), self.rots.copy(), self.log_scales.copy(),
            self.opacity_logits.copy(), self.colors.copy(),
        )

    def subset(self, mask_or_indices) -> "GaussianSet":
        idx = mask_or_indices
        return GaussianSet(
            self.mus[idx], self.rots[idx], self.log_scales[idx],
            self.opacity_logits[idx], self.colors[idx],
        )

    def concat(self, other: "GaussianSet") -> "GaussianSet":
        return GaussianSet(
            np.concatenate([self.mus, other.mus]),
            np.concatenate([self.rots, other.rots]),
            np.concatenate([self.log_scales, other.log_scales]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.concatenate([self.colors, other.colors]),
        )


def covariance_from_rs(rot, scale) -> np.ndarray:
    """Covariance R * S * S^T * R^T from a quaternion and positive scales."""
    scale = np.asarray(scale, dtype=np.float64).reshape(3)
    if np.any(scale <= 0):
        raise InvalidArgumentError("scale components must be positive")
    R = quat_to_matrix(quat_normalize(rot))
    return (R * scale**2) @ R.T


def covariance_batch(rots: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Vectorized covariance_from_rs over (N,4) quats and (N,3) scales."""
    from .geometry import quat_to_matrix_batch

    R = quat_to_matrix_batch(rots)
    RS2 = R * (scales**2)[:, None, :]
    return np.einsum("nij,nkj->nik", RS2, R)


def evaluate_gaussian(g: Gaussian, x) -> float:
    """Unnormalized density exp(-0.5 * (x-mu)^T Sigma^-1 (x-mu)) in (0, 1]."""
    sigma = covariance_from_rs(g.rot, g.scale)
    eig = np.linalg.eigvalsh(sigma)
    if eig[0] <= 0 or eig[-1] / eig[0] > COND_LIMIT:
        raise NumericError(
            f"near-singular covariance (condition number {eig[-1] / max(eig[0], 1e-300):.3g})"
        )
    d = np.asarray(x, dtype=np.float64).reshape(3) - g.mu
    m = float(d @ np.linalg.solve(sigma, d))
    return float(np.exp(-0.5 * m))


def init_from_pointcloud(pc: PointCloud, initial_opacity: float = INIT_OPACITY) -> GaussianSet:
    """Seed one isotropic Gaussian per point.

    The per-point scale is the mean distance to the 3 nearest neighbors,
    clamped to SCALE_CLAMP (a lone point gets the lower clamp). Rotations
    start at identity and colors pass through.
    """
    n = len(pc)
    if n == 0:
        raise InvalidArgumentError("cannot initialize from an empty point cloud")
    if n == 1:
        scale = np.full(1, SCALE_CLAMP[0])
    else:
        k = min(3, n - 1)
        tree = cKDTree(pc.points)
        dist, _ = tree.query(pc.points, k=k + 1)  # first hit is the point itself
        scale = np.clip(dist[:, 1:].mean(axis=1), *SCALE_CLAMP)
    log_scales = np.log(scale)[:, None].repeat(3, axis=1)
    rots = np.zeros((n, 4))
    rots[:, 0] = 1.0
    logits = np.full(n, float(logit(initial_opacity)))
    return GaussianSet(pc.points.copy(), rots, log_scales, logits, np.clip(pc.colors, 0.0, 1.0))
