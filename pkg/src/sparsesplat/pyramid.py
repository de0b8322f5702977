"""Laplacian pyramid decomposition and the band consistency loss.

Downsampling D is a separable 5-tap binomial blur ([1,4,6,4,1]/16,
reflect-101 borders) followed by 2x decimation (ceil-halved sizes);
upsampling U is separable bilinear resampling (half-pixel centers) back
to the exact source dimensions. Band-pass levels are L(i) = I(i) -
U(D(I(i))) and the top is the final blurred residual, so collapsing the
pyramid reconstructs the input exactly up to float rounding.

Both resamplers are materialized as sparse 1D operators (cached per
size), which makes the loss gradient an exact transpose rather than a
hand-derived border-case analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import InvalidArgumentError

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

_DOWN_CACHE: dict[int, sparse.csr_matrix] = {}
_UP_CACHE: dict[tuple[int, int], sparse.csr_matrix] = {}


def _reflect101(j: int, n: int) -> int:
    # reflect-101: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
    if n == 1:
        return 0
    period = 2 * (n - 1)
    j = abs(j) % period
    return period - j if j >= n else j


def _down_matrix(n: int) -> sparse.csr_matrix:
    """(ceil(n/2), n) blur+decimate operator."""
    mat = _DOWN_CACHE.get(n)
    if mat is not None:
        return mat
    n_out = (n + 1) // 2
    rows, cols, vals = [], [], []
    for i in range(n_out):
        for k in range(-2, 3):
            rows.append(i)
            cols.append(_reflect101(2 * i + k, n))
            vals.append(BINOMIAL5[k + 2])
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n_out, n))
    _DOWN_CACHE[n] = mat
    return mat


def _up_matrix(n_out: int, n_in: int) -> sparse.csr_matrix:
    """(n_out, n_in) bilinear resize operator with half-pixel centers."""
    key = (n_out, n_in)
    mat = _UP_CACHE.get(key)
    if mat is not None:
        return mat
    rows, cols, vals = [], [], []
    scale = n_in / n_out
    for j in range(n_out):
        src = (j + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i0 = min(i0, n_in - 1)
        frac = src - i0
        rows.append(j)
        cols.append(i0)
        vals.append(1.0 - frac)
        if frac > 0.0 and i0 + 1 < n_in:
            rows.append(j)
            cols.append(i0 + 1)
            vals.append(frac)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n_out, n_in))
    _UP_CACHE[key] = mat
    return mat


def _apply_axis(mat: sparse.csr_matrix, arr: np.ndarray, axis: int) -> np.ndarray:
    arr = np.moveaxis(arr, axis, 0)
    shp = arr.shape
    out = mat @ arr.reshape(shp[0], -1)
    return np.moveaxis(np.asarray(out).reshape((mat.shape[0],) + shp[1:]), 0, axis)


def _as_3d(img) -> tuple[np.ndarray, bool]:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[:, :, None], True
    if img.ndim == 3:
        return img, False
    raise InvalidArgumentError(f"expected an HxW or HxWxC image, got shape {img.shape}")


def downsample(img: np.ndarray) -> np.ndarray:
    """Binomial blur + 2x decimation along both image axes."""
    img, squeeze = _as_3d(img)
    h, w = img.shape[:2]
    out = _apply_axis(_down_matrix(h), img, 0)
    out = _apply_axis(_down_matrix(w), out, 1)
    return out[:, :, 0] if squeeze else out


def upsample(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize to an exact (H, W) target."""
    img, squeeze = _as_3d(img)
    h, w = img.shape[:2]
    out = _apply_axis(_up_matrix(shape[0], h), img, 0)
    out = _apply_axis(_up_matrix(shape[1], w), out, 1)
    return out[:, :, 0] if squeeze else out


def _down_adjoint(grad: np.ndarray, src_shape: tuple[int, int]) -> np.ndarray:
    out = _apply_axis(_down_matrix(src_shape[0]).T.tocsr(), grad, 0)
    return _apply_axis(_down_matrix(src_shape[1]).T.tocsr(), out, 1)


def _up_adjoint(grad: np.ndarray, src_shape: tuple[int, int]) -> np.ndarray:
    out = _apply_axis(_up_matrix(grad.shape[0], src_shape[0]).T.tocsr(), grad, 0)
    return _apply_axis(_up_matrix(grad.shape[1], src_shape[1]).T.tocsr(), out, 1)


@dataclass
class LaplacianPyramid:
    """Band-pass levels (finest first) plus the low-resolution residual."""

    levels: list[np.ndarray]
    top: np.ndarray

    @property
    def num_levels(self) -> int:
        return len(self.levels)


def laplacian_decompose(img, num_levels: int) -> LaplacianPyramid:
    """Split an image into `num_levels` band-pass levels and a residual."""
    img, squeeze = _as_3d(img)
    if num_levels < 1:
        raise InvalidArgumentError("num_levels must be >= 1")
    if min(img.shape[0], img.shape[1]) < 2**num_levels:
        raise InvalidArgumentError(
            f"image {img.shape[0]}x{img.shape[1]} too small for {num_levels} pyramid levels"
        )
    levels = []
    cur = img
    for _ in range(num_levels):
        nxt = downsample(cur)
        levels.append(cur - upsample(nxt, cur.shape[:2]))
        cur = nxt
    if squeeze:
        return LaplacianPyramid([lv[:, :, 0] for lv in levels], cur[:, :, 0])
    return LaplacianPyramid(levels, cur)


def laplacian_reconstruct(pyr: LaplacianPyramid) -> np.ndarray:
    """Fold the pyramid back into the original image."""
    cur, squeeze = _as_3d(pyr.top)
    for lv in reversed(pyr.levels):
        lv3, _ = _as_3d(lv)
        cur = lv3 + upsample(cur, lv3.shape[:2])
    return cur[:, :, 0] if squeeze else cur


def _check_pair(rendered, synthesized):
    a, _ = _as_3d(rendered)
    b, _ = _as_3d(synthesized)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _level_weights(weights, num_levels: int) -> np.ndarray:
    if weights is None:
        return np.ones(num_levels)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != num_levels:
        raise InvalidArgumentError(f"need {num_levels} level weights, got {len(w)}")
    if np.any(w < 0):
        raise InvalidArgumentError("level weights must be non-negative")
    return w


def mlcr_loss(rendered, synthesized, weights=None, num_levels: int = 3, top_weight: float = 1.0) -> float:
    """Weighted mean-L1 between the band-pass levels of two images.

    Band-pass terms alone cannot see a global color offset, so the
    residual top levels are compared too with `top_weight` (set it to 0
    for the band-pass-only form).
    """
    a, b = _check_pair(rendered, synthesized)
    w = _level_weights(weights, num_levels)
    pa = laplacian_decompose(a, num_levels)
    pb = laplacian_decompose(b, num_levels)
    loss = 0.0
    for wi, la, lb in zip(w, pa.levels, pb.levels):
        loss += wi * float(np.abs(la - lb).mean())
    loss += top_weight * float(np.abs(pa.top - pb.top).mean())
    return loss


def mlcr_loss_grad(
    rendered, synthesized, weights=None, num_levels: int = 3, top_weight: float = 1.0
):
    """MLCR value and its gradient w.r.t. the rendered image.

    The pyramid is linear in the input, so the gradient is the exact
    adjoint chain of the decomposition applied to the per-level L1
    subgradients (sign/levelsize).
    """
    a, b = _check_pair(rendered, synthesized)
    w = _level_weights(weights, num_levels)
    shapes = []
    cur = a
    intermediates = [a]
    for _ in range(num_levels):
        shapes.append(cur.shape[:2])
        cur = downsample(cur)
        intermediates.append(cur)
    pb = laplacian_decompose(b, num_levels)

    loss = 0.0
    d_levels = []
    for i in range(num_levels):
        li = intermediates[i] - upsample(intermediates[i + 1], shapes[i])
        diff = li - _as_3d(pb.levels[i])[0]
        loss += w[i] * float(np.abs(diff).mean())
        d_levels.append(w[i] * np.sign(diff) / diff.size)
    top_diff = intermediates[-1] - _as_3d(pb.top)[0]
    loss += top_weight * float(np.abs(top_diff).mean())

    d_cur = top_weight * np.sign(top_diff) / top_diff.size
    for i in reversed(range(num_levels)):
        d_cur = -_up_adjoint(d_levels[i], intermediates[i + 1].shape[:2]) + d_cur
        d_cur = _down_adjoint(d_cur, shapes[i]) + d_levels[i]
    if np.asarray(rendered).ndim == 2:
        d_cur = d_cur[:, :, 0]
    return loss, d_cur
