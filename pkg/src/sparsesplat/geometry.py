"""Camera models, rigid poses and smooth trajectory interpolation.

Conventions used throughout the package:

* Poses are **world-to-camera**: ``x_cam = R @ x_world + t``.
* Quaternions are stored ``(w, x, y, z)`` and kept unit-norm; every
  constructor re-normalizes.
* The camera looks down +z (OpenCV axes: x right, y down, z forward).
* Pixel centers sit at integer coordinates, so a point on the principal
  axis projects to ``(cx, cy)``.

All types are immutable value objects; the functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

QUAT_TOL = 1e-9


def _as_readonly(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.flags.writeable = False
    return arr


def quat_normalize(q) -> np.ndarray:
    """Return q / |q| as a float64 array, raising on a zero quaternion."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise InvalidArgumentError("quaternion has zero or non-finite norm")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b for (w,x,y,z) quaternions, re-normalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    out = np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )
    return quat_normalize(out)


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w,x,y,z)."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_to_matrix_batch(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for an (N,4) array of quaternions (normalized first)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R) -> np.ndarray:
    """Unit quaternion (w,x,y,z) of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise InvalidArgumentError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform: rotation quaternion + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_readonly(quat_normalize(self.rotation), (4,)))
        object.__setattr__(self, "translation", _as_readonly(self.translation, (3,)))
        if not np.all(np.isfinite(self.translation)):
            raise InvalidArgumentError("translation must be finite")

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous world-to-camera matrix."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, x) -> np.ndarray:
        """Map world point(s) into the camera frame."""
        x = np.asarray(x, dtype=np.float64)
        return x @ self.rotation_matrix().T + self.translation


@dataclass(frozen=True)
class CameraView:
    """Intrinsics + pose + a label used by serialization and logs."""

    intrinsics: Intrinsics
    pose: Pose
    id: str = "view"


def identity_pose() -> Pose:
    return Pose()


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Compose transforms: (a o b)(x) = a(b(x))."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.rotation_matrix() @ b.translation + a.translation
    return Pose(q, t)


def pose_inverse(p: Pose) -> Pose:
    """Inverse transform; pose_compose(p, pose_inverse(p)) is identity."""
    q_inv = quat_normalize(quat_conjugate(p.rotation))
    R_inv = quat_to_matrix(q_inv)
    return Pose(q_inv, -(R_inv @ p.translation))


def project_point(view: CameraView, x) -> tuple[float, float, float]:
    """Pinhole projection of a world point.

    Returns (u, v, z) where z is camera-frame depth; z <= 0 means the
    point is behind the camera and (u, v) are not meaningful (callers
    filter against the near plane).
    """
    k = view.intrinsics
    xc = view.pose.apply(np.asarray(x, dtype=np.float64).reshape(3))
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * xc[0] / xc[2] + k.cx
        v = k.fy * xc[1] / xc[2] + k.cy
    return float(u), float(v), float(xc[2])


def slerp(qa, qb, t: float) -> np.ndarray:
    """Constant-speed geodesic between two unit quaternions.

    qb is flipped onto qa's hemisphere first, so antipodal inputs
    (the same rotation) interpolate identically to equal inputs.
    """
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        # Nearly parallel: nlerp is exact to first order and avoids 0/0.
        return quat_normalize((1.0 - t) * qa + t * qb)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return quat_normalize((np.sin((1.0 - t) * theta) / s) * qa + (np.sin(t * theta) / s) * qb)


def interpolate_trajectory(a: Pose, b: Pose, count: int) -> list[Pose]:
    """Smooth pose trajectory from a to b with `count` samples.

    Rotations follow the SLERP geodesic; translations follow a clamped
    uniform cubic B-spline, which with only two control poses degenerates
    to linear interpolation. Endpoints are the inputs, exact field-wise.
    """
    if count < 2:
        raise InvalidArgumentError(f"trajectory needs count >= 2, got {count}")
    out = [a]
    for i in range(1, count - 1):
        t = i / (count - 1)
        q = slerp(a.rotation, b.rotation, t)
        tr = (1.0 - t) * a.translation + t * b.translation
        out.append(Pose(q, tr))
    out.append(b)
    return out


def look_at_pose(position, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """World-to-camera pose for a camera at `position` looking at `target`."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise InvalidArgumentError("camera position coincides with target")
    z = fwd / n
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise InvalidArgumentError("up vector is parallel to the view direction")
    x = x / nx
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    return Pose(matrix_to_quat(R), -(R @ position))
