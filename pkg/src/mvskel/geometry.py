"""Pinhole camera model with Brown-Conrady distortion and rigid transforms.

Conventions:
    * Extrinsics map world to camera: ``p_cam = R @ p_world + t``.
    * Rotations are axis-angle vectors; ``rotation_matrix`` is the active
      right-handed rotation, so a +90 degree turn about z maps x onto y.
    * Camera axes follow the usual image convention: x right, y down, z forward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


class PointBehindCameraError(ValueError):
    pass


def _finite_vec(values, n: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"{what}: expected {n} values, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: non-finite value")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    dist: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        dist = tuple(float(v) for v in _finite_vec(self.dist, 5, "dist"))
        object.__setattr__(self, "dist", dist)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_vector(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, *self.dist])

    @classmethod
    def from_vector(cls, v) -> "Intrinsics":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2], v[3], tuple(v[4:9]))


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Camera-from-world rigid transform."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _finite_vec(self.rotation, 3, "rotation"))
        object.__setattr__(self, "translation", _finite_vec(self.translation, 3, "translation"))

    @property
    def R(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.translation

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def from_vector(cls, v) -> "Extrinsics":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    @classmethod
    def from_matrix(cls, R, t) -> "Extrinsics":
        return cls(axis_angle_from_matrix(R), np.asarray(t, dtype=float))

    def __eq__(self, other):
        if not isinstance(other, Extrinsics):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True)
class CameraParams:
    name: str
    intrinsics: Intrinsics
    extrinsics: Extrinsics = field(default_factory=Extrinsics)

    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix mapping world points to undistorted normalized coordinates."""
        return np.hstack([self.extrinsics.R, self.extrinsics.translation[:, None]])

    def project(self, p_world) -> np.ndarray:
        return project(world_to_cam(p_world, self.extrinsics), self.intrinsics)


def rotation_matrix(axis_angle) -> np.ndarray:
    """Rodrigues' formula. The zero vector maps to the identity."""
    r = np.asarray(axis_angle, dtype=float).reshape(3)
    theta = float(np.linalg.norm(r))
    if theta < 1e-12:
        # first order expansion, exact at zero
        K = _skew(r)
        return np.eye(3) + K
    k = r / theta
    K = _skew(k)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def axis_angle_from_matrix(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def _skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def distort(p, dist) -> np.ndarray:
    """Apply Brown-Conrady distortion to normalized image points.

    ``p`` is (..., 2); ``dist`` is (k1, k2, p1, p2, k3).
    """
    p = np.asarray(p, dtype=float)
    k1, k2, p1, p2, k3 = dist
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def undistort(p, dist, iterations: int = 20) -> np.ndarray:
    """Invert ``distort`` by fixed-point iteration."""
    p = np.asarray(p, dtype=float)
    k1, k2, p1, p2, k3 = dist
    if not any(dist):
        return p.copy()
    xd, yd = p[..., 0], p[..., 1]
    x, y = xd.copy(), yd.copy()
    for _ in range(iterations):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x = (xd - dx) / radial
        y = (yd - dy) / radial
    return np.stack([x, y], axis=-1)


def project(p_cam, intr: Intrinsics) -> np.ndarray:
    """Project camera-frame points (..., 3) to pixels (..., 2).

    Raises:
        PointBehindCameraError: any point has z <= 0.
    """
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[..., 2]
    if np.any(z <= 0):
        raise PointBehindCameraError("point behind camera (z <= 0)")
    return _project_unchecked(p_cam, intr.to_vector())


def _project_unchecked(p_cam: np.ndarray, intr_vec) -> np.ndarray:
    fx, fy, cx, cy = intr_vec[:4]
    xy = p_cam[..., :2] / p_cam[..., 2:3]
    d = distort(xy, intr_vec[4:9])
    return np.stack([fx * d[..., 0] + cx, fy * d[..., 1] + cy], axis=-1)


def pixel_to_normalized(uv, intr: Intrinsics) -> np.ndarray:
    """Undistorted normalized image coordinates of pixel positions."""
    uv = np.asarray(uv, dtype=float)
    xd = np.stack([(uv[..., 0] - intr.cx) / intr.fx, (uv[..., 1] - intr.cy) / intr.fy], axis=-1)
    return undistort(xd, intr.dist)


def world_to_cam(p_world, ext: Extrinsics) -> np.ndarray:
    p = np.asarray(p_world, dtype=float)
    return p @ ext.R.T + ext.translation


def cam_to_world(p_cam, ext: Extrinsics) -> np.ndarray:
    p = np.asarray(p_cam, dtype=float)
    return (p - ext.translation) @ ext.R


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Extrinsics:
    """Extrinsics of a camera at ``position`` whose optical axis passes through ``target``."""
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with the look-at target")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.vstack([right, down, forward])
    return Extrinsics.from_matrix(R, -R @ position)


def save_calibration(cameras, path) -> None:
    out = []
    for cam in cameras:
        intr, ext = cam.intrinsics, cam.extrinsics
        out.append({
            "name": cam.name,
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "dist": list(intr.dist),
            "rvec": [float(v) for v in ext.rotation],
            "tvec": [float(v) for v in ext.translation],
        })
    with open(path, "w") as fh:
        json.dump({"cameras": out}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_calibration(path) -> list[CameraParams]:
    with open(path) as fh:
        data = json.load(fh)
    cams = []
    for c in data["cameras"]:
        intr = Intrinsics(c["fx"], c["fy"], c["cx"], c["cy"], tuple(c.get("dist", [0.0] * 5)))
        ext = Extrinsics(c.get("rvec", [0.0] * 3), c.get("tvec", [0.0] * 3))
        cams.append(CameraParams(c["name"], intr, ext))
    return cams
