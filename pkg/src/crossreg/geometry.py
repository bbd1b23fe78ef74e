"""Rigid transforms, pinhole camera operations, and positional encodings.

Conventions used throughout the package:

* 3D points are float64 arrays of shape (3,) or (N, 3), in meters.
* Pixel coordinates are (u, v) with u horizontal (column direction) and
  v vertical (row direction); image arrays are indexed [v, u].
* A rigid transform maps cloud-frame points into camera-frame points,
  p_cam = R @ p + t, with the camera at the origin looking down +z.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
import numpy.typing as npt

from .errors import InvalidRotationError, NonPositiveDepthError

F64: TypeAlias = npt.NDArray[np.float64]

ROTATION_TOL = 1e-9


# --------------------------------------------------------------------------- #
#  Validation helpers
# --------------------------------------------------------------------------- #


def as_float_array(x, shape: tuple[int, ...] | None = None, name: str = "array") -> F64:
    """Coerce to a float64 ndarray, checking finiteness and (optionally) shape."""
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def as_points(x, name: str = "points") -> F64:
    """Coerce to an (N, 3) float64 array of finite 3D points."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name}: expected shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def as_vec3(x, name: str = "vector") -> F64:
    return as_float_array(x, shape=(3,), name=name)


# --------------------------------------------------------------------------- #
#  Rigid transforms
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: rotation in SO(3) plus translation.

    The rotation is validated on construction: R^T R = I and det R = +1,
    both within ROTATION_TOL.
    """

    rotation: F64
    translation: F64

    def __post_init__(self) -> None:
        rot = as_float_array(self.rotation, shape=(3, 3), name="rotation")
        tra = as_vec3(self.translation, name="translation")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise InvalidRotationError(f"R^T R deviates from identity by {err:.3e}")
        det = float(np.linalg.det(rot))
        if abs(det - 1.0) > ROTATION_TOL:
            raise InvalidRotationError(f"det(R) = {det:.12f}, expected +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> F64:
        """Apply to a single (3,) point or an (N, 3) batch."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape == (3,):
            return self.rotation @ pts + self.translation
        pts = as_points(pts)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self . other)(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def matrix(self) -> F64:
        """Homogeneous 4x4 form."""
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat


def apply_transform(transform: RigidTransform, points) -> F64:
    """Free-function alias for RigidTransform.apply."""
    return transform.apply(points)


def rotation_from_axis_angle(axis_angle) -> F64:
    """Rodrigues' formula; the vector's norm is the rotation angle in radians."""
    w = as_vec3(axis_angle, name="axis_angle")
    theta = float(np.linalg.norm(w))
    if theta < 1e-300:
        return np.eye(3)
    k = w / theta
    skew = np.array(
        [
            [0.0, -k[2], k[1]],
            [k[2], 0.0, -k[0]],
            [-k[1], k[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(theta) * skew + (1.0 - np.cos(theta)) * (skew @ skew)


# --------------------------------------------------------------------------- #
#  Pinhole camera
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with the principal point inside the image."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (self.width >= 1 and self.height >= 1):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside image")

    def matrix(self) -> F64:
        return np.array(
            [
                [self.fx, 0.0, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )


def project_point(intrinsics: CameraIntrinsics, point) -> tuple[float, float]:
    """Project a camera-frame point to (u, v); requires z > 0."""
    p = as_vec3(point, name="point")
    if p[2] <= 0.0:
        raise NonPositiveDepthError(f"cannot project point with z = {p[2]}")
    u = intrinsics.fx * p[0] / p[2] + intrinsics.cx
    v = intrinsics.fy * p[1] / p[2] + intrinsics.cy
    return float(u), float(v)


def project_points(intrinsics: CameraIntrinsics, points) -> F64:
    """Vectorized projection of (N, 3) camera-frame points; every z must be > 0."""
    pts = as_points(points)
    z = pts[:, 2]
    if np.any(z <= 0.0):
        raise NonPositiveDepthError("cannot project points with z <= 0")
    uv = np.empty((pts.shape[0], 2))
    uv[:, 0] = intrinsics.fx * pts[:, 0] / z + intrinsics.cx
    uv[:, 1] = intrinsics.fy * pts[:, 1] / z + intrinsics.cy
    return uv


def backproject_pixel(intrinsics: CameraIntrinsics, u: float, v: float, depth: float) -> F64:
    """Lift pixel (u, v) at the given depth back to a camera-frame point."""
    if depth <= 0.0:
        raise NonPositiveDepthError(f"cannot backproject depth {depth}")
    x = (u - intrinsics.cx) * depth / intrinsics.fx
    y = (v - intrinsics.cy) * depth / intrinsics.fy
    return np.array([x, y, depth])


def backproject_pixels(intrinsics: CameraIntrinsics, uv, depths) -> F64:
    """Vectorized backprojection; every depth must be > 0."""
    uv = np.asarray(uv, dtype=np.float64)
    d = np.asarray(depths, dtype=np.float64)
    if uv.ndim != 2 or uv.shape[1] != 2 or uv.shape[0] != d.shape[0]:
        raise ValueError(f"uv/depths shapes incompatible: {uv.shape} vs {d.shape}")
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        raise NonPositiveDepthError("cannot backproject depths <= 0")
    out = np.empty((uv.shape[0], 3))
    out[:, 0] = (uv[:, 0] - intrinsics.cx) * d / intrinsics.fx
    out[:, 1] = (uv[:, 1] - intrinsics.cy) * d / intrinsics.fy
    out[:, 2] = d
    return out


# --------------------------------------------------------------------------- #
#  Positional encoding
# --------------------------------------------------------------------------- #


def fourier_embed(x: float, num_frequencies: int) -> F64:
    """Embed a scalar as [x, sin(2^0 x), cos(2^0 x), ..., sin(2^(L-1) x), cos(2^(L-1) x)].

    Output length is 2 * num_frequencies + 1.
    """
    if num_frequencies < 1:
        raise ValueError(f"num_frequencies must be >= 1, got {num_frequencies}")
    xf = float(x)
    if not np.isfinite(xf):
        raise ValueError("x must be finite")
    out = np.empty(2 * num_frequencies + 1)
    out[0] = xf
    freqs = np.ldexp(1.0, np.arange(num_frequencies))
    out[1::2] = np.sin(freqs * xf)
    out[2::2] = np.cos(freqs * xf)
    return out


def fourier_embed_positions(positions, num_frequencies: int) -> F64:
    """Component-wise Fourier embedding of (N, d) positions, concatenated.

    Each of the d components expands to its own 2L+1 block, so the output
    has shape (N, d * (2 * num_frequencies + 1)).
    """
    if num_frequencies < 1:
        raise ValueError(f"num_frequencies must be >= 1, got {num_frequencies}")
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2:
        raise ValueError(f"positions must be (N, d), got {pos.shape}")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions contain non-finite values")
    n, d = pos.shape
    width = 2 * num_frequencies + 1
    freqs = np.ldexp(1.0, np.arange(num_frequencies))
    out = np.empty((n, d * width))
    for comp in range(d):
        block = out[:, comp * width : (comp + 1) * width]
        col = pos[:, comp]
        block[:, 0] = col
        arg = col[:, None] * freqs[None, :]
        block[:, 1::2] = np.sin(arg)
        block[:, 2::2] = np.cos(arg)
    return out
