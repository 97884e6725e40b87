"""Two-plane light field built from a calibrated camera array.

Each viewpoint's pixels are mapped to ray slopes ``(u, v)`` expressed in
viewpoint 0's orientation (the rotation-only homography ``R_i^-1``), and to
camera-plane positions ``(s, t) = t3 * (u, v) + (t1, t2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .geometry import (
    Distortion,
    Intrinsics,
    RigidTransform,
    distort,
    normalized_to_pixels,
    pixels_to_normalized,
    undistort,
)
from .imaging import Image, bilinear_sample
from .model import CalibrationResult


@dataclass(eq=False)
class LightField:
    images: list
    intrinsics: list
    distortions: list
    poses: list  # relative poses; poses[0] is the identity

    def __post_init__(self):
        n = len(self.images)
        if n == 0:
            raise ValidationError("light field has no viewpoints")
        if not (len(self.intrinsics) == len(self.distortions) == len(self.poses) == n):
            raise ValidationError(
                f"{n} images but {len(self.intrinsics)} calibrated viewpoints")
        shape = self.images[0].shape
        for i, img in enumerate(self.images):
            if img.shape != shape:
                raise ValidationError(f"viewpoint {i} image shape {img.shape} differs from {shape}")

    @classmethod
    def from_calibration(cls, images, calib: CalibrationResult) -> "LightField":
        return cls(list(images), list(calib.intrinsics), list(calib.distortions), list(calib.relative_poses))

    @property
    def n_viewpoints(self) -> int:
        return len(self.images)

    @property
    def st_coords(self) -> np.ndarray:
        """Camera-plane position of each viewpoint's central ray, ``(N, 2)`` mm."""
        return np.array([p.translation[:2] for p in self.poses])


def pixel_to_slant(intr: Intrinsics, dist: Distortion, rel_rot, p) -> np.ndarray:
    """Map pixel(s) ``(..., 2)`` to slant coordinates ``(u, v)`` in the reference orientation."""
    R = np.asarray(rel_rot, dtype=float)
    xy = undistort(dist, pixels_to_normalized(intr, p))
    ray = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1) @ R  # R^T @ ray
    if np.any(np.abs(ray[..., 2]) < 1e-12):
        raise NumericalError("ray is parallel to the reference plane")
    return ray[..., :2] / ray[..., 2:3]


def slant_to_st(rel: RigidTransform, uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    t1, t2, t3 = rel.translation
    return t3 * uv + np.array([t1, t2])


def _pixel_grid(width, height):
    return np.stack(np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float)), axis=-1)


def _project_into(intr, dist, P):
    """Project camera-frame points ``(..., 3)``; returns pixels and a front-of-camera mask."""
    z = P[..., 2]
    front = z > 1e-12
    zs = np.where(front, z, 1.0)
    xy = np.stack([P[..., 0] / zs, P[..., 1] / zs], axis=-1)
    return normalized_to_pixels(intr, distort(dist, xy)), front


def rectify(lf: LightField, target_intr: Intrinsics) -> LightField:
    """Resample every view to a common ideal camera with the reference orientation.

    Output views have ``target_intr``, zero distortion and identity rotation;
    camera centres are unchanged. Pixels with no source are zero.
    """
    h, w = lf.images[0].shape[:2]
    d = pixels_to_normalized(target_intr, _pixel_grid(w, h))
    d = np.concatenate([d, np.ones((h, w, 1))], axis=-1)
    images, poses = [], []
    for img, intr, dist, pose in zip(lf.images, lf.intrinsics, lf.distortions, lf.poses):
        src, front = _project_into(intr, dist, d @ pose.rotation.T)
        samples, valid = bilinear_sample(img.data, src[..., 0], src[..., 1])
        keep = front & valid
        images.append(Image(np.where(keep[..., None] if samples.ndim == 3 else keep, samples, 0.0)))
        poses.append(RigidTransform(np.eye(3), pose.rotation.T @ pose.translation))
    poses[0] = RigidTransform.identity()
    return LightField(images, [target_intr] * lf.n_viewpoints, [Distortion()] * lf.n_viewpoints, poses)


def refocus(lf: LightField, depth: float) -> Image:
    """Synthetic-aperture image focused on the plane ``Z = depth`` of viewpoint 0.

    Every view is warped onto viewpoint 0's pixel grid through the
    plane-induced mapping and averaged over the views covering each pixel.
    """
    if not depth > 0:
        raise ValueError(f"refocus depth must be positive, got {depth}")
    h, w = lf.images[0].shape[:2]
    xy0 = undistort(lf.distortions[0], pixels_to_normalized(lf.intrinsics[0], _pixel_grid(w, h)))
    P0 = depth * np.concatenate([xy0, np.ones((h, w, 1))], axis=-1)
    total = np.zeros(lf.images[0].shape)
    count = np.zeros((h, w))
    for img, intr, dist, pose in zip(lf.images, lf.intrinsics, lf.distortions, lf.poses):
        src, front = _project_into(intr, dist, P0 @ pose.rotation.T + pose.translation)
        samples, valid = bilinear_sample(img.data, src[..., 0], src[..., 1])
        keep = front & valid
        total += np.where(keep[..., None] if samples.ndim == 3 else keep, samples, 0.0)
        count += keep
    denom = np.maximum(count, 1)
    return Image(total / (denom[..., None] if total.ndim == 3 else denom))


def sharpness(img: Image) -> float:
    """Mean squared central-difference gradient magnitude over interior pixels."""
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=float)
    if data.shape[0] < 3 or data.shape[1] < 3:
        raise ValueError(f"image too small for sharpness: {data.shape[:2]}")
    gx = (data[1:-1, 2:] - data[1:-1, :-2]) / 2
    gy = (data[2:, 1:-1] - data[:-2, 1:-1]) / 2
    return float(np.mean(gx * gx + gy * gy))
