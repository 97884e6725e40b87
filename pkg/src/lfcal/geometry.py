"""Camera model primitives: intrinsics, Brown distortion, rigid poses, Rodrigues.

Conventions
-----------
* A pose maps points *into* a camera frame: ``X_cam = R @ X + t``.
* Distortion acts on normalized coordinates after the perspective divide and
  before the intrinsic matrix.
* World units are millimetres, image units are pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, NumericalError, ValidationError

ORTHO_TOL = 1e-9
UNDISTORT_MAX_ITER = 50
UNDISTORT_TOL = 1e-12

# Below this angle the Rodrigues coefficients are evaluated by Taylor series.
_SERIES_ANGLE = 0.1


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Intrinsics:
    """Upper-triangular pinhole intrinsics (pixels)."""

    alpha: float
    beta: float
    gamma: float = 0.0
    u0: float = 0.0
    v0: float = 0.0

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"non-finite intrinsics: {vals}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValidationError(f"focal lengths must be positive, got alpha={self.alpha}, beta={self.beta}")

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.alpha, self.gamma, self.u0],
            [0.0, self.beta, self.v0],
            [0.0, 0.0, 1.0],
        ])

    def inverse_matrix(self) -> np.ndarray:
        a, b, g, u0, v0 = self.as_array()
        return np.array([
            [1.0 / a, -g / (a * b), (g * v0 - b * u0) / (a * b)],
            [0.0, 1.0 / b, -v0 / b],
            [0.0, 0.0, 1.0],
        ])

    @classmethod
    def from_matrix(cls, K) -> "Intrinsics":
        K = np.asarray(K, dtype=float)
        if K.shape != (3, 3):
            raise ValidationError(f"intrinsic matrix must be 3x3, got {K.shape}")
        if K[2, 2] == 0:
            raise ValidationError("intrinsic matrix has K[2,2] == 0")
        K = K / K[2, 2]
        if abs(K[1, 0]) > 1e-12 * abs(K[1, 1]) or abs(K[2, 0]) > 1e-12 or abs(K[2, 1]) > 1e-12:
            raise ValidationError("intrinsic matrix is not upper triangular")
        return cls(K[0, 0], K[1, 1], K[0, 1], K[0, 2], K[1, 2])

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.u0, self.v0], dtype=float)

    @classmethod
    def from_array(cls, values) -> "Intrinsics":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class Distortion:
    """Two radial (k1, k2) and two tangential (p1, p2) coefficients."""

    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2], dtype=float)

    @classmethod
    def from_array(cls, values) -> "Distortion":
        return cls(*(float(v) for v in values))

    def is_zero(self) -> bool:
        return not np.any(self.as_array())


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation mapping ``X -> R @ X + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        check_rotation(R)
        if not np.all(np.isfinite(t)):
            raise ValidationError(f"non-finite translation {t}")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, r, t) -> "RigidTransform":
        return cls(axis_angle_to_matrix(r), t)

    @property
    def axis_angle(self) -> np.ndarray:
        return matrix_to_axis_angle(self.rotation)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def allclose(self, other: "RigidTransform", atol=1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def __repr__(self):
        r = np.array2string(self.axis_angle, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"RigidTransform(axis_angle={r}, translation={t})"


def check_rotation(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValidationError(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise ValidationError("rotation matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValidationError("rotation matrix has det != +1")


def nearest_rotation(M) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# Rodrigues
# ---------------------------------------------------------------------------


def skew(v) -> np.ndarray:
    """Cross-product matrix; broadcasts over leading axes."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _rodrigues_coeffs(theta):
    """a = sin θ/θ, b = (1-cos θ)/θ², c = a'/θ, d = b'/θ, stable near zero."""
    theta = np.asarray(theta, dtype=float)
    small = theta < _SERIES_ANGLE
    t = np.where(small, _SERIES_ANGLE, theta)
    s, half = np.sin(t), np.sin(t / 2)
    one_minus_cos = 2 * half * half
    a = s / t
    b = one_minus_cos / t**2
    c = (t * np.cos(t) - s) / t**3
    d = (t * s - 2 * one_minus_cos) / t**4

    x = theta * theta
    a_s = 1 - x / 6 * (1 - x / 20 * (1 - x / 42 * (1 - x / 72)))
    b_s = 0.5 - x / 24 * (1 - x / 30 * (1 - x / 56 * (1 - x / 90)))
    c_s = -1 / 3 + x / 30 - x**2 / 840 + x**3 / 45360 - x**4 / 3991680
    d_s = -1 / 12 + x / 180 - x**2 / 6720 + x**3 / 453600 - x**4 / 47900160
    return (np.where(small, a_s, a), np.where(small, b_s, b),
            np.where(small, c_s, c), np.where(small, d_s, d))


def rotations_from_axis_angle(r) -> np.ndarray:
    """Batch Rodrigues map, ``(..., 3) -> (..., 3, 3)``."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=-1)
    a, b, _, _ = _rodrigues_coeffs(theta)
    K = skew(r)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def rotation_derivatives(r) -> np.ndarray:
    """Partial derivatives dR/dr_k for a batch of axis-angle vectors.

    Returns an array of shape ``(..., 3, 3, 3)`` whose ``[..., k, :, :]`` slice
    is dR/dr_k.
    """
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=-1)
    a, b, c, d = _rodrigues_coeffs(theta)
    K = skew(r)
    K2 = K @ K
    E = skew(np.eye(3))  # generators [e_k]_x, shape (3, 3, 3)
    a, b, c, d = (v[..., None, None, None] for v in (a, b, c, d))
    rk = r[..., :, None, None]
    Kb = K[..., None, :, :]
    return (c * rk * Kb + a * E + d * rk * K2[..., None, :, :]
            + b * (E @ Kb + Kb @ E))


def axis_angle_to_matrix(r) -> np.ndarray:
    r = np.asarray(r, dtype=float).reshape(3)
    return rotations_from_axis_angle(r)


def matrix_to_axis_angle(R) -> np.ndarray:
    """Inverse Rodrigues map via a unit quaternion; angle returned in [0, π]."""
    R = np.asarray(R, dtype=float)
    check_rotation(R, tol=1e-6)
    tr = np.trace(R)
    diag = np.diag(R)
    i = int(np.argmax(diag))
    if tr >= diag[i]:
        w = 0.5 * np.sqrt(1.0 + tr)
        q = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / (4 * w)
    else:
        j, k = (i + 1) % 3, (i + 2) % 3
        q = np.empty(3)
        q[i] = 0.5 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q[j] = (R[j, i] + R[i, j]) / (4 * q[i])
        q[k] = (R[k, i] + R[i, k]) / (4 * q[i])
        w = (R[k, j] - R[j, k]) / (4 * q[i])
    if w < 0:
        w, q = -w, -q
    n = np.linalg.norm(q)
    if n < 1e-8:
        # 2*atan2(n, w)/n -> 2/w - (2/3) n^2/w^3 + ...
        scale = 2.0 / w - 2.0 * n * n / (3.0 * w**3)
    else:
        scale = 2.0 * np.arctan2(n, w) / n
    return q * scale


# ---------------------------------------------------------------------------
# Pose composition
# ---------------------------------------------------------------------------


def compose_world_pose(rel: RigidTransform, world0: RigidTransform) -> RigidTransform:
    """Board pose in viewpoint i from its relative pose and viewpoint 0's board pose."""
    return rel.compose(world0)


def relative_from_world(world_i: RigidTransform, world_0: RigidTransform) -> RigidTransform:
    """Relative pose of viewpoint i given the same board seen from i and from 0."""
    R = world_i.rotation @ world_0.rotation.T
    return RigidTransform(R, world_i.translation - R @ world_0.translation)


# ---------------------------------------------------------------------------
# Distortion and projection
# ---------------------------------------------------------------------------


def distort(dist: Distortion, xy) -> np.ndarray:
    """Apply Brown radial-tangential distortion to normalized coordinates ``(..., 2)``."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    k1, k2, p1, p2 = dist.as_array()
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def undistort(dist: Distortion, xy_distorted, max_iter=UNDISTORT_MAX_ITER, tol=UNDISTORT_TOL) -> np.ndarray:
    """Invert :func:`distort` by fixed-point iteration seeded at the distorted point."""
    xd = np.asarray(xy_distorted, dtype=float)
    if dist.is_zero():
        return xd.copy()
    k1, k2, p1, p2 = dist.as_array()
    xy = xd.copy()
    for _ in range(max_iter):
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1 + k1 * r2 + k2 * r2 * r2
        dx = 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
        dy = p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
        xy = np.stack([(xd[..., 0] - dx) / radial, (xd[..., 1] - dy) / radial], axis=-1)
        resid = np.max(np.abs(distort(dist, xy) - xd), initial=0.0)
        if resid <= tol:
            return xy
    if not np.isfinite(resid) or resid > tol:
        raise NumericalError(f"undistortion did not converge after {max_iter} iterations (residual {resid:.3e})")
    return xy


def project_points(intr: Intrinsics, dist: Distortion, pose: RigidTransform, points,
                   viewpoint=None, frame=None) -> np.ndarray:
    """Project ``(n, 3)`` points through pose, distortion and intrinsics to pixels."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cam = pose.apply(pts)
    bad = np.flatnonzero(~(cam[:, 2] > 0))
    if bad.size:
        raise BehindCameraError(viewpoint=viewpoint, frame=frame, point=int(bad[0]))
    xy = cam[:, :2] / cam[:, 2:3]
    return normalized_to_pixels(intr, distort(dist, xy))


def project(intr: Intrinsics, dist: Distortion, pose: RigidTransform, M,
            viewpoint=None, frame=None, point=None) -> np.ndarray:
    """Project a single 3D point; returns ``(2,)`` pixel coordinates."""
    try:
        return project_points(intr, dist, pose, np.reshape(M, (1, 3)), viewpoint, frame)[0]
    except BehindCameraError:
        raise BehindCameraError(viewpoint=viewpoint, frame=frame, point=point) from None


def normalized_to_pixels(intr: Intrinsics, xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    u = intr.alpha * xy[..., 0] + intr.gamma * xy[..., 1] + intr.u0
    v = intr.beta * xy[..., 1] + intr.v0
    return np.stack([u, v], axis=-1)


def pixels_to_normalized(intr: Intrinsics, uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    y = (uv[..., 1] - intr.v0) / intr.beta
    x = (uv[..., 0] - intr.u0 - intr.gamma * y) / intr.alpha
    return np.stack([x, y], axis=-1)
