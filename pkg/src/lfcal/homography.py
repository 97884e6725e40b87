"""Planar homography estimation by normalized DLT."""

from __future__ import annotations

import numpy as np

from .errors import EstimationError, NumericalError, ValidationError


def normalization_transform(points) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    pts = np.asarray(points, dtype=float)
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if not mean_dist > 0:
        raise EstimationError("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([
        [s, 0.0, -s * centroid[0]],
        [0.0, s, -s * centroid[1]],
        [0.0, 0.0, 1.0],
    ])


def dlt_design_matrix(src, dst) -> np.ndarray:
    """The 2n x 9 matrix whose null vector is vec(H) for ``dst ~ H src``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    X, Y = src[:, 0], src[:, 1]
    x, y = dst[:, 0], dst[:, 1]
    zeros, ones = np.zeros(n), np.ones(n)
    A = np.empty((2 * n, 9))
    A[0::2] = np.stack([X, Y, ones, zeros, zeros, zeros, -x * X, -x * Y, -x], axis=1)
    A[1::2] = np.stack([zeros, zeros, zeros, X, Y, ones, -y * X, -y * Y, -y], axis=1)
    return A


def _is_collinear(pts, rel_tol=1e-9) -> bool:
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[0] == 0 or sv[1] <= rel_tol * sv[0]


def estimate_homography(model_pts, image_pts, frame=None) -> np.ndarray:
    """Estimate H with ``image ~ H @ [X, Y, 1]`` from >= 4 correspondences.

    Both point sets are isotropically normalized before the SVD solve. The
    result is scaled so that ``H[2, 2] == 1`` whenever that entry is nonzero.
    """
    src = np.asarray(model_pts, dtype=float).reshape(-1, 2)
    dst = np.asarray(image_pts, dtype=float).reshape(-1, 2)
    where = f" (frame {frame})" if frame is not None else ""
    if len(src) != len(dst):
        raise ValidationError(f"point lists differ in length: {len(src)} vs {len(dst)}{where}")
    if len(src) < 4:
        raise EstimationError(f"need at least 4 point pairs, got {len(src)}{where}")
    if _is_collinear(src) or _is_collinear(dst):
        raise EstimationError(f"degenerate (collinear) point configuration{where}")

    Ts = normalization_transform(src)
    Td = normalization_transform(dst)
    src_n = src @ Ts[:2, :2].T + Ts[:2, 2]
    dst_n = dst @ Td[:2, :2].T + Td[:2, 2]
    _, sv, Vt = np.linalg.svd(dlt_design_matrix(src_n, dst_n))
    if len(sv) >= 8 and sv[7] <= 1e-12 * sv[0]:
        raise EstimationError(f"homography is not uniquely determined{where}")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.solve(Td, Hn @ Ts)
    return normalize_homography(H)


def normalize_homography(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if abs(H[2, 2]) > 1e-15 * np.max(np.abs(H)):
        return H / H[2, 2]
    return H / np.linalg.norm(H)


def apply_homography(H, points) -> np.ndarray:
    """Projective transfer of ``(..., 2)`` points."""
    pts = np.asarray(points, dtype=float)
    H = np.asarray(H, dtype=float)
    w = H[2, 0] * pts[..., 0] + H[2, 1] * pts[..., 1] + H[2, 2]
    if np.any(np.abs(w) < 1e-12):
        raise NumericalError("point maps to infinity under homography")
    x = (H[0, 0] * pts[..., 0] + H[0, 1] * pts[..., 1] + H[0, 2]) / w
    y = (H[1, 0] * pts[..., 0] + H[1, 1] * pts[..., 1] + H[1, 2]) / w
    return np.stack([x, y], axis=-1)


def transfer_error(H, model_pts, image_pts) -> np.ndarray:
    """Per-point Euclidean distance between ``H(model)`` and ``image``."""
    return np.linalg.norm(apply_homography(H, model_pts) - np.asarray(image_pts, dtype=float), axis=-1)
