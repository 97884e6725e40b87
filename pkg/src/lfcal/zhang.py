"""Closed-form initialization: per-viewpoint planar calibration and relative poses.

Each viewpoint is calibrated on its own from board homographies. Relative
poses against viewpoint 0 are then computed frame by frame and reduced with a
component-wise median, since with noisy data they disagree across frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, NumericalError, RankDeficiencyError, ValidationError
from .geometry import (
    Distortion,
    Intrinsics,
    RigidTransform,
    axis_angle_to_matrix,
    matrix_to_axis_angle,
    nearest_rotation,
    relative_from_world,
)
from .homography import estimate_homography
from .model import CalibrationResult, ObservationSet

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass
class ViewpointInit:
    """Closed-form result for one viewpoint: intrinsics and board pose per frame."""

    intrinsics: Intrinsics
    world_poses: dict  # frame index -> RigidTransform


def _v(H, a, b):
    h = H.T  # rows are columns of H
    return np.array([
        h[a, 0] * h[b, 0],
        h[a, 0] * h[b, 1] + h[a, 1] * h[b, 0],
        h[a, 1] * h[b, 1],
        h[a, 2] * h[b, 0] + h[a, 0] * h[b, 2],
        h[a, 2] * h[b, 1] + h[a, 1] * h[b, 2],
        h[a, 2] * h[b, 2],
    ])


def intrinsics_from_homographies(Hs, fix_skew=False) -> Intrinsics:
    """Zhang's linear solution for the intrinsic matrix from >= 3 board homographies.

    Each homography contributes two linear constraints on the symmetric
    matrix B = A^-T A^-1. With ``fix_skew`` an extra row forces B12 = 0 and
    two homographies suffice.
    """
    Hs = [np.asarray(H, dtype=float) / np.linalg.norm(H) for H in Hs]
    need = 2 if fix_skew else 3
    if len(Hs) < need:
        raise RankDeficiencyError(f"need at least {need} homographies, got {len(Hs)}")
    rows = []
    for H in Hs:
        rows.append(_v(H, 0, 1))
        rows.append(_v(H, 0, 0) - _v(H, 1, 1))
    if fix_skew:
        rows.append(np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]))
    V = np.array(rows)
    _, sv, Vt = np.linalg.svd(V)
    if len(sv) < 5 or sv[4] <= RANK_TOL * sv[0]:
        raise RankDeficiencyError("board orientations are degenerate; use more distinct orientations")
    B11, B12, B22, B13, B23, B33 = Vt[-1]

    den = B11 * B22 - B12 * B12
    if den == 0 or B11 == 0:
        raise NumericalError("degenerate B matrix; add more frames with varied orientation")
    v0 = (B12 * B13 - B11 * B23) / den
    lam = B33 - (B13 * B13 + v0 * (B12 * B13 - B11 * B23)) / B11
    alpha2 = lam / B11
    beta2 = lam * B11 / den
    if not (alpha2 > 0 and beta2 > 0):
        raise NumericalError("closed form produced non-positive squared focal length; add more/better frames")
    alpha, beta = np.sqrt(alpha2), np.sqrt(beta2)
    gamma = 0.0 if fix_skew else -B12 * alpha2 * beta / lam
    u0 = gamma * v0 / beta - B13 * alpha2 / lam
    return Intrinsics(float(alpha), float(beta), float(gamma), float(u0), float(v0))


def extrinsics_from_homography(intr: Intrinsics, H) -> RigidTransform:
    """Board pose from a homography and known intrinsics (board in front of camera)."""
    H = np.asarray(H, dtype=float)
    M = intr.inverse_matrix() @ H
    n1 = np.linalg.norm(M[:, 0])
    if n1 < 1e-15 * max(np.linalg.norm(M), 1e-300):
        raise EstimationError("degenerate homography: first column vanishes")
    lam = 1.0 / n1
    if M[2, 2] * lam < 0:
        lam = -lam
    r1, r2, t = lam * M[:, 0], lam * M[:, 1], lam * M[:, 2]
    R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return RigidTransform(R, t)


def aggregate_relative_poses(per_frame_rel) -> RigidTransform:
    """Component-wise median of translations and of axis-angle rotation vectors."""
    poses = list(per_frame_rel)
    if not poses:
        raise ValueError("cannot aggregate an empty list of poses")
    if len(poses) == 1:
        return poses[0]
    r = np.median([p.axis_angle for p in poses], axis=0)
    t = np.median([p.translation for p in poses], axis=0)
    return RigidTransform(nearest_rotation(axis_angle_to_matrix(r)), t)


def calibrate_viewpoint(obs: ObservationSet, viewpoint: int, fix_skew=False) -> ViewpointInit:
    """Homographies, intrinsics and per-frame board poses for a single viewpoint.

    Frames whose homography cannot be estimated are skipped for this viewpoint.
    """
    Hs, frames = [], []
    for j in obs.frames_of(viewpoint):
        k, px = obs.points(viewpoint, j)
        try:
            Hs.append(estimate_homography(obs.board[k], px, frame=int(j)))
        except EstimationError as exc:
            log.warning("viewpoint %d: skipping frame %d (%s)", viewpoint, j, exc)
            continue
        frames.append(int(j))
    try:
        intr = intrinsics_from_homographies(Hs, fix_skew=fix_skew)
    except (RankDeficiencyError, NumericalError) as exc:
        raise type(exc)(f"viewpoint {viewpoint}: {exc}") from exc
    poses = {}
    for j, H in zip(frames, Hs):
        try:
            poses[j] = extrinsics_from_homography(intr, H)
        except EstimationError as exc:
            log.warning("viewpoint %d: skipping frame %d (%s)", viewpoint, j, exc)
    return ViewpointInit(intr, poses)


def closed_form_viewpoints(obs: ObservationSet, fix_skew=False) -> list:
    obs.check_calibratable(min_frames=2 if fix_skew else 3)
    return [calibrate_viewpoint(obs, i, fix_skew) for i in range(obs.n_viewpoints)]


def assemble_initial(obs: ObservationSet, inits) -> CalibrationResult:
    """Relative poses against viewpoint 0 (median over shared frames), zero distortion."""
    ref = inits[0].world_poses
    missing = [j for j in range(obs.n_frames) if j not in ref]
    if missing:
        raise EstimationError(f"viewpoint 0 has no usable pose for frame(s) {missing}")
    rel = [RigidTransform.identity()]
    for i, init in enumerate(inits[1:], start=1):
        per_frame = [relative_from_world(init.world_poses[j], ref[j])
                     for j in sorted(init.world_poses) if j in ref]
        if not per_frame:
            raise EstimationError(f"viewpoint {i} shares no usable frame with viewpoint 0")
        rel.append(aggregate_relative_poses(per_frame))
    return CalibrationResult(
        intrinsics=[init.intrinsics for init in inits],
        distortions=[Distortion() for _ in inits],
        relative_poses=rel,
        world_poses=[ref[j] for j in range(obs.n_frames)],
    )


def run_closed_form(obs: ObservationSet, fix_skew=False) -> CalibrationResult:
    """Full closed-form initialization of a camera array."""
    if obs.n_viewpoints < 1:
        raise ValidationError("no viewpoints")
    return assemble_initial(obs, closed_form_viewpoints(obs, fix_skew))
