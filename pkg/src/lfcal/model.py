"""Observation sets and calibration results exchanged between pipeline stages."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .geometry import Distortion, Intrinsics, RigidTransform, compose_world_pose, rotations_from_axis_angle


@dataclass(frozen=True)
class BoardSpec:
    """Checkerboard corner grid; point index k = row * cols + col."""

    rows: int
    cols: int
    spacing: float

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValidationError(f"board must be at least 2x2, got {self.rows}x{self.cols}")
        if not self.spacing > 0:
            raise ValidationError(f"board spacing must be positive, got {self.spacing}")

    @property
    def n_points(self) -> int:
        return self.rows * self.cols

    def points(self) -> np.ndarray:
        r, c = np.divmod(np.arange(self.n_points), self.cols)
        return np.stack([c * self.spacing, r * self.spacing], axis=1).astype(float)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Detected board corners indexed by (viewpoint, frame, point).

    Records are stored as parallel arrays sorted viewpoint-major, then frame,
    then point. Unobserved corners are simply absent.
    """

    n_viewpoints: int
    n_frames: int
    board: np.ndarray
    viewpoint: np.ndarray
    frame: np.ndarray
    point: np.ndarray
    pixels: np.ndarray
    board_spec: BoardSpec | None = None

    def __post_init__(self):
        board = np.array(self.board, dtype=float).reshape(-1, 2)
        vi = np.array(self.viewpoint, dtype=np.int64).reshape(-1)
        fj = np.array(self.frame, dtype=np.int64).reshape(-1)
        pk = np.array(self.point, dtype=np.int64).reshape(-1)
        px = np.array(self.pixels, dtype=float).reshape(-1, 2)
        if self.n_viewpoints < 1 or self.n_frames < 1:
            raise ValidationError("need at least one viewpoint and one frame")
        if not (len(vi) == len(fj) == len(pk) == len(px)):
            raise ValidationError("observation arrays differ in length")
        for name, idx, bound in (("viewpoint", vi, self.n_viewpoints),
                                 ("frame", fj, self.n_frames),
                                 ("point", pk, len(board))):
            bad = np.flatnonzero((idx < 0) | (idx >= bound))
            if bad.size:
                raise ValidationError(f"record {bad[0]}: {name} index {idx[bad[0]]} out of range [0, {bound})")
        if not np.all(np.isfinite(px)) or not np.all(np.isfinite(board)):
            raise ValidationError("non-finite coordinates in observations")
        order = np.lexsort((pk, fj, vi))
        vi, fj, pk, px = vi[order], fj[order], pk[order], px[order]
        if len(vi) > 1:
            same = (np.diff(vi) == 0) & (np.diff(fj) == 0) & (np.diff(pk) == 0)
            if np.any(same):
                d = np.flatnonzero(same)[0]
                raise ValidationError(
                    f"duplicate observation (viewpoint={vi[d]}, frame={fj[d]}, point={pk[d]})")
        for name, arr in (("board", board), ("viewpoint", vi), ("frame", fj), ("point", pk), ("pixels", px)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_records(cls, n_viewpoints, n_frames, board, records, board_spec=None) -> "ObservationSet":
        """Build from an iterable of ``(viewpoint, frame, point, x, y)`` tuples."""
        recs = np.asarray(list(records), dtype=float).reshape(-1, 5)
        return cls(n_viewpoints, n_frames, board, recs[:, 0].astype(np.int64), recs[:, 1].astype(np.int64),
                   recs[:, 2].astype(np.int64), recs[:, 3:5], board_spec)

    def __len__(self):
        return len(self.viewpoint)

    def board_points_3d(self) -> np.ndarray:
        return np.column_stack([self.board, np.zeros(len(self.board))])

    def mask(self, viewpoint=None, frame=None) -> np.ndarray:
        m = np.ones(len(self), dtype=bool)
        if viewpoint is not None:
            m &= self.viewpoint == viewpoint
        if frame is not None:
            m &= self.frame == frame
        return m

    def points(self, viewpoint, frame):
        """Board indices and pixel coordinates seen by one viewpoint in one frame."""
        m = self.mask(viewpoint, frame)
        return self.point[m], self.pixels[m]

    def frames_of(self, viewpoint) -> np.ndarray:
        return np.unique(self.frame[self.viewpoint == viewpoint])

    def with_pixels(self, pixels) -> "ObservationSet":
        return replace(self, pixels=np.asarray(pixels, dtype=float))

    def select_viewpoint(self, viewpoint):
        """Single-viewpoint observation set with frames renumbered compactly.

        Returns the subset and the original frame index of each new frame.
        """
        m = self.viewpoint == viewpoint
        frames = np.unique(self.frame[m])
        remap = np.full(self.n_frames, -1)
        remap[frames] = np.arange(len(frames))
        sub = ObservationSet(1, max(len(frames), 1), self.board, np.zeros(m.sum(), dtype=np.int64),
                             remap[self.frame[m]], self.point[m], self.pixels[m], self.board_spec)
        return sub, frames

    def check_calibratable(self, min_frames=3, min_points=4):
        """Raise unless every viewpoint sees enough frames and viewpoint 0 sees them all."""
        for i in range(self.n_viewpoints):
            good = []
            for j in self.frames_of(i):
                if np.count_nonzero(self.mask(i, j)) >= min_points:
                    good.append(j)
            if len(good) < min_frames:
                raise ValidationError(
                    f"viewpoint {i} observes {len(good)} usable frame(s); at least {min_frames} required")
            if i == 0:
                missing = sorted(set(range(self.n_frames)) - set(good))
                if missing:
                    raise ValidationError(f"viewpoint 0 does not observe frame(s) {missing}")


class TerminationReason(str, enum.Enum):
    COST = "cost-converged"
    GRADIENT = "gradient-converged"
    MAX_ITERATIONS = "max-iterations"


@dataclass
class OptimizeReport:
    initial_rms: float
    final_rms: float
    per_viewpoint_rms: list
    per_viewpoint_rms_std: float
    iterations: int
    termination_reason: TerminationReason


@dataclass(eq=False)
class CalibrationResult:
    """Per-viewpoint intrinsics, distortion and relative pose plus per-frame board poses.

    ``relative_poses[0]`` is the identity (viewpoint 0 fixes the gauge) and
    ``world_poses[j]`` is the board pose in viewpoint 0's frame for frame j.
    """

    intrinsics: list
    distortions: list
    relative_poses: list
    world_poses: list
    report: OptimizeReport | None = None
    warnings: tuple = field(default=())

    def __post_init__(self):
        n = len(self.intrinsics)
        if n == 0 or len(self.distortions) != n or len(self.relative_poses) != n:
            raise ValidationError("per-viewpoint lists must be non-empty and equal length")
        rel0 = self.relative_poses[0]
        if not (np.array_equal(rel0.rotation, np.eye(3)) and not np.any(rel0.translation)):
            raise ValidationError("gauge violation: viewpoint 0 relative pose must be the identity")

    @property
    def n_viewpoints(self) -> int:
        return len(self.intrinsics)

    @property
    def n_frames(self) -> int:
        return len(self.world_poses)

    def viewpoint_pose(self, viewpoint, frame) -> RigidTransform:
        return compose_world_pose(self.relative_poses[viewpoint], self.world_poses[frame])

    def to_arrays(self) -> dict:
        return {
            "intrinsics": np.array([k.as_array() for k in self.intrinsics]),
            "distortion": np.array([d.as_array() for d in self.distortions]),
            "rel_r": np.array([p.axis_angle for p in self.relative_poses]),
            "rel_t": np.array([p.translation for p in self.relative_poses]),
            "world_r": np.array([p.axis_angle for p in self.world_poses]).reshape(-1, 3),
            "world_t": np.array([p.translation for p in self.world_poses]).reshape(-1, 3),
        }

    @classmethod
    def from_arrays(cls, arrays, report=None) -> "CalibrationResult":
        rel_R = rotations_from_axis_angle(arrays["rel_r"])
        world_R = rotations_from_axis_angle(arrays["world_r"])
        rel = [RigidTransform(R, t) for R, t in zip(rel_R, arrays["rel_t"])]
        rel[0] = RigidTransform.identity()
        return cls(
            intrinsics=[Intrinsics.from_array(v) for v in arrays["intrinsics"]],
            distortions=[Distortion.from_array(v) for v in arrays["distortion"]],
            relative_poses=rel,
            world_poses=[RigidTransform(R, t) for R, t in zip(world_R, arrays["world_t"])],
            report=report,
        )


# Closed-form output and ground truth share the calibration layout.
InitialCalibration = CalibrationResult
GroundTruth = CalibrationResult
