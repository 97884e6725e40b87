"""Joint Levenberg-Marquardt refinement of a camera array.

Parameter blocks, in column order::

    for each viewpoint i:  [intrinsics (5, or 4 with fixed skew)] [distortion (4)] [relative pose (6), i > 0]
    for each frame j:      board pose in viewpoint 0 (axis-angle 3 + translation 3)

Each residual pair touches only its viewpoint's blocks and its frame's block,
so the Jacobian is assembled directly in sparse form; the damped normal
equations are small and solved densely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import BehindCameraError, OptimizationError, ValidationError
from .geometry import (
    Distortion,
    RigidTransform,
    relative_from_world,
    rotation_derivatives,
    rotations_from_axis_angle,
)
from .model import CalibrationResult, ObservationSet, OptimizeReport, TerminationReason
from .zhang import ViewpointInit, aggregate_relative_poses, closed_form_viewpoints

log = logging.getLogger(__name__)

_INTR, _DIST, _REL, _WORLD = "intrinsics", "distortion", "relative", "world"


@dataclass(frozen=True)
class OptimizeOptions:
    refine_intrinsics: bool = True
    refine_distortion: bool = True
    fix_skew: bool = False
    max_iterations: int = 100
    cost_rel_tol: float = 1e-12
    gradient_tol: float = 1e-10
    damping_init: float = 1e-3
    max_rejections: int = 40
    numeric_jacobian: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not (self.cost_rel_tol > 0 and self.gradient_tol > 0 and self.damping_init > 0):
            raise ValidationError("tolerances and initial damping must be positive")


class ParameterLayout:
    """Deterministic mapping between model arrays and the flat parameter vector."""

    def __init__(self, n_viewpoints, n_frames, refine_intrinsics=True, refine_distortion=True, fix_skew=False):
        self.n_viewpoints = n_viewpoints
        self.n_frames = n_frames
        self.intr_free = np.array([0, 1, 3, 4] if fix_skew else [0, 1, 2, 3, 4]) if refine_intrinsics \
            else np.array([], dtype=int)
        n_intr = len(self.intr_free)
        n_dist = 4 if refine_distortion else 0
        self.intr_offset = np.full(n_viewpoints, -1)
        self.dist_offset = np.full(n_viewpoints, -1)
        self.rel_offset = np.full(n_viewpoints, -1)
        off = 0
        for i in range(n_viewpoints):
            if n_intr:
                self.intr_offset[i] = off
                off += n_intr
            if n_dist:
                self.dist_offset[i] = off
                off += n_dist
            if i > 0:
                self.rel_offset[i] = off
                off += 6
        self.world_offset = off + 6 * np.arange(n_frames)
        self.size = off + 6 * n_frames

    @classmethod
    def from_options(cls, n_viewpoints, n_frames, opts: OptimizeOptions) -> "ParameterLayout":
        return cls(n_viewpoints, n_frames, opts.refine_intrinsics, opts.refine_distortion, opts.fix_skew)

    def pack(self, arrays) -> np.ndarray:
        x = np.empty(self.size)
        for i in range(self.n_viewpoints):
            if self.intr_offset[i] >= 0:
                o = self.intr_offset[i]
                x[o:o + len(self.intr_free)] = arrays["intrinsics"][i, self.intr_free]
            if self.dist_offset[i] >= 0:
                o = self.dist_offset[i]
                x[o:o + 4] = arrays["distortion"][i]
            if self.rel_offset[i] >= 0:
                o = self.rel_offset[i]
                x[o:o + 3] = arrays["rel_r"][i]
                x[o + 3:o + 6] = arrays["rel_t"][i]
        for j, o in enumerate(self.world_offset):
            x[o:o + 3] = arrays["world_r"][j]
            x[o + 3:o + 6] = arrays["world_t"][j]
        return x

    def unpack(self, x, base) -> dict:
        out = {k: v.copy() for k, v in base.items()}
        for i in range(self.n_viewpoints):
            if self.intr_offset[i] >= 0:
                o = self.intr_offset[i]
                out["intrinsics"][i, self.intr_free] = x[o:o + len(self.intr_free)]
            if self.dist_offset[i] >= 0:
                o = self.dist_offset[i]
                out["distortion"][i] = x[o:o + 4]
            if self.rel_offset[i] >= 0:
                o = self.rel_offset[i]
                out["rel_r"][i] = x[o:o + 3]
                out["rel_t"][i] = x[o + 3:o + 6]
        for j, o in enumerate(self.world_offset):
            out["world_r"][j] = x[o:o + 3]
            out["world_t"][j] = x[o + 3:o + 6]
        return out

    def block_columns(self, kind, index) -> np.ndarray:
        """Column indices of one parameter block (empty if not optimized)."""
        if kind == _WORLD:
            o, n = self.world_offset[index], 6
        else:
            o = {_INTR: self.intr_offset, _DIST: self.dist_offset, _REL: self.rel_offset}[kind][index]
            n = {_INTR: len(self.intr_free), _DIST: 4, _REL: 6}[kind]
        return np.arange(o, o + n) if o >= 0 else np.array([], dtype=int)


# ---------------------------------------------------------------------------
# Residuals and Jacobian
# ---------------------------------------------------------------------------


def _project(arrays, obs: ObservationSet, with_jacobian=False):
    """Project every observation; optionally return per-observation block derivatives."""
    vi, fj, pk = obs.viewpoint, obs.frame, obs.point
    board = obs.board_points_3d()
    R_rel = rotations_from_axis_angle(arrays["rel_r"])
    R_w = rotations_from_axis_angle(arrays["world_r"])
    # Board points in viewpoint 0, once per (frame, point).
    Y = (board @ R_w.transpose(0, 2, 1) + arrays["world_t"][:, None, :])[fj, pk]
    Rr = R_rel[vi]
    P = (Rr @ Y[:, :, None])[:, :, 0] + arrays["rel_t"][vi]
    bad = np.flatnonzero(~(P[:, 2] > 0))
    if bad.size:
        b = bad[0]
        raise BehindCameraError(viewpoint=int(vi[b]), frame=int(fj[b]), point=int(pk[b]))

    iz = 1.0 / P[:, 2]
    x, y = P[:, 0] * iz, P[:, 1] * iz
    k1, k2, p1, p2 = arrays["distortion"][vi].T
    al, be, ga, u0, v0 = arrays["intrinsics"][vi].T
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    proj = np.stack([al * xd + ga * yd + u0, be * yd + v0], axis=1)
    if not with_jacobian:
        return proj, None

    n = len(x)
    zeros, ones = np.zeros(n), np.ones(n)
    # d(pixel)/d(alpha, beta, gamma, u0, v0)
    J_intr = np.stack([
        np.stack([xd, zeros, yd, ones, zeros], axis=1),
        np.stack([zeros, yd, zeros, zeros, ones], axis=1),
    ], axis=1)
    # d(distorted normalized)/d(k1, k2, p1, p2)
    dD = np.stack([
        np.stack([x * r2, x * r2 * r2, 2 * x * y, r2 + 2 * x * x], axis=1),
        np.stack([y * r2, y * r2 * r2, r2 + 2 * y * y, 2 * x * y], axis=1),
    ], axis=1)
    dpix_dd = np.zeros((n, 2, 2))
    dpix_dd[:, 0, 0] = al
    dpix_dd[:, 0, 1] = ga
    dpix_dd[:, 1, 1] = be
    J_dist = dpix_dd @ dD
    # d(distorted)/d(x, y)
    dr = k1 + 2 * k2 * r2
    cross = 2 * x * y * dr + 2 * p1 * x + 2 * p2 * y
    dd_dxy = np.empty((n, 2, 2))
    dd_dxy[:, 0, 0] = radial + 2 * x * x * dr + 2 * p1 * y + 6 * p2 * x
    dd_dxy[:, 0, 1] = cross
    dd_dxy[:, 1, 0] = cross
    dd_dxy[:, 1, 1] = radial + 2 * y * y * dr + 6 * p1 * y + 2 * p2 * x
    # d(x, y)/dP
    dxy_dP = np.zeros((n, 2, 3))
    dxy_dP[:, 0, 0] = iz
    dxy_dP[:, 0, 2] = -x * iz
    dxy_dP[:, 1, 1] = iz
    dxy_dP[:, 1, 2] = -y * iz
    G = dpix_dd @ dd_dxy @ dxy_dP  # (n, 2, 3)

    # dP/d(relative rotation): column k is dR_rel/dr_k @ Y
    dR_rel = rotation_derivatives(arrays["rel_r"])[vi]
    dRY = (dR_rel.reshape(n, 9, 3) @ Y[:, :, None]).reshape(n, 3, 3).transpose(0, 2, 1)
    # dY/d(world rotation), once per (frame, point)
    dR_w = rotation_derivatives(arrays["world_r"])
    dY = np.einsum("tkab,mb->tmak", dR_w, board)[fj, pk]
    GR = G @ Rr
    return proj, {
        _INTR: J_intr,
        _DIST: J_dist,
        _REL: np.concatenate([G @ dRY, G], axis=2),
        _WORLD: np.concatenate([GR @ dY, GR], axis=2),
    }


def _as_arrays(model):
    return model.to_arrays() if isinstance(model, CalibrationResult) else model


def residuals(model, obs: ObservationSet) -> np.ndarray:
    """Observed minus projected pixels, flattened as (x, y) per observation."""
    proj, _ = _project(_as_arrays(model), obs)
    return (obs.pixels - proj).reshape(-1)


class _JacobianAssembler:
    """Sparse structure of the Jacobian for a fixed (observations, layout) pair.

    Only the values change between LM iterations, so the CSR index arrays and
    the permutation from block order to CSR order are computed once.
    """

    def __init__(self, obs: ObservationSet, layout: ParameterLayout):
        self.obs, self.layout = obs, layout
        n = len(obs)
        vi, fj = obs.viewpoint, obs.frame
        dist_width = 4 if np.any(layout.dist_offset >= 0) else 0
        self.blocks = [
            (_INTR, layout.intr_offset[vi], len(layout.intr_free), layout.intr_free),
            (_DIST, layout.dist_offset[vi], dist_width, None),
            (_REL, layout.rel_offset[vi], 6, None),
            (_WORLD, layout.world_offset[fj], 6, None),
        ]
        row_pair = np.stack([2 * np.arange(n), 2 * np.arange(n) + 1], axis=1)
        rows, cols = [], []
        for _, offsets, width, _ in self.blocks:
            m = offsets >= 0
            if width == 0 or not np.any(m):
                continue
            c = offsets[m][:, None] + np.arange(width)[None, :]
            rows.append(np.broadcast_to(row_pair[m][:, :, None], (m.sum(), 2, width)).reshape(-1))
            cols.append(np.broadcast_to(c[:, None, :], (m.sum(), 2, width)).reshape(-1))
        self.shape = (2 * n, layout.size)
        if rows:
            rows, cols = np.concatenate(rows), np.concatenate(cols)
            order = sp.csr_matrix((np.arange(1, len(rows) + 1, dtype=float), (rows, cols)), shape=self.shape)
            self.indptr, self.indices = order.indptr, order.indices
            self.perm = order.data.astype(np.int64) - 1
        else:
            self.perm = None

    def __call__(self, arrays) -> sp.csr_matrix:
        if self.perm is None:
            return sp.csr_matrix(self.shape)
        _, blocks = _project(arrays, self.obs, with_jacobian=True)
        vals = []
        for kind, offsets, width, sub in self.blocks:
            m = offsets >= 0
            if width == 0 or not np.any(m):
                continue
            J = blocks[kind] if sub is None else blocks[kind][:, :, sub]
            vals.append(-J[m].reshape(-1))
        return sp.csr_matrix((np.concatenate(vals)[self.perm], self.indices, self.indptr), shape=self.shape)


def jacobian(model, obs: ObservationSet, layout: ParameterLayout) -> sp.csr_matrix:
    """Analytic sparse Jacobian of :func:`residuals` with respect to ``layout``'s parameters.

    Rows follow the residual ordering. Each residual pair has nonzeros only in
    its viewpoint's intrinsics, distortion and relative-pose blocks and in its
    frame's board-pose block.
    """
    return _JacobianAssembler(obs, layout)(_as_arrays(model))


def numeric_jacobian(model, obs: ObservationSet, layout: ParameterLayout, step=1e-6) -> np.ndarray:
    """Central-difference Jacobian (dense); a debugging and testing aid."""
    base = _as_arrays(model)
    x0 = layout.pack(base)
    J = np.empty((2 * len(obs), layout.size))
    for c in range(layout.size):
        xp, xm = x0.copy(), x0.copy()
        xp[c] += step
        xm[c] -= step
        J[:, c] = (residuals(layout.unpack(xp, base), obs) - residuals(layout.unpack(xm, base), obs)) / (2 * step)
    return J


def rms(r) -> float:
    """Root mean square over residual components."""
    r = np.asarray(r, dtype=float)
    return float(np.sqrt(np.mean(r * r))) if r.size else 0.0


def per_viewpoint_errors(model, obs: ObservationSet) -> list:
    """RMS reprojection error of each viewpoint, in viewpoint order."""
    r = residuals(model, obs).reshape(-1, 2)
    n_vp = model.n_viewpoints if isinstance(model, CalibrationResult) else len(model["intrinsics"])
    return [rms(r[obs.viewpoint == i]) for i in range(n_vp)]


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------


def _report(init_rms, arrays, obs, iterations, reason):
    per_vp = per_viewpoint_errors(arrays, obs)
    return OptimizeReport(
        initial_rms=init_rms,
        final_rms=rms(residuals(arrays, obs)),
        per_viewpoint_rms=per_vp,
        per_viewpoint_rms_std=float(np.std(per_vp)),
        iterations=iterations,
        termination_reason=reason,
    )


def optimize(init: CalibrationResult, obs: ObservationSet, opts: OptimizeOptions | None = None):
    """Minimize total squared reprojection error over all enabled parameter blocks.

    Returns ``(CalibrationResult, OptimizeReport)``. Blocks disabled in
    ``opts`` keep their initial values exactly.
    """
    opts = opts or OptimizeOptions()
    if init.n_viewpoints != obs.n_viewpoints or init.n_frames != obs.n_frames:
        raise ValidationError(
            f"initial calibration is {init.n_viewpoints}x{init.n_frames} but observations are "
            f"{obs.n_viewpoints}x{obs.n_frames} (viewpoints x frames)")
    layout = ParameterLayout.from_options(obs.n_viewpoints, obs.n_frames, opts)
    base = init.to_arrays()
    x = layout.pack(base)
    r = residuals(base, obs)
    cost = float(r @ r)
    init_rms = rms(r)
    lam = opts.damping_init
    assemble = _JacobianAssembler(obs, layout)
    reason = TerminationReason.MAX_ITERATIONS
    iterations = 0

    for iterations in range(1, opts.max_iterations + 1):
        arrays = layout.unpack(x, base)
        if opts.numeric_jacobian:
            J = numeric_jacobian(arrays, obs, layout)
            A, g = J.T @ J, J.T @ r
        else:
            J = assemble(arrays)
            A, g = (J.T @ J).toarray(), J.T @ r
        if np.max(np.abs(g), initial=0.0) < opts.gradient_tol:
            reason = TerminationReason.GRADIENT
            iterations -= 1
            break
        diag = np.diag(A).copy()
        rejections = 0
        accepted = False
        while rejections <= opts.max_rejections:
            try:
                factor = scipy.linalg.cho_factor(A + lam * np.diag(diag))
                delta = -scipy.linalg.cho_solve(factor, g)
            except (np.linalg.LinAlgError, ValueError):
                lam *= 10
                rejections += 1
                continue
            x_new = x + delta
            try:
                r_new = residuals(layout.unpack(x_new, base), obs)
                cost_new = float(r_new @ r_new)
            except BehindCameraError:
                cost_new = np.inf
            if cost_new < cost:
                accepted = True
                break
            lam *= 10
            rejections += 1
        if not accepted:
            try:
                scipy.linalg.cho_factor(A + lam * np.diag(diag))
            except (np.linalg.LinAlgError, ValueError):
                raise OptimizationError(
                    "damped normal equations are singular",
                    _report(init_rms, layout.unpack(x, base), obs, iterations, TerminationReason.MAX_ITERATIONS),
                ) from None
            # No step reduces the cost any further at working precision.
            reason = TerminationReason.COST
            break
        rel_change = (cost - cost_new) / cost if cost > 0 else 0.0
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10, 1e-15)
        log.debug("LM iter %d: rms=%.6g lambda=%.1e", iterations, rms(r), lam)
        if rel_change < opts.cost_rel_tol or cost == 0.0:
            reason = TerminationReason.COST
            break

    arrays = layout.unpack(x, base)
    report = _report(init_rms, arrays, obs, iterations, reason)
    result = CalibrationResult.from_arrays(arrays, report=report)
    if not opts.refine_intrinsics:
        result.intrinsics = list(init.intrinsics)
    if not opts.refine_distortion:
        result.distortions = list(init.distortions)
    return result, report


def refine_independently(obs: ObservationSet, inits=None, opts: OptimizeOptions | None = None):
    """Baseline: refine each viewpoint alone, then median relative poses.

    Each viewpoint's intrinsics, distortion and per-frame board poses are
    refined with only its own observations. Relative poses against viewpoint 0
    are then recomputed frame by frame and reduced by median.
    """
    opts = opts or OptimizeOptions()
    if inits is None:
        inits = closed_form_viewpoints(obs, fix_skew=opts.fix_skew)
    refined = []
    for i, init in enumerate(inits):
        sub, frames = obs.select_viewpoint(i)
        keep = [n for n, j in enumerate(frames) if int(j) in init.world_poses]
        if len(keep) != len(frames):
            m = np.isin(sub.frame, keep)
            sub = ObservationSet(1, len(keep), sub.board, sub.viewpoint[m],
                                 np.searchsorted(keep, sub.frame[m]), sub.point[m], sub.pixels[m])
            frames = frames[keep]
        start = CalibrationResult([init.intrinsics], [Distortion()], [RigidTransform.identity()],
                                  [init.world_poses[int(j)] for j in frames])
        res, _ = optimize(start, sub, opts)
        refined.append((res, frames))

    ref_res, ref_frames = refined[0]
    ref = {int(j): p for j, p in zip(ref_frames, ref_res.world_poses)}
    rel = [RigidTransform.identity()]
    for res, frames in refined[1:]:
        per_frame = [relative_from_world(p, ref[int(j)]) for j, p in zip(frames, res.world_poses) if int(j) in ref]
        rel.append(aggregate_relative_poses(per_frame))
    result = CalibrationResult(
        intrinsics=[res.intrinsics[0] for res, _ in refined],
        distortions=[res.distortions[0] for res, _ in refined],
        relative_poses=rel,
        world_poses=[ref[j] for j in range(obs.n_frames)],
    )
    result.report = summarize(result, obs)
    result.report.iterations = sum(res.report.iterations for res, _ in refined)
    return result


def summarize(model: CalibrationResult, obs: ObservationSet) -> OptimizeReport:
    """Residual statistics of a calibration without optimizing."""
    arrays = model.to_arrays()
    total = rms(residuals(arrays, obs))
    per_vp = per_viewpoint_errors(arrays, obs)
    return OptimizeReport(total, total, per_vp, float(np.std(per_vp)), 0, TerminationReason.COST)


__all__ = [
    "OptimizeOptions",
    "ParameterLayout",
    "ViewpointInit",
    "jacobian",
    "numeric_jacobian",
    "optimize",
    "per_viewpoint_errors",
    "refine_independently",
    "residuals",
    "rms",
    "summarize",
]
