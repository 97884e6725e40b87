"""Synthetic camera arrays, board observations, rendered planes and noise sweeps.

Randomness comes from ``numpy.random.default_rng`` (PCG64) seeded explicitly,
so every function here is a pure function of its config and seed on a given
numpy build.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationError, ConfigurationError
from .geometry import (
    Distortion,
    Intrinsics,
    RigidTransform,
    axis_angle_to_matrix,
    distort,
    normalized_to_pixels,
    pixels_to_normalized,
    undistort,
)
from .imaging import Image, bilinear_sample
from .model import BoardSpec, CalibrationResult, GroundTruth, ObservationSet
from .optimizer import OptimizeOptions, optimize, refine_independently, rms, residuals
from .zhang import assemble_initial, closed_form_viewpoints

log = logging.getLogger(__name__)

MAX_POSE_ATTEMPTS = 1000
NOISE_STREAM = 0x6E6F697365
METHODS = ("closed_form", "independent", "global")
METRICS = ("alpha_rel_err", "beta_rel_err", "u0_abs_err", "v0_abs_err", "rms")


@dataclass(frozen=True)
class SimConfig:
    """Simulated rig and capture protocol; defaults reproduce the 5x5 desk-scale setup."""

    grid: tuple = (5, 5)  # (horizontal, vertical)
    spacing: float = 10.0
    resolution: tuple = (640, 480)
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics(700.0, 700.0, 0.0, 320.0, 240.0))
    distortion: Distortion = field(default_factory=Distortion)
    n_frames: int = 11
    board: BoardSpec = field(default_factory=lambda: BoardSpec(7, 10, 20.0))
    noise_sigma: float = 0.0
    n_trials: int = 20
    seed: int = 0
    distance_range: tuple = (600.0, 1200.0)
    max_tilt_deg: float = 35.0
    lateral_jitter: float = 50.0
    # Non-zero values perturb the rig away from the ideal planar grid.
    rig_rotation_jitter_deg: float = 0.0
    rig_translation_jitter: float = 0.0

    def __post_init__(self):
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ConfigurationError(f"grid counts must be >= 1, got {self.grid}")
        if not self.spacing > 0:
            raise ConfigurationError(f"spacing must be positive, got {self.spacing}")
        if self.n_frames < 1:
            raise ConfigurationError("n_frames must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.n_trials < 1:
            raise ConfigurationError("n_trials must be >= 1")
        lo, hi = self.distance_range
        if not 0 < lo <= hi:
            raise ConfigurationError(f"bad distance range {self.distance_range}")

    @property
    def n_viewpoints(self) -> int:
        return self.grid[0] * self.grid[1]


PRESETS = {
    "desk": SimConfig(),
    "small": SimConfig(grid=(3, 3), n_frames=5),
    "single": SimConfig(grid=(1, 1)),
}


def nominal_rig(cfg: SimConfig) -> list:
    """Ideal planar grid: identity rotations, translation (col, row, 0) * spacing."""
    cols, rows = cfg.grid
    return [RigidTransform(np.eye(3), [c * cfg.spacing, r * cfg.spacing, 0.0])
            for r in range(rows) for c in range(cols)]


def _sample_rig(cfg: SimConfig, rng) -> list:
    rig = nominal_rig(cfg)
    if cfg.rig_rotation_jitter_deg == 0 and cfg.rig_translation_jitter == 0:
        return rig
    out = [rig[0]]
    for pose in rig[1:]:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = np.deg2rad(cfg.rig_rotation_jitter_deg) * rng.uniform(0.5, 1.0)
        dt = rng.uniform(-1, 1, size=3) * cfg.rig_translation_jitter
        out.append(RigidTransform(axis_angle_to_matrix(axis * angle), pose.translation + dt))
    return out


def _in_view(cfg, pts_cam):
    w, h = cfg.resolution
    if np.any(pts_cam[:, 2] <= 0):
        return False
    px = normalized_to_pixels(cfg.intrinsics, distort(cfg.distortion, pts_cam[:, :2] / pts_cam[:, 2:3]))
    return bool(np.all((px[:, 0] >= 0) & (px[:, 0] <= w - 1) & (px[:, 1] >= 0) & (px[:, 1] <= h - 1)))


def _sample_board_pose(cfg: SimConfig, rig, rng) -> RigidTransform:
    board = np.column_stack([cfg.board.points(), np.zeros(cfg.board.n_points)])
    centroid = board.mean(axis=0)
    centers = np.array([-p.rotation.T @ p.translation for p in rig])
    rig_center = centers.mean(axis=0)
    for _ in range(MAX_POSE_ATTEMPTS):
        dist = rng.uniform(*cfg.distance_range)
        phi = rng.uniform(0, 2 * np.pi)
        tilt = np.deg2rad(rng.uniform(0, cfg.max_tilt_deg))
        spin = rng.uniform(0, 2 * np.pi)
        jitter = rng.uniform(-1, 1, size=2) * cfg.lateral_jitter
        R = axis_angle_to_matrix(tilt * np.array([np.cos(phi), np.sin(phi), 0.0])) \
            @ axis_angle_to_matrix([0.0, 0.0, spin])
        target = rig_center + np.array([jitter[0], jitter[1], dist])
        pose = RigidTransform(R, target - R @ centroid)
        if all(_in_view(cfg, p.compose(pose).apply(board)) for p in rig):
            return pose
    raise ConfigurationError(
        f"no board pose with all corners visible after {MAX_POSE_ATTEMPTS} attempts; "
        "widen the field of view or move the board closer")


def generate_scene(cfg: SimConfig, seed=None):
    """Sample a rig and board poses; return ``(GroundTruth, noiseless ObservationSet)``."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    rig = _sample_rig(cfg, rng)
    world = [_sample_board_pose(cfg, rig, rng) for _ in range(cfg.n_frames)]
    n = len(rig)
    truth = GroundTruth(
        intrinsics=[cfg.intrinsics] * n,
        distortions=[cfg.distortion] * n,
        relative_poses=rig,
        world_poses=world,
    )
    return truth, observe(truth, cfg.board)


def observe(truth: CalibrationResult, board: BoardSpec) -> ObservationSet:
    """Noiseless projections of every board corner in every viewpoint and frame."""
    pts = np.column_stack([board.points(), np.zeros(board.n_points)])
    M = board.n_points
    vi, fj, pk, px = [], [], [], []
    for i in range(truth.n_viewpoints):
        for j in range(truth.n_frames):
            cam = truth.viewpoint_pose(i, j).apply(pts)
            xy = distort(truth.distortions[i], cam[:, :2] / cam[:, 2:3])
            px.append(normalized_to_pixels(truth.intrinsics[i], xy))
            vi.append(np.full(M, i))
            fj.append(np.full(M, j))
            pk.append(np.arange(M))
    return ObservationSet(truth.n_viewpoints, truth.n_frames, board.points(), np.concatenate(vi),
                          np.concatenate(fj), np.concatenate(pk), np.concatenate(px), board)


def add_noise(obs: ObservationSet, sigma: float, seed) -> ObservationSet:
    """Add i.i.d. zero-mean Gaussian noise of standard deviation ``sigma`` pixels."""
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    if sigma == 0:
        return obs
    rng = np.random.default_rng(seed)
    return obs.with_pixels(obs.pixels + sigma * rng.standard_normal(obs.pixels.shape))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_plane_views(truth: CalibrationResult, texture: Image, depth: float, resolution=(640, 480),
                       texel_mm=None, center=(0.0, 0.0)) -> list:
    """Render a textured plane ``Z = depth`` (viewpoint 0 frame) through every viewpoint.

    The texture is centred at ``center`` on the plane with ``texel_mm``
    millimetres per texel (default: one texel per viewpoint-0 pixel).
    """
    if not depth > 0:
        raise ValueError("depth must be positive")
    if texture.width < 1 or texture.height < 1:
        raise ValueError("texture is empty")
    if texel_mm is None:
        texel_mm = depth / truth.intrinsics[0].alpha
    w, h = resolution
    grid = np.stack(np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float)), axis=-1)
    views = []
    for i in range(truth.n_viewpoints):
        ray = undistort(truth.distortions[i], pixels_to_normalized(truth.intrinsics[i], grid))
        d_cam = np.concatenate([ray, np.ones(ray.shape[:-1] + (1,))], axis=-1)
        pose = truth.relative_poses[i]
        Rt = pose.rotation.T
        d0 = d_cam @ Rt.T  # ray direction in viewpoint 0's frame
        o0 = -Rt @ pose.translation  # camera centre in viewpoint 0's frame
        lam = (depth - o0[2]) / d0[..., 2]
        P = o0 + lam[..., None] * d0
        tx = (P[..., 0] - center[0]) / texel_mm + (texture.width - 1) / 2
        ty = (P[..., 1] - center[1]) / texel_mm + (texture.height - 1) / 2
        samples, _ = bilinear_sample(texture.data, tx, ty)
        views.append(Image(samples))
    return views


# ---------------------------------------------------------------------------
# Noise sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepReport:
    """Per-(sigma, method, metric) aggregates over successful trials."""

    rows: list  # dicts with sigma, method, metric, mean, std, n_trials
    n_failed: dict  # (sigma, method) -> failed trial count

    def value(self, sigma, method, metric, stat="mean"):
        for row in self.rows:
            if row["sigma"] == sigma and row["method"] == method and row["metric"] == metric:
                return row[stat]
        raise KeyError((sigma, method, metric))

    def write_csv(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["sigma", "method", "metric", "mean", "std", "n_trials"])
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        os.replace(tmp, path)


def _metrics(result: CalibrationResult, truth: CalibrationResult, obs: ObservationSet) -> dict:
    est, gt = result.intrinsics[0], truth.intrinsics[0]
    return {
        "alpha_rel_err": abs(est.alpha - gt.alpha) / gt.alpha,
        "beta_rel_err": abs(est.beta - gt.beta) / gt.beta,
        "u0_abs_err": abs(est.u0 - gt.u0),
        "v0_abs_err": abs(est.v0 - gt.v0),
        "rms": rms(residuals(result, obs)),
    }


def run_trial(cfg: SimConfig, sigma: float, trial: int, opts: OptimizeOptions | None = None) -> dict:
    """Calibrate one noisy scene with all three methods; returns method -> metrics (or None on failure).

    The scene and the unit noise draw depend only on ``cfg.seed + trial``, so
    different noise levels of the same trial share one realization scaled by
    sigma.
    """
    opts = opts or OptimizeOptions()
    seed = cfg.seed + trial
    truth, clean = generate_scene(cfg, seed)
    obs = add_noise(clean, sigma, [seed, NOISE_STREAM])
    out = dict.fromkeys(METHODS)
    try:
        inits = closed_form_viewpoints(obs, fix_skew=opts.fix_skew)
        init = assemble_initial(obs, inits)
    except CalibrationError as exc:
        log.warning("trial %d sigma %g: closed form failed (%s)", trial, sigma, exc)
        return out
    out["closed_form"] = _metrics(init, truth, obs)
    try:
        out["independent"] = _metrics(refine_independently(obs, inits, opts), truth, obs)
    except CalibrationError as exc:
        log.warning("trial %d sigma %g: independent refinement failed (%s)", trial, sigma, exc)
    try:
        result, _ = optimize(init, obs, opts)
        out["global"] = _metrics(result, truth, obs)
    except CalibrationError as exc:
        log.warning("trial %d sigma %g: global optimization failed (%s)", trial, sigma, exc)
    return out


def run_noise_sweep(cfg: SimConfig, sigmas, trials=None, opts: OptimizeOptions | None = None,
                    workers=1) -> SweepReport:
    """Average calibration errors of the three methods at each noise level.

    Trials are independent and run in ``workers`` processes when > 1; the
    aggregation sorts values first, so results do not depend on scheduling.
    """
    sigmas = [float(s) for s in sigmas]
    trials = cfg.n_trials if trials is None else trials
    if not sigmas:
        raise ConfigurationError("need at least one noise level")
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    jobs = [(sigma, t) for sigma in sigmas for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_trial, cfg, sigma, t, opts) for sigma, t in jobs]
            results = [f.result() for f in futures]
    else:
        results = [run_trial(cfg, sigma, t, opts) for sigma, t in jobs]
    by_job = dict(zip(jobs, results))

    rows, n_failed = [], {}
    for sigma in sigmas:
        collected = {m: [by_job[(sigma, t)][m] for t in range(trials) if by_job[(sigma, t)][m] is not None]
                     for m in METHODS}
        for m in METHODS:
            n_failed[(sigma, m)] = trials - len(collected[m])
            for metric in METRICS:
                vals = np.sort([c[metric] for c in collected[m]])
                rows.append({
                    "sigma": sigma, "method": m, "metric": metric,
                    "mean": float(np.mean(vals)) if len(vals) else float("nan"),
                    "std": float(np.std(vals)) if len(vals) else float("nan"),
                    "n_trials": len(vals),
                })
    return SweepReport(rows, n_failed)


def with_overrides(cfg: SimConfig, **kw) -> SimConfig:
    return replace(cfg, **kw)
