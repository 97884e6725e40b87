import csv

import numpy as np
import pytest

from lfcal.errors import ConfigurationError, OptimizationError
from lfcal.geometry import Distortion
from lfcal.optimizer import residuals
from lfcal.simulator import (
    METHODS,
    METRICS,
    PRESETS,
    SimConfig,
    add_noise,
    generate_scene,
    nominal_rig,
    run_noise_sweep,
    with_overrides,
)
import lfcal.simulator as simulator

SMALL = PRESETS["small"]


def test_desk_preset_counts(desk_scene):
    truth, obs = desk_scene
    assert (obs.n_viewpoints, obs.n_frames, len(obs.board)) == (25, 11, 70)
    assert len(obs) == 25 * 11 * 70 == 19250
    assert truth.intrinsics[0].as_array().tolist() == [700, 700, 0, 320, 240]


def test_noiseless_scene_is_self_consistent(desk_scene):
    truth, obs = desk_scene
    assert np.abs(residuals(truth, obs)).max() < 1e-9


def test_all_corners_in_view(desk_scene):
    _, obs = desk_scene
    w, h = PRESETS["desk"].resolution
    assert np.all((obs.pixels >= 0) & (obs.pixels <= [w - 1, h - 1]))


def test_nominal_rig_is_planar_grid():
    rig = nominal_rig(SimConfig(grid=(3, 2), spacing=7.0))
    expected = [(c * 7.0, r * 7.0, 0.0) for r in range(2) for c in range(3)]
    for pose, t in zip(rig, expected):
        np.testing.assert_array_equal(pose.rotation, np.eye(3))
        np.testing.assert_array_equal(pose.translation, t)


def test_generated_truth_uses_nominal_rig(small_scene):
    truth, _ = small_scene
    for a, b in zip(truth.relative_poses, nominal_rig(SMALL)):
        assert a.allclose(b, atol=0)


def test_board_poses_are_varied(desk_scene):
    truth, _ = desk_scene
    depths = [p.translation[2] for p in truth.world_poses]
    tilts = [np.degrees(np.arccos(np.clip(p.rotation[2, 2], -1, 1))) for p in truth.world_poses]
    assert np.ptp(depths) > 100
    assert max(tilts) <= 35 + 1e-9 and np.ptp(tilts) > 5


def test_rig_jitter_breaks_planarity():
    truth, _ = generate_scene(with_overrides(SMALL, rig_rotation_jitter_deg=1.0, rig_translation_jitter=0.5), seed=1)
    angles = [np.linalg.norm(p.axis_angle) for p in truth.relative_poses[1:]]
    assert min(angles) > 0
    np.testing.assert_array_equal(truth.relative_poses[0].translation, 0)


def test_scene_determinism():
    a = generate_scene(SMALL, seed=9)[1]
    b = generate_scene(SMALL, seed=9)[1]
    c = generate_scene(SMALL, seed=10)[1]
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, c.pixels)


def test_add_noise_zero_is_identity(small_scene):
    _, obs = small_scene
    np.testing.assert_array_equal(add_noise(obs, 0.0, seed=1).pixels, obs.pixels)


def test_noise_statistics(desk_scene):
    _, obs = desk_scene
    d = (add_noise(obs, 1.0, seed=42).pixels - obs.pixels).ravel()
    assert d.size == 38500
    assert 0.98 <= np.std(d) <= 1.02
    assert abs(np.mean(d)) < 3 / np.sqrt(d.size)
    assert np.var(d) == pytest.approx(1.0, rel=0.05)


def test_noise_seeds(small_scene):
    _, obs = small_scene
    a, b = add_noise(obs, 0.5, seed=1), add_noise(obs, 0.5, seed=2)
    assert not np.array_equal(a.pixels, b.pixels)
    np.testing.assert_array_equal(add_noise(obs, 0.5, seed=1).pixels, a.pixels)
    np.testing.assert_allclose(a.pixels - (a.pixels - obs.pixels), obs.pixels, atol=1e-12)


def test_negative_sigma(small_scene):
    with pytest.raises(ConfigurationError):
        add_noise(small_scene[1], -0.1, seed=0)


def test_unreachable_poses_raise():
    cfg = SimConfig(grid=(1, 1), distance_range=(50.0, 60.0))
    with pytest.raises(ConfigurationError, match="attempts"):
        generate_scene(cfg, seed=0)


@pytest.mark.parametrize("kw", [dict(grid=(0, 3)), dict(spacing=0.0), dict(n_frames=0), dict(noise_sigma=-1.0),
                                dict(n_trials=0), dict(distance_range=(10.0, 5.0))])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        SimConfig(**kw)


def test_distorted_scene(small_scene):
    truth, obs = generate_scene(with_overrides(SMALL, distortion=Distortion(-0.1, 0.02)), seed=3)
    assert not np.allclose(obs.pixels, small_scene[1].pixels)
    assert np.abs(residuals(truth, obs)).max() < 1e-9


# --- sweep --------------------------------------------------------------


def test_noiseless_sweep_is_exact():
    report = run_noise_sweep(SMALL, [0.0], trials=2)
    for metric in ("alpha_rel_err", "beta_rel_err"):
        assert report.value(0.0, "closed_form", metric) < 1e-6
        assert report.value(0.0, "global", metric) < 1e-8
        assert report.value(0.0, "independent", metric) < 1e-8
    assert report.value(0.0, "global", "rms") < 1e-8
    assert all(n == 0 for n in report.n_failed.values())


def test_sweep_rows_and_csv(tmp_path):
    report = run_noise_sweep(SMALL, [0.2, 1.0], trials=1)
    assert len(report.rows) == 2 * len(METHODS) * len(METRICS)
    path = tmp_path / "sweep.csv"
    report.write_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["sigma", "method", "metric", "mean", "std", "n_trials"]
    assert float(rows[-1]["mean"]) == report.rows[-1]["mean"]
    assert {r["n_trials"] for r in rows} == {"1"}


def test_sweep_parallel_matches_serial():
    a = run_noise_sweep(SMALL, [0.5], trials=2)
    b = run_noise_sweep(SMALL, [0.5], trials=2, workers=2)
    assert a.rows == b.rows


def test_failed_trials_are_excluded(monkeypatch):
    def boom(*args, **kwargs):
        raise OptimizationError("forced", None)

    monkeypatch.setattr(simulator, "optimize", boom)
    report = run_noise_sweep(SMALL, [0.3], trials=2)
    assert report.n_failed[(0.3, "global")] == 2
    assert report.value(0.3, "global", "rms", "n_trials") == 0
    assert np.isnan(report.value(0.3, "global", "rms"))
    assert report.value(0.3, "closed_form", "rms", "n_trials") == 2


def test_sweep_validation():
    with pytest.raises(ConfigurationError):
        run_noise_sweep(SMALL, [], trials=1)
    with pytest.raises(ConfigurationError):
        run_noise_sweep(SMALL, [0.1], trials=0)
