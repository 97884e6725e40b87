import numpy as np
import pytest

from lfcal.errors import ValidationError
from lfcal.geometry import Distortion, Intrinsics, RigidTransform
from lfcal.model import BoardSpec, CalibrationResult, ObservationSet


def test_board_points_row_major():
    pts = BoardSpec(2, 3, 20.0).points()
    np.testing.assert_array_equal(pts, [[0, 0], [20, 0], [40, 0], [0, 20], [20, 20], [40, 20]])


@pytest.mark.parametrize("args", [(1, 3, 1.0), (3, 1, 1.0), (3, 3, 0.0)])
def test_board_validation(args):
    with pytest.raises(ValidationError):
        BoardSpec(*args)


def test_observations_are_sorted_and_readonly():
    obs = ObservationSet.from_records(2, 2, np.zeros((3, 2)), [(1, 0, 0, 1, 1), (0, 1, 2, 2, 2), (0, 1, 0, 3, 3)])
    np.testing.assert_array_equal(obs.viewpoint, [0, 0, 1])
    np.testing.assert_array_equal(obs.point, [0, 2, 0])
    with pytest.raises(ValueError):
        obs.pixels[0, 0] = 5.0


@pytest.mark.parametrize("records, match", [
    ([(2, 0, 0, 1, 1)], "viewpoint index 2"),
    ([(0, 0, 0, 1, 1), (0, 0, 0, 2, 2)], "duplicate"),
    ([(0, 0, 0, np.nan, 1)], "non-finite"),
])
def test_observation_validation(records, match):
    with pytest.raises(ValidationError, match=match):
        ObservationSet.from_records(2, 1, np.zeros((3, 2)), records)


def test_select_viewpoint_renumbers_frames(small_scene):
    _, obs = small_scene
    keep = ~((obs.viewpoint == 2) & (obs.frame == 1))
    sub_all = ObservationSet(obs.n_viewpoints, obs.n_frames, obs.board, obs.viewpoint[keep], obs.frame[keep],
                             obs.point[keep], obs.pixels[keep])
    sub, frames = sub_all.select_viewpoint(2)
    np.testing.assert_array_equal(frames, [0, 2, 3, 4])
    assert sub.n_viewpoints == 1 and sub.n_frames == 4
    np.testing.assert_array_equal(np.unique(sub.frame), np.arange(4))


def test_calibration_gauge_is_enforced():
    intr, dist = Intrinsics(1, 1), Distortion()
    with pytest.raises(ValidationError, match="gauge"):
        CalibrationResult([intr], [dist], [RigidTransform(np.eye(3), [1e-12, 0, 0])], [])
    with pytest.raises(ValidationError):
        CalibrationResult([intr, intr], [dist], [RigidTransform.identity()] * 2, [])


def test_arrays_roundtrip(small_scene):
    truth, _ = small_scene
    back = CalibrationResult.from_arrays(truth.to_arrays())
    for a, b in zip(back.relative_poses + back.world_poses, truth.relative_poses + truth.world_poses):
        assert a.allclose(b, atol=1e-12)
