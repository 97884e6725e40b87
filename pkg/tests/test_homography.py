import numpy as np
import pytest

from lfcal.errors import EstimationError, NumericalError, ValidationError
from lfcal.geometry import Distortion, project_points
from lfcal.homography import (
    apply_homography,
    dlt_design_matrix,
    estimate_homography,
    normalization_transform,
    transfer_error,
)

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)


def random_homography(rng):
    H = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    H[2, :2] *= 1e-3
    H[:2, 2] = rng.uniform(-50, 50, 2)
    return H / H[2, 2]


def condition(A):
    sv = np.linalg.svd(A, compute_uv=False)
    return sv[0] / sv[7]


@pytest.fixture
def grid():
    c, r = np.meshgrid(np.arange(10) * 20.0, np.arange(7) * 20.0)
    return np.column_stack([c.ravel(), r.ravel()])


def test_unit_square_to_itself_is_identity():
    np.testing.assert_allclose(estimate_homography(SQUARE, SQUARE), np.eye(3), atol=1e-12)


def test_recovers_synthesized_homography(rng, grid):
    for _ in range(20):
        H = random_homography(rng)
        H_est = estimate_homography(grid, apply_homography(H, grid))
        assert H_est[2, 2] == 1.0
        np.testing.assert_allclose(H_est, H, rtol=1e-9, atol=1e-9 * np.abs(H).max())


def test_noiseless_camera_transfer_error(desk_scene):
    truth, obs = desk_scene
    for j in range(obs.n_frames):
        k, image = obs.points(0, j)
        model = obs.board[k]
        H = estimate_homography(model, image, frame=j)
        assert transfer_error(H, model, image).max() < 1e-8


def test_scale_invariance(rng, grid):
    H = random_homography(rng)
    image = apply_homography(H, grid) + rng.normal(0, 0.5, (len(grid), 2))
    s = 3.7
    H1 = estimate_homography(grid, image)
    Hs = estimate_homography(grid, s * image)
    np.testing.assert_allclose(apply_homography(Hs, grid), s * apply_homography(H1, grid), atol=1e-8)


def test_normalization_improves_conditioning(desk_scene):
    _, obs = desk_scene
    for j in range(obs.n_frames):
        k, image = obs.points(0, j)
        model = obs.board[k]
        raw = condition(dlt_design_matrix(model, image))
        Ts, Td = normalization_transform(model), normalization_transform(image)
        norm = condition(dlt_design_matrix(model @ Ts[:2, :2].T + Ts[:2, 2], image @ Td[:2, :2].T + Td[:2, 2]))
        assert norm <= raw


def test_normalization_transform_statistics(rng):
    pts = rng.uniform(100, 500, (40, 2))
    T = normalization_transform(pts)
    p = pts @ T[:2, :2].T + T[:2, 2]
    np.testing.assert_allclose(p.mean(axis=0), 0, atol=1e-12)
    assert np.mean(np.linalg.norm(p, axis=1)) == pytest.approx(np.sqrt(2))


def test_apply_identity_and_translation(rng):
    p = rng.normal(size=(6, 2))
    np.testing.assert_array_equal(apply_homography(np.eye(3), p), p)
    T = np.array([[1, 0, 4.0], [0, 1, -2.0], [0, 0, 1]])
    np.testing.assert_allclose(apply_homography(T, p), p + [4, -2], atol=1e-15)


def test_apply_then_inverse(rng):
    H = random_homography(rng)
    p = rng.uniform(-100, 100, (30, 2))
    np.testing.assert_allclose(apply_homography(np.linalg.inv(H), apply_homography(H, p)), p, atol=1e-10)


def test_apply_point_at_infinity():
    H = np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0.0]])
    with pytest.raises(NumericalError, match="infinity"):
        apply_homography(H, [[0.0, 3.0]])


def test_too_few_points_names_frame():
    with pytest.raises(EstimationError, match="frame 4"):
        estimate_homography(SQUARE[:3], SQUARE[:3], frame=4)


def test_collinear_points_rejected():
    line = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(EstimationError, match="collinear"):
        estimate_homography(line, line + 1, frame=2)


def test_length_mismatch():
    with pytest.raises(ValidationError):
        estimate_homography(SQUARE, SQUARE[:3])


def test_with_distortion_transfer_is_inexact(desk_scene):
    # Distortion breaks the planar projective model, so DLT can no longer be exact.
    truth, obs = desk_scene
    model = obs.board
    pts3 = np.column_stack([model, np.zeros(len(model))])
    image = project_points(truth.intrinsics[0], Distortion(0.2), truth.world_poses[0], pts3)
    H = estimate_homography(model, image)
    assert transfer_error(H, model, image).max() > 1e-3
