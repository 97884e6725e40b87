"""End-to-end acceptance criteria, each run at its stated tolerance.

Every test prints (and records for the terminal summary) one PASS/FAIL line.
The noise sweep is shared by criteria 2-4 and takes several minutes.
"""

import json
import os
import time

import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.stats import rankdata, spearmanr

from conftest import ACCEPTANCE_LINES, column_relative_error, perturbed_arrays
from lfcal.dataio import read_calibration, read_observations, write_calibration, write_observations
from lfcal.errors import ParseError, ValidationError
from lfcal.geometry import (
    Distortion,
    RigidTransform,
    axis_angle_to_matrix,
    compose_world_pose,
    distort,
    matrix_to_axis_angle,
    normalized_to_pixels,
    relative_from_world,
    undistort,
)
from lfcal.imaging import Image
from lfcal.lightfield import LightField, rectify, refocus, sharpness
from lfcal.optimizer import OptimizeOptions, ParameterLayout, jacobian, numeric_jacobian, optimize, refine_independently
from lfcal.simulator import PRESETS, NOISE_STREAM, add_noise, generate_scene, nominal_rig, render_plane_views, \
    run_noise_sweep, with_overrides
from lfcal.zhang import closed_form_viewpoints, assemble_initial, run_closed_form

SIGMAS = [0.2, 0.6, 1.0, 1.4, 1.8]
TRIALS = 20
DESK = PRESETS["desk"]


def record(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def sweep():
    workers = int(os.environ.get("LFCAL_THREADS", "0") or 0) or (os.cpu_count() or 1)
    start = time.perf_counter()
    report = run_noise_sweep(DESK, SIGMAS, trials=TRIALS, workers=workers)
    return report, time.perf_counter() - start


def test_criterion_1_noiseless_closure(desk_scene):
    start = time.perf_counter()
    truth, obs = desk_scene
    init = run_closed_form(obs)
    gt = truth.intrinsics[0]
    closed = max(max(abs(k.alpha - gt.alpha) / gt.alpha, abs(k.beta - gt.beta) / gt.beta,
                     abs(k.u0 - gt.u0) / gt.u0, abs(k.v0 - gt.v0) / gt.v0, abs(k.gamma) / gt.alpha)
                 for k in init.intrinsics)
    result, report = optimize(init, obs)
    trans = max(np.abs(a.translation - b.translation).max()
                for a, b in zip(result.relative_poses, truth.relative_poses))
    elapsed = time.perf_counter() - start
    ok = closed < 1e-6 and report.final_rms < 1e-8 and trans < 1e-6 and elapsed < 30
    record(1, ok, f"closed-form intrinsics rel err {closed:.2e} (<1e-6), final RMS {report.final_rms:.2e} px "
                  f"(<1e-8), relative translation err {trans:.2e} mm (<1e-6), {elapsed:.1f} s (<30)")


def test_criterion_2_subpixel_rms(sweep):
    report, elapsed = sweep
    mean = report.value(0.6, "global", "rms")
    n = report.value(0.6, "global", "rms", "n_trials")
    ok = mean < 1.0 and n == TRIALS
    record(2, ok, f"mean final RMS at sigma=0.6 over {n} trials = {mean:.4f} px (<1.0); "
                  f"full 5-level sweep took {elapsed:.0f} s")


def test_criterion_3_method_ordering(sweep):
    report, _ = sweep
    ok, parts = True, []
    for s in SIGMAS:
        g, i, c = (report.value(s, m, "rms") for m in ("global", "independent", "closed_form"))
        ok &= g <= i <= c
        parts.append(f"{s}: {g:.3f}<={i:.3f}<={c:.3f}")
    record(3, ok, "mean RMS global <= independent <= closed form at every sigma; " + ", ".join(parts))


def test_criterion_4_focal_error_monotone(sweep):
    report, _ = sweep
    err = [(report.value(s, "global", "alpha_rel_err") + report.value(s, "global", "beta_rel_err")) / 2
           for s in SIGMAS]
    rho = spearmanr(SIGMAS, err).statistic
    # Spearman is exactly 1 iff the rank vectors agree; the float statistic can round to 1 - ulp
    ranks_agree = np.array_equal(rankdata(SIGMAS), rankdata(err))
    ok = all(b > a for a, b in zip(err, err[1:])) and ranks_agree
    record(4, ok, f"global focal rel err {', '.join(f'{e:.2e}' for e in err)}; Spearman {rho:.2f} (=1)")


def test_criterion_5_per_viewpoint_spread():
    wins, pairs = 0, []
    for trial in range(TRIALS):
        seed = DESK.seed + trial
        _, clean = generate_scene(DESK, seed)
        obs = add_noise(clean, 0.5, [seed, NOISE_STREAM])
        inits = closed_form_viewpoints(obs)
        _, glob = optimize(assemble_initial(obs, inits), obs)
        indep = refine_independently(obs, inits).report
        wins += glob.per_viewpoint_rms_std < indep.per_viewpoint_rms_std
        pairs.append((glob.per_viewpoint_rms_std, indep.per_viewpoint_rms_std))
    g, i = np.mean(pairs, axis=0)
    record(5, wins >= 18, f"global std < independent std in {wins}/{TRIALS} trials (>=18); "
                          f"mean std {g:.4f} vs {i:.4f} px")


def test_criterion_6_jacobian():
    start = time.perf_counter()
    truth, obs = generate_scene(PRESETS["small"], seed=6)
    rng = np.random.default_rng(6)
    layout = ParameterLayout(obs.n_viewpoints, obs.n_frames)
    worst = 0.0
    for _ in range(10):
        a = perturbed_arrays(truth, rng)
        worst = max(worst, column_relative_error(jacobian(a, obs, layout).toarray(), numeric_jacobian(a, obs, layout)))
    elapsed = time.perf_counter() - start
    record(6, worst < 1e-4 and elapsed < 60,
           f"max relative deviation from central differences {worst:.2e} (<1e-4) at 10 points, {elapsed:.1f} s (<60)")


def test_criterion_7_geometry_roundtrips():
    rng = np.random.default_rng(7)
    n = 1000

    def rotvec(max_angle=np.pi):
        axis = rng.normal(size=3)
        return axis / np.linalg.norm(axis) * rng.uniform(0, max_angle)

    pose_err = 0.0
    for _ in range(n):
        rel = RigidTransform(axis_angle_to_matrix(rotvec()), rng.uniform(-100, 100, 3))
        w0 = RigidTransform(axis_angle_to_matrix(rotvec()), rng.uniform(-1000, 1000, 3))
        back = relative_from_world(compose_world_pose(rel, w0), w0)
        pose_err = max(pose_err, np.abs(back.rotation - rel.rotation).max(),
                       np.abs(back.translation - rel.translation).max())

    dist_err = 0.0
    for _ in range(n):
        d = Distortion(rng.uniform(-0.2, 0.2), rng.uniform(-0.05, 0.05), rng.uniform(-0.01, 0.01),
                       rng.uniform(-0.01, 0.01))
        p = rng.uniform(-0.5, 0.5, 2)
        dist_err = max(dist_err, np.abs(undistort(d, distort(d, p)) - p).max())

    rot_err = 0.0
    for _ in range(n):
        r = rotvec()
        R = axis_angle_to_matrix(r)
        rot_err = max(rot_err, np.abs(matrix_to_axis_angle(R) - r).max(),
                      np.abs(axis_angle_to_matrix(matrix_to_axis_angle(R)) - R).max())

    ok = pose_err < 1e-9 and dist_err < 1e-10 and rot_err < 1e-9
    record(7, ok, f"world/relative pose {pose_err:.1e} (<1e-9), distortion {dist_err:.1e} (<1e-10), "
                  f"axis-angle {rot_err:.1e} (<1e-9) over {n} cases each")


def _render_stars(intr, dist, R, directions, shape, blob=1.2):
    d = directions @ R.T
    q = normalized_to_pixels(intr, distort(dist, d[:, :2] / d[:, 2:3]))
    yy, xx = np.mgrid[:shape[0], :shape[1]].astype(float)
    img = np.zeros(shape)
    for x, y in q:
        m = (np.abs(xx - x) < 8) & (np.abs(yy - y) < 8)
        img[m] += np.exp(-((xx[m] - x) ** 2 + (yy[m] - y) ** 2) / (2 * blob ** 2))
    return Image(np.clip(img, 0, 1)), q


def _centroid(data, x, y, r=5):
    x0, y0 = int(round(x)), int(round(y))
    win = data[y0 - r:y0 + r + 1, x0 - r:x0 + r + 1]
    yy, xx = np.mgrid[y0 - r:y0 + r + 1, x0 - r:x0 + r + 1]
    return np.array([np.sum(win * xx), np.sum(win * yy)]) / np.sum(win)


def test_criterion_8_no_disparity_at_infinity():
    cfg = with_overrides(DESK, rig_rotation_jitter_deg=2.0, rig_translation_jitter=1.0,
                         distortion=Distortion(-0.08, 0.02, 0.001, -0.0005), n_frames=1)
    truth, _ = generate_scene(cfg, seed=8)
    w, h = cfg.resolution
    gx, gy = np.meshgrid([-0.3, 0.0, 0.3], [-0.22, 0.0, 0.22])
    stars = np.column_stack([gx.ravel(), gy.ravel(), np.ones(9)])
    rendered = [_render_stars(truth.intrinsics[i], truth.distortions[i], truth.relative_poses[i].rotation,
                              stars, (h, w)) for i in range(truth.n_viewpoints)]
    images = [im for im, _ in rendered]
    raw = np.array([q for _, q in rendered])  # (views, stars, 2)
    target = truth.intrinsics[0]
    out = rectify(LightField.from_calibration(images, truth), target)
    worst = 0.0
    for x, y in normalized_to_pixels(target, stars[:, :2]):
        c = np.array([_centroid(im.data, x, y) for im in out.images])
        worst = max(worst, pdist(c).max())
    raw_worst = max(pdist(raw[:, k]).max() for k in range(len(stars)))
    record(8, worst < 0.1, f"max inter-view disparity of 9 stars at infinity over 25 rotated views "
                           f"{worst:.3f} px after rectification (<0.1); before: {raw_worst:.1f} px")


def _texture(shape=(760, 880)):
    t = np.random.default_rng(9).uniform(size=shape)
    for _ in range(2):
        t = (t + np.roll(t, 1, 0) + np.roll(t, 1, 1) + np.roll(t, -1, 0) + np.roll(t, -1, 1)) / 5
    return Image(t)


def test_criterion_9_refocus():
    cfg = with_overrides(DESK, rig_rotation_jitter_deg=0.5, rig_translation_jitter=1.0)
    truth, clean = generate_scene(cfg, seed=9)
    obs = add_noise(clean, 0.2, seed=[9, NOISE_STREAM])
    calib, _ = optimize(run_closed_form(obs), obs)
    views = render_plane_views(truth, _texture(), 500.0, cfg.resolution)
    lf = LightField.from_calibration(views, calib)
    s = {z: sharpness(refocus(lf, z)) for z in (250.0, 500.0, 1000.0)}
    nominal = LightField(views, calib.intrinsics, calib.distortions, nominal_rig(cfg))
    s_nominal = sharpness(refocus(nominal, 500.0))
    ok = s[500.0] > s[250.0] and s[500.0] > s[1000.0] and s[500.0] > s_nominal
    record(9, ok, f"sharpness at 250/500/1000 mm = {s[250.0]:.3e}/{s[500.0]:.3e}/{s[1000.0]:.3e}; "
                  f"calibrated {s[500.0]:.3e} > nominal grid {s_nominal:.3e}")


def _error_cases(tmp_path, obs_doc, cal_doc):
    def edit(doc, fn):
        doc = json.loads(json.dumps(doc))
        fn(doc)
        return doc

    n_vp = obs_doc["n_viewpoints"]
    return [
        ("observation viewpoint index = N", read_observations, ValidationError,
         edit(obs_doc, lambda d: d["records"][0].__setitem__(0, n_vp))),
        ("observation frame index out of range", read_observations, ValidationError,
         edit(obs_doc, lambda d: d["records"][0].__setitem__(1, -1))),
        ("observation point index beyond board", read_observations, ValidationError,
         edit(obs_doc, lambda d: d["records"][0].__setitem__(2, 10 ** 6))),
        ("duplicate (viewpoint, frame, point)", read_observations, ValidationError,
         edit(obs_doc, lambda d: d["records"].append(list(d["records"][0])))),
        ("schema: record arity", read_observations, ParseError,
         edit(obs_doc, lambda d: d["records"][0].pop())),
        ("schema: missing field", read_observations, ParseError, edit(obs_doc, lambda d: d.pop("n_frames"))),
        ("schema: wrong type", read_observations, ParseError, edit(obs_doc, lambda d: d.update(n_frames=1.5))),
        ("duplicate JSON key", read_observations, ValidationError,
         '{"format": "lfcal-observations", "format": "lfcal-observations"}'),
        ("malformed JSON (line context)", read_observations, ParseError, '{\n"format": }'),
        ("calibration gauge violation", read_calibration, ValidationError,
         edit(cal_doc, lambda d: d["viewpoints"][0].update(rotation=[0.0, 0.0, 1e-3]))),
        ("calibration intrinsics arity", read_calibration, ParseError,
         edit(cal_doc, lambda d: d["viewpoints"][1]["intrinsics"].pop())),
        ("calibration non-positive focal length", read_calibration, ValidationError,
         edit(cal_doc, lambda d: d["viewpoints"][1]["intrinsics"].__setitem__(0, 0.0))),
    ]


def test_criterion_10_file_formats(tmp_path, small_noisy):
    _, obs = small_noisy
    calib, _ = optimize(run_closed_form(obs), obs, OptimizeOptions(max_iterations=5))
    obs_path, cal_path = tmp_path / "obs.json", tmp_path / "cal.json"
    write_observations(obs, obs_path)
    write_calibration(calib, cal_path)
    obs_back, cal_back = read_observations(obs_path), read_calibration(cal_path)

    def rel(a, b):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))

    worst = rel(obs_back.pixels, obs.pixels)
    a, b = calib.to_arrays(), cal_back.to_arrays()
    nonzero = {k: np.abs(a[k]) > 0 for k in a}
    worst = max([worst] + [rel(b[k][nonzero[k]], a[k][nonzero[k]]) for k in a])
    worst = max(worst, max(np.abs(p.rotation - q.rotation).max()
                           for p, q in zip(calib.world_poses + calib.relative_poses,
                                           cal_back.world_poses + cal_back.relative_poses)))

    obs_doc, cal_doc = json.loads(obs_path.read_text()), json.loads(cal_path.read_text())
    reached = []
    for name, reader, exc, doc in _error_cases(tmp_path, obs_doc, cal_doc):
        path = tmp_path / "case.json"
        path.write_text(doc if isinstance(doc, str) else json.dumps(doc), encoding="utf-8")
        try:
            reader(path)
        except exc:
            reached.append(name)
    missing_doc = json.loads(json.dumps(cal_doc))
    del missing_doc["viewpoints"][1]["distortion"]
    path = tmp_path / "nodist.json"
    path.write_text(json.dumps(missing_doc))
    warned = read_calibration(path).warnings
    n_cases = len(_error_cases(tmp_path, obs_doc, cal_doc))
    ok = worst <= 1e-12 and len(reached) == n_cases and len(warned) == 1
    record(10, ok, f"round-trip max relative deviation {worst:.1e} (<=1e-12); {len(reached)}/{n_cases} "
                   f"declared error paths triggered; missing distortion warns")
