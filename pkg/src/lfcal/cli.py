"""Command-line entry point: ``lfcal {calibrate,simulate,sweep,rectify,refocus}``.

Exit codes: 0 success, 2 usage error, 3 data/validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .dataio import read_calibration, read_observations, write_calibration, write_observations
from .errors import BehindCameraError, ConfigurationError, NumericalError, ValidationError
from .geometry import Distortion, Intrinsics
from .imaging import read_pnm, write_pnm
from .lightfield import LightField, rectify, refocus, sharpness
from .model import BoardSpec
from .optimizer import OptimizeOptions, optimize
from .simulator import NOISE_STREAM, PRESETS, SimConfig, add_noise, generate_scene, run_noise_sweep
from .zhang import run_closed_form

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "LFCAL_THREADS"

log = logging.getLogger("lfcal")


class UsageError(Exception):
    pass


def _load_config(spec) -> SimConfig:
    """A preset name or a JSON file of SimConfig field overrides on the default preset."""
    if spec in PRESETS:
        return PRESETS[spec]
    try:
        with open(spec, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"unknown preset or missing config file: {spec}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{spec}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{spec}: config must be a JSON object")
    base = PRESETS[raw.pop("preset", "desk")]
    known = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"{spec}: unknown config keys {sorted(unknown)}")
    if "intrinsics" in raw:
        raw["intrinsics"] = Intrinsics(*raw["intrinsics"])
    if "distortion" in raw:
        raw["distortion"] = Distortion(*raw["distortion"])
    if "board" in raw:
        raw["board"] = BoardSpec(*raw["board"])
    for key in ("grid", "resolution", "distance_range"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return dataclasses.replace(base, **raw)
    except TypeError as exc:
        raise ConfigurationError(f"{spec}: {exc}") from None


def _options(args) -> OptimizeOptions:
    return OptimizeOptions(
        refine_intrinsics=not args.no_intrinsics,
        refine_distortion=not args.no_distortion,
        fix_skew=args.fix_skew,
        max_iterations=args.max_iters,
        cost_rel_tol=args.tol,
    )


def cmd_calibrate(args) -> int:
    obs = read_observations(args.observations)
    opts = _options(args)
    init = run_closed_form(obs, fix_skew=opts.fix_skew)
    result, report = optimize(init, obs, opts)
    write_calibration(result, args.output)
    print(f"viewpoints: {obs.n_viewpoints}  frames: {obs.n_frames}  observations: {len(obs)}")
    print(f"initial RMS: {report.initial_rms:.6g} px")
    print(f"final RMS:   {report.final_rms:.6g} px")
    print(f"iterations:  {report.iterations} ({report.termination_reason.value})")
    print("viewpoint  rms_px")
    for i, e in enumerate(report.per_viewpoint_rms):
        print(f"{i:9d}  {e:.6g}")
    print(f"per-viewpoint RMS std: {report.per_viewpoint_rms_std:.6g} px")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    truth, obs = generate_scene(cfg, args.seed)
    sigma = cfg.noise_sigma if args.sigma is None else args.sigma
    if sigma < 0:
        raise UsageError("--sigma must be >= 0")
    obs = add_noise(obs, sigma, [args.seed, NOISE_STREAM])
    write_observations(obs, args.output)
    if args.truth:
        write_calibration(truth, args.truth)
    print(f"wrote {len(obs)} observations ({obs.n_viewpoints} viewpoints x {obs.n_frames} frames)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    try:
        sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --sigmas list: {args.sigmas!r}") from None
    if not sigmas or any(s < 0 for s in sigmas):
        raise UsageError("--sigmas needs one or more non-negative values")
    cfg = dataclasses.replace(cfg, seed=args.seed)
    jobs = args.jobs if args.jobs is not None else int(os.environ.get(THREADS_ENV, "1") or 1)
    report = run_noise_sweep(cfg, sigmas, args.trials, workers=max(jobs, 1))
    report.write_csv(args.output)
    failed = sum(report.n_failed.values())
    print(f"wrote {len(report.rows)} rows to {args.output}; failed method-trials: {failed}")
    if all(n == args.trials for n in report.n_failed.values()):
        return EXIT_NUMERIC
    return EXIT_OK


def _light_field(args) -> LightField:
    calib = read_calibration(args.calibration)
    if len(args.images) != calib.n_viewpoints:
        raise ValidationError(f"{len(args.images)} images given for {calib.n_viewpoints} viewpoints")
    images = [read_pnm(p) for p in args.images]
    return LightField.from_calibration(images, calib)


def cmd_rectify(args) -> int:
    lf = _light_field(args)
    if len(args.output) != lf.n_viewpoints:
        raise UsageError(f"need {lf.n_viewpoints} output paths, got {len(args.output)}")
    out = rectify(lf, lf.intrinsics[0])
    for img, path in zip(out.images, args.output):
        write_pnm(img, path)
    print(f"rectified {lf.n_viewpoints} views")
    return EXIT_OK


def cmd_refocus(args) -> int:
    if not args.depth > 0:
        raise UsageError("--depth must be positive")
    lf = _light_field(args)
    img = refocus(lf, args.depth)
    write_pnm(img, args.output)
    print(f"sharpness: {sharpness(img):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfcal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="closed form + global LM from an observation file")
    c.add_argument("observations")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--no-intrinsics", action="store_true", help="keep closed-form intrinsics fixed")
    c.add_argument("--no-distortion", action="store_true", help="keep distortion at zero")
    c.add_argument("--fix-skew", action="store_true", help="pin skew to 0")
    c.add_argument("--max-iters", type=int, default=100)
    c.add_argument("--tol", type=float, default=1e-12, help="relative cost-change tolerance")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="write a synthetic observation file")
    s.add_argument("--config", default="desk", help=f"preset ({', '.join(PRESETS)}) or JSON file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float, default=None, help="noise level in pixels (default: config)")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--truth", help="also write the ground-truth calibration here")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="noise sweep comparing the three methods; CSV out")
    w.add_argument("--config", default="desk")
    w.add_argument("--sigmas", default="0.2,0.4,0.6,0.8,1.0,1.2,1.4,1.6,1.8")
    w.add_argument("--trials", type=int, default=20)
    w.add_argument("--extended", action="store_true", help="100 trials per level")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--jobs", type=int, default=None, help=f"worker processes (default: ${THREADS_ENV} or 1)")
    w.add_argument("-o", "--output", required=True)
    w.set_defaults(func=cmd_sweep)

    for name, func, help_ in (("rectify", cmd_rectify, "rectify views to a common ideal camera"),
                              ("refocus", cmd_refocus, "synthetic-aperture refocus at a depth")):
        r = sub.add_parser(name, help=help_)
        r.add_argument("calibration")
        r.add_argument("images", nargs="+", help="one PGM/PPM per viewpoint, in viewpoint order")
        if name == "refocus":
            r.add_argument("--depth", type=float, required=True, help="focal plane depth in mm")
            r.add_argument("-o", "--output", required=True)
        else:
            r.add_argument("-o", "--output", nargs="+", required=True)
        r.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "extended", False):
        args.trials = 100
    if getattr(args, "trials", 1) < 1:
        parser.error("--trials must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lfcal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ConfigurationError, OSError) as exc:
        print(f"lfcal: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, BehindCameraError) as exc:
        print(f"lfcal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
