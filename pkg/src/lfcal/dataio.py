"""JSON file formats for observations and calibration results.

Both formats are UTF-8 JSON documents. Floats are written with ``repr``
precision, so values survive a write/read cycle bit-for-bit. See
``docs/formats.md`` for the grammar.
"""

from __future__ import annotations

import json
import logging
import os

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import Distortion, Intrinsics, RigidTransform, axis_angle_to_matrix
from .model import BoardSpec, CalibrationResult, ObservationSet, OptimizeReport, TerminationReason

log = logging.getLogger(__name__)

OBSERVATIONS_FORMAT = "lfcal-observations"
CALIBRATION_FORMAT = "lfcal-calibration"
SCHEMA_VERSION = 1


def _reject_duplicate_keys(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ValidationError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _load(path, expected_format):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, context=f"{path}:{exc.lineno}:{exc.colno}") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 ({exc.reason})", context=str(path)) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", context=str(path))
    if doc.get("format") != expected_format:
        raise ParseError(f"expected format {expected_format!r}, got {doc.get('format')!r}", context=f"{path}: format")
    if doc.get("version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported version {doc.get('version')!r}", context=f"{path}: version")
    return doc


def _dump(doc, path):
    """Write atomically so a failure never leaves a partial file behind."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _field(doc, key, kind, where):
    if key not in doc:
        raise ParseError(f"missing field {key!r}", context=where)
    value = doc[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ParseError(f"field {key!r} must be an integer", context=where)
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ParseError(f"field {key!r} must be a number", context=where)
    if kind is list and not isinstance(value, list):
        raise ParseError(f"field {key!r} must be an array", context=where)
    if kind is dict and not isinstance(value, dict):
        raise ParseError(f"field {key!r} must be an object", context=where)
    return value


def _vector(value, n, where):
    if (not isinstance(value, list) or len(value) != n
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ParseError(f"expected an array of {n} numbers", context=where)
    return [float(v) for v in value]


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


def observations_to_dict(obs: ObservationSet) -> dict:
    if obs.board_spec is not None:
        board = {"rows": obs.board_spec.rows, "cols": obs.board_spec.cols, "spacing_mm": obs.board_spec.spacing}
    else:
        board = {"points": obs.board.tolist()}
    records = [[int(i), int(j), int(k), float(x), float(y)]
               for i, j, k, (x, y) in zip(obs.viewpoint, obs.frame, obs.point, obs.pixels)]
    return {
        "format": OBSERVATIONS_FORMAT,
        "version": SCHEMA_VERSION,
        "board": board,
        "n_viewpoints": obs.n_viewpoints,
        "n_frames": obs.n_frames,
        "records": records,
    }


def observations_from_dict(doc: dict, where="observations") -> ObservationSet:
    board_doc = _field(doc, "board", dict, where)
    if "points" in board_doc:
        spec = None
        pts = _field(board_doc, "points", list, f"{where}: board")
        board = np.array([_vector(p, 2, f"{where}: board.points[{n}]") for n, p in enumerate(pts)]).reshape(-1, 2)
    else:
        try:
            spec = BoardSpec(_field(board_doc, "rows", int, f"{where}: board"),
                             _field(board_doc, "cols", int, f"{where}: board"),
                             float(_field(board_doc, "spacing_mm", float, f"{where}: board")))
        except ParseError:
            raise
        except ValidationError as exc:
            raise ValidationError(f"{where}: board: {exc}") from None
        board = spec.points()
    n_vp = _field(doc, "n_viewpoints", int, where)
    n_fr = _field(doc, "n_frames", int, where)
    if n_vp < 1 or n_fr < 1:
        raise ValidationError(f"{where}: n_viewpoints and n_frames must be >= 1")
    records = _field(doc, "records", list, where)
    rows = np.empty((len(records), 5))
    for n, rec in enumerate(records):
        ctx = f"{where}: records[{n}]"
        if not isinstance(rec, list) or len(rec) != 5:
            raise ParseError("record must be [viewpoint, frame, point, x, y]", context=ctx)
        i, j, k, x, y = rec
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (i, j, k)):
            raise ParseError("indices must be integers", context=ctx)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (x, y)):
            raise ParseError("coordinates must be numbers", context=ctx)
        for name, idx, bound in (("viewpoint", i, n_vp), ("frame", j, n_fr), ("point", k, len(board))):
            if not 0 <= idx < bound:
                raise ValidationError(f"{ctx}: {name} index {idx} out of range [0, {bound})")
        rows[n] = (i, j, k, x, y)
    return ObservationSet.from_records(n_vp, n_fr, board, rows, board_spec=spec)


def write_observations(obs: ObservationSet, path):
    _dump(observations_to_dict(obs), path)


def read_observations(path) -> ObservationSet:
    return observations_from_dict(_load(path, OBSERVATIONS_FORMAT), where=str(path))


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def _pose_to_dict(pose: RigidTransform, exact_identity=False) -> dict:
    if exact_identity:
        return {"rotation": [0.0, 0.0, 0.0], "translation": [0.0, 0.0, 0.0]}
    return {"rotation": [float(v) for v in pose.axis_angle], "translation": [float(v) for v in pose.translation]}


def _pose_from_dict(doc, where) -> RigidTransform:
    if not isinstance(doc, dict):
        raise ParseError("pose must be an object", context=where)
    r = _vector(_field(doc, "rotation", list, where), 3, f"{where}.rotation")
    t = _vector(_field(doc, "translation", list, where), 3, f"{where}.translation")
    if not any(r):
        return RigidTransform(np.eye(3), t)
    return RigidTransform(axis_angle_to_matrix(r), t)


def calibration_to_dict(result: CalibrationResult) -> dict:
    viewpoints = []
    for i in range(result.n_viewpoints):
        pose = _pose_to_dict(result.relative_poses[i], exact_identity=(i == 0))
        viewpoints.append({
            "intrinsics": [float(v) for v in result.intrinsics[i].as_array()],
            "distortion": [float(v) for v in result.distortions[i].as_array()],
            **pose,
        })
    doc = {
        "format": CALIBRATION_FORMAT,
        "version": SCHEMA_VERSION,
        "viewpoints": viewpoints,
        "frames": [_pose_to_dict(p) for p in result.world_poses],
    }
    if result.report is not None:
        rep = result.report
        doc["report"] = {
            "initial_rms": float(rep.initial_rms),
            "final_rms": float(rep.final_rms),
            "per_viewpoint_rms": [float(v) for v in rep.per_viewpoint_rms],
            "per_viewpoint_rms_std": float(rep.per_viewpoint_rms_std),
            "iterations": int(rep.iterations),
            "termination_reason": TerminationReason(rep.termination_reason).value,
        }
    return doc


def calibration_from_dict(doc: dict, where="calibration") -> CalibrationResult:
    vps = _field(doc, "viewpoints", list, where)
    if not vps:
        raise ValidationError(f"{where}: no viewpoints")
    intr, dist, rel, warnings = [], [], [], []
    for i, vp in enumerate(vps):
        ctx = f"{where}: viewpoints[{i}]"
        if not isinstance(vp, dict):
            raise ParseError("viewpoint entry must be an object", context=ctx)
        try:
            intr.append(Intrinsics.from_array(_vector(_field(vp, "intrinsics", list, ctx), 5, f"{ctx}.intrinsics")))
        except ValidationError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ValidationError(f"{ctx}.intrinsics: {exc}") from None
        if "distortion" in vp:
            dist.append(Distortion.from_array(_vector(vp["distortion"], 4, f"{ctx}.distortion")))
        else:
            dist.append(Distortion())
            warnings.append(f"viewpoint {i}: distortion missing, assuming zero")
            log.warning("%s: distortion missing, assuming zero", ctx)
        pose = _pose_from_dict(vp, ctx)
        if i == 0 and (not np.array_equal(pose.rotation, np.eye(3)) or np.any(pose.translation)):
            raise ValidationError(f"{ctx}: gauge violation, viewpoint 0 relative pose must be exactly zero")
        rel.append(pose)
    frames = _field(doc, "frames", list, where)
    world = [_pose_from_dict(f, f"{where}: frames[{j}]") for j, f in enumerate(frames)]
    report = None
    if "report" in doc:
        rd = _field(doc, "report", dict, where)
        ctx = f"{where}: report"
        try:
            report = OptimizeReport(
                initial_rms=float(_field(rd, "initial_rms", float, ctx)),
                final_rms=float(_field(rd, "final_rms", float, ctx)),
                per_viewpoint_rms=_vector(_field(rd, "per_viewpoint_rms", list, ctx), len(vps),
                                          f"{ctx}.per_viewpoint_rms"),
                per_viewpoint_rms_std=float(_field(rd, "per_viewpoint_rms_std", float, ctx)),
                iterations=_field(rd, "iterations", int, ctx),
                termination_reason=TerminationReason(_field(rd, "termination_reason", str, ctx)),
            )
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ParseError(str(exc), context=ctx) from None
    return CalibrationResult(intr, dist, rel, world, report=report, warnings=tuple(warnings))


def write_calibration(result: CalibrationResult, path):
    _dump(calibration_to_dict(result), path)


def read_calibration(path) -> CalibrationResult:
    return calibration_from_dict(_load(path, CALIBRATION_FORMAT), where=str(path))
