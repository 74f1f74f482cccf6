"""JSON file formats for acquisitions, calibrations and phantom scans.

Every file carries a ``format`` name and a ``version``. Needle endpoints are
recorded in the fixed tracker frame O together with the pose of the probe
marker, ``T_M_to_O``; :func:`ingest` maps them into the marker frame M.
Floats are written with ``repr`` (shortest round-trip form), so finite values
survive a write/read cycle bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import Acquisition2D, Acquisition3D
from .errors import CalibrationError, InvariantViolation, ParseError
from .geometry import EPS_LINE, Line3, Similarity, quat_to_matrix

VERSION = 1
ACQ_FORMAT = "uscalib-acquisitions"
CAL_FORMAT = "uscalib-calibration"
PHANTOM_FORMAT = "uscalib-phantom"
UNIT_TOL = 1e-9  # allowed deviation of a pose quaternion from unit norm


@dataclass(frozen=True, eq=False)
class TrackingPose:
    """Rigid transform ``T_M_to_O``: ``P_O = R(q) P_M + t``."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
            raise ValueError("pose quaternion is not unit norm")
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> TrackingPose:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def to_marker(self, P) -> np.ndarray:
        """Map points from O into M (inverse transform)."""
        R = quat_to_matrix(self.quaternion)
        return (np.asarray(P, dtype=float) - self.translation) @ R

    def to_tracker(self, P) -> np.ndarray:
        R = quat_to_matrix(self.quaternion)
        return np.asarray(P, dtype=float) @ R.T + self.translation


@dataclass(eq=False)
class AcquisitionRecord:
    needle_O: np.ndarray  # (2, 3) endpoints in O, mm
    pose: TrackingPose
    us: np.ndarray  # (2, 3) for 3d, (2,) for 2d


@dataclass(eq=False)
class AcquisitionFile:
    probe_kind: str
    records: list = field(default_factory=list)
    version: int = VERSION


@dataclass(eq=False)
class PhantomRecord:
    us_point: np.ndarray  # (3,) or (2,) embedded at z = 0
    tracked_point_O: np.ndarray
    pose: TrackingPose


# ---------------------------------------------------------------------------
# low-level helpers


def _dumps(obj) -> str:
    try:
        return json.dumps(obj, indent=1, allow_nan=False) + "\n"
    except ValueError as e:
        raise InvariantViolation(f"cannot serialize non-finite value ({e})") from None


def _reject_constant(name):
    raise ValueError(f"non-finite literal {name}")


def _loads(text: str, source: str):
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ParseError(f"{source}: line {e.lineno} column {e.colno}: {e.msg}") from None
    except ValueError as e:
        raise ParseError(f"{source}: {e}") from None


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e.strerror}") from None


def _array(value, shape, what, record=None) -> np.ndarray:
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{what} is not numeric", record) from None
    if a.shape != shape:
        raise ParseError(f"{what} has shape {a.shape}, expected {shape}", record)
    if not np.all(np.isfinite(a)):
        raise InvariantViolation(f"{what} is not finite", record)
    return a


def _header(doc, fmt, source):
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top level must be an object")
    if doc.get("format") != fmt:
        raise ParseError(f"{source}: expected format {fmt!r}, got {doc.get('format')!r}")
    if doc.get("version") != VERSION:
        raise ParseError(f"{source}: unsupported version {doc.get('version')!r}")


def _pose_from(doc, record) -> TrackingPose:
    if not isinstance(doc, dict):
        raise ParseError("pose_M_to_O must be an object", record)
    q = _array(doc.get("quaternion"), (4,), "pose quaternion", record)
    t = _array(doc.get("translation"), (3,), "pose translation", record)
    try:
        return TrackingPose(q, t)
    except ValueError as e:
        raise InvariantViolation(str(e), record) from None


def _pose_to(pose: TrackingPose) -> dict:
    return {"quaternion": pose.quaternion.tolist(), "translation": pose.translation.tolist()}


def _records(doc, source):
    recs = doc.get("records")
    if not isinstance(recs, list):
        raise ParseError(f"{source}: records must be a list")
    if not recs:
        raise InvariantViolation(f"{source}: no records")
    for i, r in enumerate(recs):
        if not isinstance(r, dict):
            raise ParseError("record must be an object", i)
    return recs


# ---------------------------------------------------------------------------
# acquisitions


def parse_acquisitions(text: str, source: str = "<string>") -> AcquisitionFile:
    doc = _loads(text, source)
    _header(doc, ACQ_FORMAT, source)
    kind = doc.get("probe_kind")
    if kind not in ("2d", "3d"):
        raise ParseError(f"{source}: probe_kind must be '2d' or '3d', got {kind!r}")
    out = AcquisitionFile(kind)
    for i, r in enumerate(_records(doc, source)):
        ends = _array(r.get("needle_O"), (2, 3), "needle_O", i)
        if np.linalg.norm(ends[1] - ends[0]) <= EPS_LINE:
            raise InvariantViolation("needle endpoints coincide", i)
        pose = _pose_from(r.get("pose_M_to_O"), i)
        if kind == "3d":
            us = _array(r.get("us_points"), (2, 3), "us_points", i)
            if np.linalg.norm(us[1] - us[0]) <= EPS_LINE:
                raise InvariantViolation("US points coincide", i)
        else:
            us = _array(r.get("us_point"), (2,), "us_point", i)
        out.records.append(AcquisitionRecord(ends, pose, us))
    return out


def format_acquisitions(f: AcquisitionFile) -> str:
    key = "us_points" if f.probe_kind == "3d" else "us_point"
    recs = [{"needle_O": r.needle_O.tolist(), "pose_M_to_O": _pose_to(r.pose), key: r.us.tolist()}
            for r in f.records]
    return _dumps({
        "format": ACQ_FORMAT,
        "version": f.version,
        "probe_kind": f.probe_kind,
        "units": {"tracker": "mm", "us": "image units"},
        "records": recs,
    })


def load_acquisitions(path) -> AcquisitionFile:
    return parse_acquisitions(_read(path), str(path))


def save_acquisitions(f: AcquisitionFile, path) -> None:
    Path(path).write_text(format_acquisitions(f))


def ingest(f: AcquisitionFile) -> list:
    """Acquisitions with the needle mapped into the marker frame; US data unchanged."""
    out = []
    for i, r in enumerate(f.records):
        p = r.pose.to_marker(r.needle_O)
        try:
            L = Line3(p[0], p[1])
            acq = Acquisition3D(L, r.us) if f.probe_kind == "3d" else Acquisition2D(L, r.us)
        except (CalibrationError, ValueError) as e:
            raise InvariantViolation(str(e), i) from None
        out.append(acq)
    return out


def emit(acqs, poses=None) -> AcquisitionFile:
    """File whose :func:`ingest` reproduces ``acqs``; identity poses by default."""
    if not acqs:
        raise InvariantViolation("no acquisitions to write")
    kind = "2d" if isinstance(acqs[0], Acquisition2D) else "3d"
    poses = poses or [TrackingPose.identity()] * len(acqs)
    recs = []
    for a, pose in zip(acqs, poses):
        ends = pose.to_tracker(np.array([a.tracked_line.p0, a.tracked_line.p1]))
        us = a.us_point if kind == "2d" else a.us_points
        recs.append(AcquisitionRecord(ends, pose, np.array(us)))
    return AcquisitionFile(kind, recs)


# ---------------------------------------------------------------------------
# calibration results


def calibration_document(A: Similarity, mode: str, solver: str, inlier_mask, residuals_mm,
                         threshold_mm: float, seed: int, iterations: int) -> dict:
    r = np.asarray(residuals_mm, dtype=float)
    inl = r[np.asarray(inlier_mask, dtype=bool)]
    return {
        "format": CAL_FORMAT,
        "version": VERSION,
        "mode": mode,
        "solver": solver,
        "similarity": {
            "quaternion": A.quaternion.tolist(),
            "translation": A.translation.tolist(),
            "scale": A.scale,
        },
        "ransac": {"threshold_mm": float(threshold_mm), "seed": int(seed), "iterations": int(iterations)},
        "inlier_mask": [bool(m) for m in inlier_mask],
        "residuals_mm": r.tolist(),
        "residual_stats_mm": {
            "inlier_mean": float(inl.mean()) if len(inl) else math.nan,
            "inlier_rms": float(np.sqrt(np.mean(inl**2))) if len(inl) else math.nan,
            "all_median": float(np.median(r)),
            "all_max": float(r.max()),
        },
    }


def format_calibration(doc: dict) -> str:
    # NaN statistics (no inliers) are written as null
    stats = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
             for k, v in doc["residual_stats_mm"].items()}
    return _dumps({**doc, "residual_stats_mm": stats})


def parse_calibration(text: str, source: str = "<string>") -> Similarity:
    doc = _loads(text, source)
    _header(doc, CAL_FORMAT, source)
    sim = doc.get("similarity")
    if not isinstance(sim, dict):
        raise ParseError(f"{source}: similarity must be an object")
    q = _array(sim.get("quaternion"), (4,), "quaternion")
    t = _array(sim.get("translation"), (3,), "translation")
    s = _array(sim.get("scale"), (), "scale")
    try:
        return Similarity(q, t, float(s))
    except ValueError as e:
        raise InvariantViolation(f"{source}: {e}") from None


def load_calibration(path) -> Similarity:
    return parse_calibration(_read(path), str(path))


# ---------------------------------------------------------------------------
# phantom scans


def parse_phantom(text: str, source: str = "<string>") -> list[PhantomRecord]:
    """Records pairing a US point with the tracker's measurement of the same point."""
    doc = _loads(text, source)
    _header(doc, PHANTOM_FORMAT, source)
    out = []
    for i, r in enumerate(_records(doc, source)):
        u = r.get("us_point")
        x = _array(u, (2,) if isinstance(u, list) and len(u) == 2 else (3,), "us_point", i)
        if len(x) == 2:
            x = np.append(x, 0.0)
        p = _array(r.get("tracked_point_O"), (3,), "tracked_point_O", i)
        out.append(PhantomRecord(x, p, _pose_from(r.get("pose_M_to_O"), i)))
    return out


def format_phantom(records) -> str:
    return _dumps({
        "format": PHANTOM_FORMAT,
        "version": VERSION,
        "units": {"tracker": "mm", "us": "image units"},
        "records": [{"us_point": r.us_point.tolist(), "tracked_point_O": r.tracked_point_O.tolist(),
                     "pose_M_to_O": _pose_to(r.pose)} for r in records],
    })


def load_phantom(path) -> list[PhantomRecord]:
    return parse_phantom(_read(path), str(path))


__all__ = [
    "AcquisitionFile",
    "AcquisitionRecord",
    "PhantomRecord",
    "TrackingPose",
    "calibration_document",
    "emit",
    "format_acquisitions",
    "format_calibration",
    "format_phantom",
    "ingest",
    "load_acquisitions",
    "load_calibration",
    "load_phantom",
    "parse_acquisitions",
    "parse_calibration",
    "parse_phantom",
    "save_acquisitions",
]
