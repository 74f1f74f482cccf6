"""Needle acquisitions and their array form.

A 3D acquisition pairs a tracked needle line (marker frame, mm) with two
points on the needle image in the US volume. A 2D acquisition pairs the line
with a single image point ``(x, y)``; it is embedded in 3D as ``(x, y, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation
from .geometry import EPS_LINE, Line3, Similarity


@dataclass(frozen=True, eq=False)
class Acquisition3D:
    tracked_line: Line3
    us_points: np.ndarray  # (2, 3)

    def __post_init__(self):
        X = np.asarray(self.us_points, dtype=float).reshape(2, 3)
        if not np.all(np.isfinite(X)):
            raise InvariantViolation("non-finite US point")
        if np.linalg.norm(X[1] - X[0]) <= EPS_LINE:
            raise InvariantViolation("US points coincide")
        object.__setattr__(self, "us_points", X)

    @property
    def points3d(self) -> np.ndarray:
        return self.us_points


@dataclass(frozen=True, eq=False)
class Acquisition2D:
    tracked_line: Line3
    us_point: np.ndarray  # (2,)

    def __post_init__(self):
        x = np.asarray(self.us_point, dtype=float).reshape(2)
        if not np.all(np.isfinite(x)):
            raise InvariantViolation("non-finite US point")
        object.__setattr__(self, "us_point", x)

    @property
    def points3d(self) -> np.ndarray:
        return np.array([[self.us_point[0], self.us_point[1], 0.0]])


def is_2d(acqs) -> bool:
    return isinstance(acqs[0], Acquisition2D)


def as_arrays(acqs):
    """Line origins ``(n, 3)``, unit directions ``(n, 3)``, US points ``(n, m, 3)``."""
    p0 = np.array([a.tracked_line.p0 for a in acqs])
    d = np.array([a.tracked_line._dir for a in acqs])
    X = np.array([a.points3d for a in acqs])
    return p0, d, X


def point_line_offsets(A: Similarity, p0, d, X) -> np.ndarray:
    """Perpendicular displacement from each line to each mapped point, ``(n, m, 3)``."""
    P = X @ A.scaled_rotation.T + A.translation
    v = P - p0[:, None, :]
    return v - np.sum(v * d[:, None, :], axis=-1, keepdims=True) * d[:, None, :]


def point_line_distances(A: Similarity, acqs) -> np.ndarray:
    """Orthogonal distances ``(n, m)`` of the mapped US points to the tracked lines."""
    p0, d, X = as_arrays(acqs)
    return np.linalg.norm(point_line_offsets(A, p0, d, X), axis=-1)
