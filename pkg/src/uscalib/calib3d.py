"""3D US calibration from line-line correspondences.

Each tracked needle line is replaced by two orthogonal planes through it and
each imaged needle by two points on it. Every (plane, point) incidence is one
linear equation in the 13 entries of the homogeneous similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import polyengine as pe
from .acquisition import Acquisition2D, Acquisition3D, as_arrays, point_line_distances
from .errors import (
    CalibrationError,
    HomogeneousCollapse,
    InsufficientData,
    NoRealSolutions,
)
from .geometry import (
    Line3,
    Similarity,
    line_planes,
    planes_from_line,
    project_to_similarity_3d,
)

ORIGIN = np.zeros(3)


@dataclass
class SolutionSet:
    """Candidate similarities from a minimal solver.

    ``residuals`` is the mean orthogonal distance (mm) of each candidate over
    the input acquisitions. ``raw`` holds the unprojected homogeneous matrices
    (``h = 1``, original units) in the same order.
    """

    candidates: list
    residuals: list
    raw: list = field(default_factory=list)
    dropped_row: int | None = None

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def best(self) -> Similarity:
        return self.candidates[0]


@dataclass(frozen=True)
class Frame:
    """Similarity-preserving data normalization.

    Tracked points are shifted so the anchor is the origin and divided by
    their RMS distance to it; US points are divided by their RMS norm (no
    shift, so an embedding plane ``z = k`` keeps ``k`` proportional).
    """

    anchor: np.ndarray
    track_scale: float
    us_scale: float

    @classmethod
    def fit(cls, lines, us_points, anchor) -> Frame:
        anchor = np.asarray(anchor, dtype=float)
        P = np.concatenate([[L.p0, L.p1] for L in lines]) - anchor
        sp = float(np.sqrt(np.mean(np.sum(P**2, axis=1))))
        sx = float(np.sqrt(np.mean(np.sum(np.asarray(us_points) ** 2, axis=-1))))
        return cls(anchor, sp if sp > 0 else 1.0, sx if sx > 0 else 1.0)

    def line(self, L: Line3) -> Line3:
        return Line3((L.p0 - self.anchor) / self.track_scale, (L.p1 - self.anchor) / self.track_scale)

    def us(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) / self.us_scale

    def denormalize(self, A: Similarity) -> Similarity:
        return Similarity(
            A.quaternion,
            self.track_scale * A.translation + self.anchor,
            A.scale * self.track_scale / self.us_scale,
        )

    def normalize_matrix(self, A) -> np.ndarray:
        """Homogeneous matrix in normalized coordinates (inverse of :meth:`denormalize_matrix`)."""
        Tp = np.eye(4)
        Tp[:3, :3] /= self.track_scale
        Tp[:3, 3] = -self.anchor / self.track_scale
        Tx_inv = np.diag([self.us_scale] * 3 + [1.0])
        return Tp @ np.asarray(A, dtype=float) @ Tx_inv

    def denormalize_matrix(self, A) -> np.ndarray:
        Tp_inv = np.eye(4)
        Tp_inv[:3, :3] *= self.track_scale
        Tp_inv[:3, 3] = self.anchor
        Tx = np.diag([1 / self.us_scale] * 3 + [1.0])
        return Tp_inv @ A @ Tx


def incidence_row(plane, X) -> np.ndarray:
    """Coefficients of ``plane^T A (X, 1)`` over the 13-entry layout of ``A``."""
    Xh = np.append(np.asarray(X, dtype=float), 1.0)
    return np.append(np.kron(plane[:3], Xh), plane[3])


def constraint_rows_3d(acq: Acquisition3D, anchor=ORIGIN) -> np.ndarray:
    """Four rows, ordered (P, X), (P*, X), (P, X*), (P*, X*)."""
    pi, pi_s = planes_from_line(acq.tracked_line, anchor)
    X, Xs = acq.us_points
    return np.array([incidence_row(pi, X), incidence_row(pi_s, X), incidence_row(pi, Xs),
                     incidence_row(pi_s, Xs)])


def stacked_rows(planes, Xh) -> np.ndarray:
    """Incidence rows for planes ``(n, 2, 4)`` and homogeneous points ``(n, m, k)``.

    Rows are ordered by acquisition, then point, then plane, matching
    :func:`constraint_rows_3d` for ``k = 4``.
    """
    n, m, k = Xh.shape
    K = np.einsum("npa,nmb->nmpab", planes[..., :3], Xh).reshape(n, m, 2, 3 * k)
    h = np.broadcast_to(planes[:, None, :, 3:], (n, m, 2, 1))
    return np.concatenate([K, h], axis=-1).reshape(n * m * 2, 3 * k + 1)


def _normalized_arrays(acqs, anchor):
    """Frame plus normalized line origins, directions and US points."""
    p0, d, X = as_arrays(acqs)
    frame = Frame.fit([a.tracked_line for a in acqs], X, anchor)
    return frame, (p0 - frame.anchor) / frame.track_scale, d, X / frame.us_scale


def normalized_rows_3d(acqs, anchor=ORIGIN):
    """Frame and stacked ``4N x 13`` rows in normalized coordinates."""
    frame, p0, d, X = _normalized_arrays(acqs, anchor)
    Xh = np.concatenate([X, np.ones(X.shape[:2] + (1,))], axis=-1)
    return frame, stacked_rows(line_planes(p0, d, ORIGIN), Xh)


def solve_linear_3d(acqs, anchor=ORIGIN) -> Similarity:
    """Least-squares null vector of the stacked 4N x 13 system, projected to a similarity."""
    if len(acqs) < 3:
        raise InsufficientData("linear 3D solver needs at least 3 acquisitions")
    frame, M = normalized_rows_3d(acqs, anchor)
    v = pe.nullspace(M, 1).basis[0]
    if abs(v[12]) < pe.EPS_HOM:
        raise HomogeneousCollapse("homogeneous entry vanished")
    return frame.denormalize(project_to_similarity_3d(pe.unvec_affine(v / v[12])))


def minimal_candidates(rows7) -> list[np.ndarray]:
    """Homogeneous matrices (``h = 1``, proper orientation) solving 7 rows + similarity.

    Shared by the 3D solver and the general 2D route.
    """
    basis = pe.nullspace(rows7, 6, unvec=pe.unvec_affine)
    sys = pe.quadratic_constraints_3d(basis)
    out = []
    for w in pe.solve_quadratic_3d(sys):
        A = basis.combine(w)
        if abs(A[3, 3]) < pe.EPS_HOM * np.linalg.norm(A):
            continue
        A = A / A[3, 3]
        # the quadratics admit mirror images; those are not similarities
        if np.linalg.det(A[:3, :3]) <= 0:
            continue
        out.append(A)
    return out


def _finish(raws, acqs, frame, to_similarity, dropped_row, order_key=None) -> SolutionSet:
    items = []
    for A in raws:
        try:
            S = frame.denormalize(to_similarity(A))
        except (CalibrationError, ValueError):  # projection of a degenerate candidate
            continue
        res = float(np.mean(point_line_distances(S, acqs)))
        key = order_key(A) if order_key else res
        items.append((key, S, res, A))
    if not items:
        raise NoRealSolutions("no valid similarity among the candidates")
    items.sort(key=lambda it: it[0])
    return SolutionSet(
        [it[1] for it in items],
        [it[2] for it in items],
        [it[3] for it in items],
        dropped_row,
    )


def solve_minimal_3d(acqs, anchor=ORIGIN, drop_row: int = 7) -> SolutionSet:
    """Minimal solver from exactly two line-line correspondences (at most 8 candidates).

    Of the 8 incidence rows, ``drop_row`` (default: the (P*, X*) row of the
    second acquisition) is discarded. Candidates are sorted by mean
    orthogonal distance over both acquisitions.
    """
    if len(acqs) != 2:
        raise InsufficientData("minimal 3D solver takes exactly 2 acquisitions")
    if any(isinstance(a, Acquisition2D) for a in acqs):
        raise TypeError("expected Acquisition3D")
    frame, M = normalized_rows_3d(acqs, anchor)
    rows7 = np.delete(M, drop_row, axis=0)
    raws = minimal_candidates(rows7)
    out = _finish(raws, acqs, frame, project_to_similarity_3d, drop_row)
    out.raw = [frame.denormalize_matrix(A) for A in out.raw]
    return out


def linear_rank(acqs, anchor=ORIGIN) -> int:
    """Numerical rank of the stacked normalized 3D system (diagnostics)."""
    _, M = normalized_rows_3d(acqs, anchor)
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv > pe.RANK_TOL * sv[0]))


__all__ = [
    "Acquisition3D",
    "Frame",
    "SolutionSet",
    "constraint_rows_3d",
    "incidence_row",
    "minimal_candidates",
    "normalized_rows_3d",
    "solve_linear_3d",
    "solve_minimal_3d",
]
