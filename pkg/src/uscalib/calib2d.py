"""2D US calibration from point-line correspondences.

The image plane is ``z = 0`` in US coordinates, so the third column of the
scaled rotation never enters the incidence equations. The reduced unknown is
``[[c1, c2, t], [0, 0, h]]`` (10 entries); the third column is rebuilt from
the cross product of the first two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import polyengine as pe
from .acquisition import Acquisition2D
from .calib3d import (
    ORIGIN,
    SolutionSet,
    _finish,
    _normalized_arrays,
    minimal_candidates,
    stacked_rows,
)
from .errors import HomogeneousCollapse, InsufficientData, SingularBlock, SingularC
from .geometry import (
    Similarity,
    line_planes,
    planes_from_line,
    project_to_similarity_3d,
)


@dataclass(frozen=True)
class ScanPlane:
    """Embedding plane ``z = k`` used by the general minimal route."""

    k: float = 1.0

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError("k must be non-negative")


def reduced_row(plane, x) -> np.ndarray:
    """Coefficients of ``plane^T Abar (x, y, 1)`` over the 10-entry layout."""
    xh = np.array([x[0], x[1], 1.0])
    return np.append(np.kron(plane[:3], xh), plane[3])


def constraint_rows_2d(acq: Acquisition2D, anchor=ORIGIN) -> np.ndarray:
    """Two rows, (P, X) then (P*, X)."""
    pi, pi_s = planes_from_line(acq.tracked_line, anchor)
    return np.array([reduced_row(pi, acq.us_point), reduced_row(pi_s, acq.us_point)])


def _normalized_planes(acqs, anchor):
    """Frame, planes ``(n, 2, 4)`` and image points ``(n, 2)``, all normalized."""
    frame, p0, d, X = _normalized_arrays(acqs, anchor)
    return frame, line_planes(p0, d, ORIGIN), X[:, 0, :2]


def _reduced_rows(planes, x) -> np.ndarray:
    xh = np.concatenate([x, np.ones((len(x), 1))], axis=1)
    return stacked_rows(planes, xh[:, None, :])


def project_reduced(Abar) -> Similarity:
    """Similarity from a reduced 4x3 estimate: QR of ``[c1 c2]`` with equal scales."""
    Abar = np.asarray(Abar, dtype=float)
    h = Abar[3, 2]
    if h == 0 or not np.isfinite(h):
        raise SingularBlock("homogeneous entry is zero")
    Abar = Abar / h
    Sbar = Abar[:3, :2]
    sv = np.linalg.svd(Sbar, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv[-1] <= 1e-10 * sv[0]:
        raise SingularBlock("[c1 c2] is rank deficient")
    Q, U = np.linalg.qr(Sbar)
    signs = np.where(np.diag(U) < 0, -1.0, 1.0)
    Q = Q * signs
    U = signs[:, None] * U
    R = np.column_stack([Q, np.cross(Q[:, 0], Q[:, 1])])
    return Similarity.from_rotation(R, Abar[:3, 2], float(np.mean(np.diag(U))))


def reduced_matrix(A: Similarity) -> np.ndarray:
    """The 4x3 reduced matrix of a similarity (inverse of :func:`project_reduced`)."""
    Abar = np.zeros((4, 3))
    Abar[:3, :2] = A.scaled_rotation[:, :2]
    Abar[:3, 2] = A.translation
    Abar[3, 2] = 1.0
    return Abar


def solve_linear_2d(acqs, anchor=ORIGIN) -> Similarity:
    """Null vector of the 2N x 10 reduced system, projected to a similarity."""
    if len(acqs) < 5:
        raise InsufficientData("linear 2D solver needs at least 5 acquisitions")
    frame, planes, x = _normalized_planes(acqs, anchor)
    M = _reduced_rows(planes, x)
    v = pe.nullspace(M, 1).basis[0]
    if abs(v[9]) < pe.EPS_HOM:
        raise HomogeneousCollapse("homogeneous entry vanished")
    return frame.denormalize(project_reduced(pe.unvec_reduced(v / v[9])))


def solve_minimal_2d(acqs, anchor=ORIGIN, drop_row: int = 7) -> SolutionSet:
    """Dedicated 4-point minimal solver (at most 4 candidates).

    Seven of the eight reduced rows give a 3-dimensional nullspace; the two
    similarity conditions on ``[c1 c2]`` are intersected as two conics.
    Candidates are ordered by their algebraic residual on all eight rows.
    """
    if len(acqs) != 4:
        raise InsufficientData("minimal 2D solver takes exactly 4 acquisitions")
    frame, planes, x = _normalized_planes(acqs, anchor)
    M8 = _reduced_rows(planes, x)
    M8 = M8 / np.linalg.norm(M8, axis=1, keepdims=True)
    basis = pe.nullspace(np.delete(M8, drop_row, axis=0), 3, unvec=pe.unvec_reduced)
    sys = pe.quadratic_constraints_2d(basis)
    raws = []
    for w in pe.solve_two_conics(sys):
        Abar = basis.combine(w)
        if abs(Abar[3, 2]) < pe.EPS_HOM * np.linalg.norm(Abar):
            continue
        raws.append(Abar / Abar[3, 2])

    def score(Abar):
        v = pe.vec_reduced(reduced_matrix(project_reduced(Abar)))
        return float(np.linalg.norm(M8 @ v) / np.linalg.norm(v))

    out = _finish(raws, acqs, frame, project_reduced, drop_row, order_key=score)
    us = np.diag([1 / frame.us_scale, 1 / frame.us_scale, 1.0])
    Tp_inv = np.eye(4)
    Tp_inv[:3, :3] *= frame.track_scale
    Tp_inv[:3, 3] = frame.anchor
    out.raw = [Tp_inv @ A @ us for A in out.raw]
    return out


def solve_minimal_2d_general(acqs, anchor=ORIGIN, plane: ScanPlane = ScanPlane(),
                             drop_row: int = 7) -> SolutionSet:
    """The 3D minimal solver applied to image points embedded on ``z = k``.

    ``k`` is in normalized US units. Candidates are returned for the ``z = 0``
    convention shared with the other 2D solvers, so the choice of ``k`` does
    not change the answer on exact data. ``k = 0`` makes the template block
    singular.
    """
    if len(acqs) != 4:
        raise InsufficientData("general minimal 2D solver takes exactly 4 acquisitions")
    frame, planes, x = _normalized_planes(acqs, anchor)
    k = plane.k
    Xh = np.column_stack([x, np.full(len(x), k), np.ones(len(x))])
    rows7 = np.delete(stacked_rows(planes, Xh[:, None, :]), drop_row, axis=0)
    # On z = 0 the third column of S drops out of every row. Its weights then
    # decouple from the rest and the template block C degenerates.
    c3 = rows7[:, [2, 6, 10]]
    if np.linalg.norm(c3) <= 1e-12 * np.linalg.norm(rows7):
        raise SingularC("embedding plane z = 0 leaves the third column unconstrained")
    shift = np.eye(4)
    shift[2, 3] = k  # (x, y, 0, 1) -> (x, y, k, 1)
    raws = [A @ shift for A in minimal_candidates(rows7)]
    out = _finish(raws, acqs, frame, project_to_similarity_3d, drop_row)
    out.raw = [frame.denormalize_matrix(A) for A in out.raw]
    return out
