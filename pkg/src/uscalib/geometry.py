"""Points, lines, planes and similarity transforms.

Points are plain ``(3,)`` float arrays. Planes are ``(4,)`` arrays
``(nx, ny, nz, d)`` with a unit normal, so that a point ``P`` lies on the
plane iff ``n @ P + d == 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateAnchor, DegenerateLine, SingularBlock

EPS_LINE = 1e-6  # mm, minimum endpoint separation
EPS_ANCHOR = 1e-3  # mm, minimum anchor-to-line distance


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite point {v}")
    return v


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a quaternion ``(w, x, y, z)``; ``q`` need not be unit."""
    w, x, y, z = q
    n = w * w + x * x + y * y + z * z
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    ) / n


def matrix_to_quat(R) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0`` for a rotation matrix."""
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


@dataclass(frozen=True, eq=False)
class Similarity:
    """``P = scale * R @ X + translation`` with ``R`` stored as a unit quaternion."""

    quaternion: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0:
            raise ValueError("quaternion must be finite and nonzero")
        q = q / n
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", _vec3(self.translation))
        s = float(self.scale)
        if not (np.isfinite(s) and s > 0):
            raise ValueError(f"scale must be positive, got {s}")
        object.__setattr__(self, "scale", s)

    @classmethod
    def from_rotation(cls, R, translation, scale) -> Similarity:
        return cls(matrix_to_quat(R), translation, scale)

    @classmethod
    def identity(cls) -> Similarity:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), 1.0)

    @cached_property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    @property
    def scaled_rotation(self) -> np.ndarray:
        return self.scale * self.rotation

    def to_homogeneous(self) -> np.ndarray:
        A = np.eye(4)
        A[:3, :3] = self.scaled_rotation
        A[:3, 3] = self.translation
        return A

    def apply(self, X) -> np.ndarray:
        """Map one point ``(3,)`` or a stack of points ``(n, 3)``."""
        X = np.asarray(X, dtype=float)
        return X @ self.scaled_rotation.T + self.translation

    def compose(self, other: Similarity) -> Similarity:
        """``self`` after ``other``."""
        return Similarity.from_rotation(
            self.rotation @ other.rotation,
            self.apply(other.translation),
            self.scale * other.scale,
        )

    def inverse(self) -> Similarity:
        Rt = self.rotation.T
        return Similarity.from_rotation(Rt, -(Rt @ self.translation) / self.scale, 1.0 / self.scale)

    def __repr__(self):
        q = np.array2string(self.quaternion, precision=6)
        t = np.array2string(self.translation, precision=4)
        return f"Similarity(q={q}, t={t}, s={self.scale:.6g})"


def apply_similarity(A: Similarity, X) -> np.ndarray:
    return A.apply(X)


@dataclass(frozen=True, eq=False)
class Line3:
    p0: np.ndarray
    p1: np.ndarray
    _dir: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p0, p1 = _vec3(self.p0), _vec3(self.p1)
        v = p1 - p0
        n = np.linalg.norm(v)
        if n <= EPS_LINE:
            raise DegenerateLine(f"line endpoints closer than {EPS_LINE} mm")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "_dir", v / n)

    def direction(self) -> np.ndarray:
        return self._dir.copy()

    def transformed(self, A: Similarity) -> Line3:
        return Line3(A.apply(self.p0), A.apply(self.p1))


def line_point_distance(L: Line3, P) -> float:
    """Distance from ``P`` to the infinite line through ``L``."""
    return float(np.linalg.norm(np.cross(np.asarray(P, dtype=float) - L.p0, L._dir)))


def plane_from_normal_point(n, p) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    return np.append(n, -n @ np.asarray(p, dtype=float))


def planes_from_line(L: Line3, anchor) -> tuple[np.ndarray, np.ndarray]:
    """Two orthogonal planes whose intersection is ``L``.

    The first plane also contains ``anchor``; the second contains ``L`` and is
    orthogonal to the first. Raises :class:`DegenerateAnchor` when the anchor
    is within ``EPS_ANCHOR`` of the line, where the first plane is undefined.
    """
    P = line_planes(L.p0[None], L._dir[None], anchor)[0]
    return P[0], P[1]


def line_planes(p0, d, anchor) -> np.ndarray:
    """Vectorized :func:`planes_from_line` for origins ``p0`` and unit directions ``d``, ``(n, 2, 4)``."""
    anchor = _vec3(anchor)
    w = np.cross(d, anchor - p0)
    nw = np.linalg.norm(w, axis=1, keepdims=True)
    if np.any(nw <= EPS_ANCHOR):
        raise DegenerateAnchor("anchor lies on the tracked line")
    n1 = w / nw
    n2 = np.cross(d, n1)
    n2 /= np.linalg.norm(n2, axis=1, keepdims=True)
    N = np.stack([n1, n2], axis=1)
    return np.concatenate([N, -np.einsum("npi,ni->np", N, p0)[..., None]], axis=-1)


def project_to_similarity_3d(A_lin) -> Similarity:
    """Nearest-similarity projection of a 4x4 affine estimate via QR.

    The matrix is first divided by its homogeneous entry. The 3x3 block is
    factored as ``Q @ U``; the triangular factor is replaced by ``s * I`` with
    ``s`` the mean of its (sign-corrected) diagonal.
    """
    A = np.asarray(A_lin, dtype=float)
    if A.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    h = A[3, 3]
    if h == 0 or not np.isfinite(h):
        raise SingularBlock("homogeneous entry is zero")
    A = A / h
    S = A[:3, :3]
    sv = np.linalg.svd(S, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv[-1] <= 1e-10 * sv[0]:
        raise SingularBlock("3x3 block is rank deficient")
    Q, U = np.linalg.qr(S)
    signs = np.where(np.diag(U) < 0, -1.0, 1.0)
    Q = Q * signs
    U = signs[:, None] * U
    if np.linalg.det(Q) < 0:
        Q[:, 2] = -Q[:, 2]
    return Similarity.from_rotation(Q, A[:3, 3], float(np.mean(np.diag(U))))


def rotation_error(R, R_gt) -> float:
    """Angle in radians of the residual rotation ``R.T @ R_gt``.

    Same value as ``arccos((trace - 1) / 2)`` but computed with ``atan2`` so
    that angles near zero keep full precision.
    """
    M = np.asarray(R).T @ np.asarray(R_gt)
    c = (np.trace(M) - 1.0) / 2.0
    sn = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.arctan2(sn, c))


def similarity_errors(A: Similarity, A_gt: Similarity) -> tuple[float, float, float]:
    """(rotation angle, translation distance, absolute scale difference)."""
    return (
        rotation_error(A.rotation, A_gt.rotation),
        float(np.linalg.norm(A_gt.translation - A.translation)),
        abs(A_gt.scale - A.scale),
    )


def is_similarity_matrix(A, tol=1e-8) -> bool:
    S = np.asarray(A, dtype=float)[:3, :3]
    G = S.T @ S
    s2 = np.trace(G) / 3.0
    return s2 > 0 and np.linalg.norm(G - s2 * np.eye(3)) <= tol * s2 and np.linalg.det(S) > 0


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()
