"""RANSAC over the closed-form solvers, residuals, and degeneracy checks."""

from __future__ import annotations

import enum
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .acquisition import Acquisition2D, Acquisition3D, as_arrays, point_line_offsets
from .calib2d import (
    ScanPlane,
    solve_linear_2d,
    solve_minimal_2d,
    solve_minimal_2d_general,
)
from .calib3d import ORIGIN, solve_linear_3d, solve_minimal_3d
from .errors import CalibrationError, InsufficientData, NoModelFound
from .geometry import Similarity, line_point_distance

EPS_DIR = 1e-3  # rad
EPS_PT = 1.0  # mm
EPS_PL = 1.0  # mm


def residual_3d(A: Similarity, acq: Acquisition3D) -> float:
    """RMS of the two point-to-line distances of the mapped US points."""
    L = acq.tracked_line
    d = [line_point_distance(L, A.apply(X)) for X in acq.us_points]
    return math.sqrt((d[0] ** 2 + d[1] ** 2) / 2.0)


def residual_2d(A: Similarity, acq: Acquisition2D) -> float:
    return line_point_distance(acq.tracked_line, A.apply(acq.points3d[0]))


def residuals(A: Similarity, acqs) -> np.ndarray:
    """Per-acquisition residuals (vectorized :func:`residual_3d` / :func:`residual_2d`)."""
    p0, d, X = as_arrays(acqs)
    r = point_line_offsets(A, p0, d, X)
    return np.sqrt(np.mean(np.sum(r**2, axis=-1), axis=-1))


@dataclass(frozen=True)
class Solver:
    """A closed-form solver and the number of acquisitions it consumes."""

    name: str
    fn: Callable
    sample_size: int

    def __call__(self, acqs) -> list[Similarity]:
        out = self.fn(acqs)
        return [out] if isinstance(out, Similarity) else list(out)


def get_solver(mode: str, name: str, anchor=ORIGIN, plane: ScanPlane = ScanPlane()) -> Solver:
    """``mode`` in {2d, 3d}; ``name`` in {linear, minimal, minimal-general}."""
    table = {
        ("3d", "linear"): (lambda a: solve_linear_3d(a, anchor), 3),
        ("3d", "minimal"): (lambda a: solve_minimal_3d(a, anchor), 2),
        ("2d", "linear"): (lambda a: solve_linear_2d(a, anchor), 5),
        ("2d", "minimal"): (lambda a: solve_minimal_2d(a, anchor), 4),
        ("2d", "minimal-general"): (lambda a: solve_minimal_2d_general(a, anchor, plane), 4),
    }
    try:
        fn, m = table[(mode, name)]
    except KeyError:
        raise ValueError(f"no solver {name!r} for mode {mode!r}") from None
    return Solver(f"{name}{mode}", fn, m)


@dataclass
class RansacConfig:
    threshold: float = 5.0  # mm
    max_iterations: int = 500
    min_inliers: int | None = None  # defaults to the sample size
    confidence: float = 0.999
    rng_seed: int = 0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")


@dataclass
class RansacResult:
    model: Similarity
    inlier_mask: np.ndarray
    iterations_used: int
    mean_inlier_residual: float

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())


def _required_iterations(inlier_ratio: float, m: int, confidence: float) -> float:
    p = inlier_ratio**m
    if p >= 1.0:
        return 1
    if p <= 0.0:
        return math.inf
    return math.log(1 - confidence) / math.log(1 - p)


def ransac(acqs, solver: Solver, cfg: RansacConfig | None = None) -> RansacResult:
    """Best-consensus model over random minimal samples.

    Every candidate of every sample is scored. Ties in inlier count go to the
    lower mean inlier residual. The model is returned as solved, without a
    refit on the inliers.
    """
    cfg = cfg or RansacConfig()
    n, m = len(acqs), solver.sample_size
    if n < m:
        raise InsufficientData(f"{solver.name} needs {m} acquisitions, got {n}")
    min_inliers = m if cfg.min_inliers is None else cfg.min_inliers
    rng = np.random.default_rng(cfg.rng_seed)
    p0, d, X = as_arrays(acqs)

    best = None  # (count, mean residual, model, mask)
    needed = math.inf
    it = 0
    while it < cfg.max_iterations and it < needed:
        it += 1
        idx = np.sort(rng.choice(n, size=m, replace=False))
        try:
            cands = solver([acqs[i] for i in idx])
        except CalibrationError:
            continue
        for A in cands:
            r = np.sqrt(np.mean(np.sum(point_line_offsets(A, p0, d, X) ** 2, axis=-1), axis=-1))
            mask = r <= cfg.threshold
            count = int(mask.sum())
            mean_r = float(r[mask].mean()) if count else math.inf
            if best is None or count > best[0] or (count == best[0] and mean_r < best[1]):
                best = (count, mean_r, A, mask)
                needed = _required_iterations(count / n, m, cfg.confidence)
    if best is None or best[0] < min_inliers:
        raise NoModelFound(f"no model reached {min_inliers} inliers in {it} iterations")
    return RansacResult(best[2], best[3], it, best[1])


class Degeneracy(str, enum.Enum):
    PARALLEL = "ParallelLines"
    CONCURRENT = "ConcurrentLines"
    COPLANAR = "CoplanarLines"


def diagnose_degeneracy(acqs, eps_dir=EPS_DIR, eps_pt=EPS_PT, eps_pl=EPS_PL) -> set:
    """Flags for the tracked-line configurations that leave the similarity ambiguous.

    Parallel lines hide a translation, concurrent lines hide the scale, and
    coplanar lines hide a rotation (2D) or leave two 3D lines insufficient.
    """
    lines = [getattr(a, "tracked_line", a) for a in acqs]
    if len(lines) < 2:
        raise InsufficientData("need at least two lines")
    P0 = np.array([L.p0 for L in lines])
    D = np.array([L._dir for L in lines])
    flags = set()

    sin = np.linalg.norm(np.cross(D[:, None, :], D[None, :, :]), axis=-1)
    if np.all(np.arcsin(np.clip(sin, 0, 1)) < eps_dir):
        flags.add(Degeneracy.PARALLEL)

    proj = np.eye(3)[None] - D[:, :, None] * D[:, None, :]
    q = np.linalg.lstsq(proj.sum(0), np.einsum("nij,nj->i", proj, P0), rcond=None)[0]
    dist = np.linalg.norm(np.einsum("nij,nj->ni", proj, q - P0), axis=1)
    if np.all(dist <= eps_pt):
        flags.add(Degeneracy.CONCURRENT)

    pts = np.concatenate([P0, np.array([L.p1 for L in lines])])
    c = pts.mean(axis=0)
    normal = np.linalg.svd(pts - c)[2][-1]
    if np.all(np.abs((pts - c) @ normal) <= eps_pl):
        flags.add(Degeneracy.COPLANAR)
    return flags


__all__ = [
    "Degeneracy",
    "RansacConfig",
    "RansacResult",
    "Solver",
    "diagnose_degeneracy",
    "get_solver",
    "ransac",
    "residual_2d",
    "residual_3d",
    "residuals",
]
