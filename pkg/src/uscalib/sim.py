"""Synthetic calibration experiments.

A fixed probe images needle segments placed at random through its field of
view, a spherical sector with the apex at the US origin and the depth axis
along +y. The 2D image plane is ``z = 0``; 3D needle images are sampled on
two slices through the depth axis tilted by +/- ``slice_angle_deg``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .acquisition import Acquisition2D, Acquisition3D
from .errors import CalibrationError
from .geometry import Line3, Similarity, random_rotation, similarity_errors
from .refine import refine
from .robust import RansacConfig, get_solver, ransac

METHODS = {
    "linear3d": ("3d", "linear"),
    "minimal3d": ("3d", "minimal"),
    "linear2d": ("2d", "linear"),
    "minimal2d": ("2d", "minimal"),
    "minimal2d_general": ("2d", "minimal-general"),
}


@dataclass
class SimConfig:
    scale_gt: float = 0.24
    n_lines: int = 50
    segment_length_mm: float = 400.0
    noise_us_sigma: float = 1.0  # US units (pixels)
    noise_track_sigma_mm: float = 1.0
    trials_per_n: int = 100
    n_range_3d: tuple = (3, 10)
    n_range_2d: tuple = (5, 10)
    rng_seed: int = 0
    fov_radius_mm: float = 120.0
    fov_aperture_deg: float = 60.0
    slice_angle_deg: float = 15.0
    ransac_threshold_mm: float = 5.0
    ransac_max_iterations: int = 500
    refine: bool = True
    methods: tuple = tuple(METHODS)

    def __post_init__(self):
        self.n_range_3d = tuple(self.n_range_3d)
        self.n_range_2d = tuple(self.n_range_2d)
        self.methods = tuple(self.methods)
        if min(self.n_lines, self.trials_per_n) <= 0:
            raise ValueError("counts must be positive")
        if min(self.noise_us_sigma, self.noise_track_sigma_mm) < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not self.scale_gt > 0:
            raise ValueError("scale_gt must be positive")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_range_3d"] = list(self.n_range_3d)
        d["n_range_2d"] = list(self.n_range_2d)
        d["methods"] = list(self.methods)
        return d


@dataclass
class TrialReport:
    method: str
    n_used: int
    trial: int
    rot_err_rad: float
    trans_err_mm: float
    scale_err: float
    failed: bool = False


@dataclass
class Scene:
    A_gt: Similarity
    pool3d: list
    pool2d: list
    lines_us: list = field(default_factory=list)  # exact (center, direction) in US units

    def __iter__(self):
        return iter((self.A_gt, self.pool3d, self.pool2d))


def _in_fov(X, radius, half_aperture) -> bool:
    r = np.linalg.norm(X)
    return 0 < r <= radius and X[1] / r >= math.cos(half_aperture)


def _slice_normal(phi):
    return np.array([math.sin(phi), 0.0, math.cos(phi)])


def _slice_axes(phi):
    """In-plane unit axes of the slice with normal :func:`_slice_normal`."""
    return np.array([0.0, 1.0, 0.0]), np.array([math.cos(phi), 0.0, -math.sin(phi)])


def random_ground_truth(cfg: SimConfig, rng) -> Similarity:
    """Random pose with the marker origin behind the probe apex."""
    R = random_rotation(rng)
    marker = np.array([rng.uniform(-40, 40), rng.uniform(-100, -50), rng.uniform(-40, 40)])
    return Similarity.from_rotation(R, -R @ marker, cfg.scale_gt)


def sample_line(cfg: SimConfig, A: Similarity, rng, min_sep=20.0, min_anchor_mm=20.0):
    """One needle crossing the image plane inside the fan and both slices inside the volume.

    Returns ``(center, direction, (X, X*))`` in US units, exact.
    """
    radius = cfg.fov_radius_mm / cfg.scale_gt
    half = math.radians(cfg.fov_aperture_deg) / 2
    phi = math.radians(cfg.slice_angle_deg)
    for _ in range(10000):
        r = radius * math.sqrt(rng.uniform(0.05, 0.9))
        th = rng.uniform(-0.9 * half, 0.9 * half)
        c = np.array([r * math.sin(th), r * math.cos(th), 0.0])
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        if abs(d[2]) < 0.2:
            continue
        pts = []
        for sgn in (1, -1):
            n = _slice_normal(sgn * phi)
            lam = -(n @ c) / (n @ d)
            pts.append(c + lam * d)
        if not all(_in_fov(p, radius, half) for p in pts):
            continue
        if np.linalg.norm(pts[0] - pts[1]) < min_sep:
            continue
        # tracked line must stay clear of the marker origin
        Pc, Pd = A.apply(c), A.rotation @ d
        if np.linalg.norm(np.cross(-Pc, Pd)) < min_anchor_mm:
            continue
        return c, d, (pts[0], pts[1])
    raise RuntimeError("could not place a needle in the field of view")


def generate_scene(cfg: SimConfig, rng: np.random.Generator) -> Scene:
    A = random_ground_truth(cfg, rng)
    phi = math.radians(cfg.slice_angle_deg)
    half_len = cfg.segment_length_mm / 2
    pool3d, pool2d, exact = [], [], []
    for _ in range(cfg.n_lines):
        c, d, (X, Xs) = sample_line(cfg, A, rng)
        exact.append((c, d))
        Pc, Pd = A.apply(c), A.rotation @ d
        ends = np.array([Pc - half_len * Pd, Pc + half_len * Pd])

        e3 = ends + cfg.noise_track_sigma_mm * rng.normal(size=(2, 3))
        us = []
        for sgn, p in ((1, X), (-1, Xs)):
            u, v = _slice_axes(sgn * phi)
            g = cfg.noise_us_sigma * rng.normal(size=2)
            us.append(p + g[0] * u + g[1] * v)
        pool3d.append(Acquisition3D(Line3(e3[0], e3[1]), np.array(us)))

        e2 = ends + cfg.noise_track_sigma_mm * rng.normal(size=(2, 3))
        x2 = c[:2] + cfg.noise_us_sigma * rng.normal(size=2)
        pool2d.append(Acquisition2D(Line3(e2[0], e2[1]), x2))
    return Scene(A, pool3d, pool2d, exact)


def calibrate(acqs, mode: str, solver_name: str, threshold=5.0, seed=0, max_iterations=500,
              min_inliers=None, do_refine=True):
    """RANSAC followed by refinement on the inliers. Returns ``(similarity, ransac_result)``.

    When fewer inliers than one minimal sample survive there is nothing to
    refine on and the RANSAC model is returned as is.
    """
    solver = get_solver(mode, solver_name)
    res = ransac(acqs, solver, RansacConfig(threshold=threshold, max_iterations=max_iterations,
                                            min_inliers=min_inliers, rng_seed=seed))
    A = res.model
    if do_refine:
        need = 2 if mode == "3d" else 4
        inl = [a for a, m in zip(acqs, res.inlier_mask) if m]
        if len(inl) >= need:
            A = refine(inl, A)
    return A, res


def _trial_seed(cfg, tag, n, trial):
    return np.random.SeedSequence([cfg.rng_seed, tag, n, trial])


def run_experiment(cfg: SimConfig, scene: Scene | None = None) -> list[TrialReport]:
    """Repeated calibration from ``N`` random acquisitions of the pool, per method.

    Deterministic given ``cfg.rng_seed``: the scene and every trial draw from
    streams derived from the seed, ``N`` and the trial index.
    """
    if scene is None:
        scene = generate_scene(cfg, np.random.default_rng(np.random.SeedSequence([cfg.rng_seed])))
    A_gt = scene.A_gt
    reports = []
    for mode, pool, n_range, tag in (("3d", scene.pool3d, cfg.n_range_3d, 3),
                                     ("2d", scene.pool2d, cfg.n_range_2d, 2)):
        methods = [m for m in cfg.methods if METHODS[m][0] == mode]
        if not methods:
            continue
        for n in range(n_range[0], n_range[1] + 1):
            for trial in range(cfg.trials_per_n):
                ss = _trial_seed(cfg, tag, n, trial)
                rng = np.random.default_rng(ss)
                idx = rng.choice(len(pool), size=n, replace=False)
                sample = [pool[i] for i in idx]
                ransac_seed = int(ss.generate_state(1)[0])
                for name in methods:
                    try:
                        A, _ = calibrate(sample, mode, METHODS[name][1], cfg.ransac_threshold_mm,
                                         ransac_seed, cfg.ransac_max_iterations, min_inliers=0,
                                         do_refine=cfg.refine)
                        errs = similarity_errors(A, A_gt)
                        reports.append(TrialReport(name, n, trial, *errs))
                    except CalibrationError:
                        reports.append(TrialReport(name, n, trial, math.nan, math.nan, math.nan, True))
    return reports


def medians(reports, method: str, n: int) -> np.ndarray:
    """Median (rotation, translation, scale) errors over non-failed trials."""
    E = np.array([(r.rot_err_rad, r.trans_err_mm, r.scale_err) for r in reports
                  if r.method == method and r.n_used == n and not r.failed])
    if len(E) == 0:
        return np.full(3, math.nan)
    return np.median(E, axis=0)


def pra(A: Similarity, us_point, tracked_point) -> float:
    """Distance (mm) between a calibrated US point and the tracker's measurement of it."""
    return float(np.linalg.norm(A.apply(np.asarray(us_point, dtype=float))
                                - np.asarray(tracked_point, dtype=float)))


def sample_phantom(cfg: SimConfig, A_gt: Similarity, n: int, rng):
    """Noisy phantom measurements ``(us_points, tracked_points)`` inside the 3D field of view."""
    radius = cfg.fov_radius_mm / cfg.scale_gt
    half = math.radians(cfg.fov_aperture_deg) / 2
    X = []
    while len(X) < n:
        p = rng.uniform(-radius, radius, size=3)
        if _in_fov(p, radius, half) and np.linalg.norm(p) > 0.2 * radius:
            X.append(p)
    X = np.array(X)
    P = A_gt.apply(X)
    Xm = X + cfg.noise_us_sigma * rng.normal(size=X.shape)
    Pm = P + cfg.noise_track_sigma_mm * rng.normal(size=P.shape)
    return Xm, Pm


def pra_noise_floor(cfg: SimConfig, A_gt: Similarity, n_samples=20000, seed=0) -> float:
    """Median PRA of the exact calibration under measurement noise alone (Monte Carlo)."""
    rng = np.random.default_rng(seed)
    Xm, Pm = sample_phantom(cfg, A_gt, n_samples, rng)
    return float(np.median(np.linalg.norm(A_gt.apply(Xm) - Pm, axis=1)))


def pra_experiment(cfg: SimConfig, method="minimal3d", n_acq=10, n_trials=20, n_phantom=10,
                   scene: Scene | None = None):
    """PRA over ``n_trials`` calibrations x ``n_phantom`` phantom scans.

    Returns ``(pra_values, noise_floor)``; failed calibrations contribute no values.
    """
    if scene is None:
        scene = generate_scene(cfg, np.random.default_rng(np.random.SeedSequence([cfg.rng_seed])))
    mode, solver_name = METHODS[method]
    pool = scene.pool3d if mode == "3d" else scene.pool2d
    values = []
    for trial in range(n_trials):
        ss = np.random.SeedSequence([cfg.rng_seed, 7, n_acq, trial])
        rng = np.random.default_rng(ss)
        sample = [pool[i] for i in rng.choice(len(pool), size=n_acq, replace=False)]
        try:
            A, _ = calibrate(sample, mode, solver_name, cfg.ransac_threshold_mm,
                             int(ss.generate_state(1)[0]), min_inliers=0)
        except CalibrationError:
            continue
        Xm, Pm = sample_phantom(cfg, scene.A_gt, n_phantom, rng)
        values += [pra(A, x, p) for x, p in zip(Xm, Pm)]
    return np.array(values), pra_noise_floor(cfg, scene.A_gt, seed=cfg.rng_seed)
