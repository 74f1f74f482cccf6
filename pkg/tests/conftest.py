"""Shared instance generators and the acceptance report hook.

The generators here build noise-free calibration instances directly from a
known similarity, independently of the simulation module, so solver tests
do not share code with the data they are checked against.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from uscalib import Acquisition2D, Acquisition3D, Line3, Similarity, similarity_errors

ACCEPTANCE_LINES = []


def random_similarity(rng, scale=0.24) -> Similarity:
    R = Rotation.random(random_state=rng).as_matrix()
    return Similarity.from_rotation(R, rng.uniform(-150, 150, 3), scale)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def make_3d(rng, A, n):
    """``n`` exact line-line acquisitions; US lines cross a 500-unit cube."""
    out = []
    for _ in range(n):
        c = rng.uniform(-250, 250, 3) + np.array([0.0, 300.0, 0.0])
        d = unit(rng.normal(size=3))
        X = np.array([c - rng.uniform(20, 80) * d, c + rng.uniform(20, 80) * d])
        P = A.apply(X)
        u = unit(P[1] - P[0])
        out.append(Acquisition3D(Line3(P[0] - 120 * u, P[0] + 280 * u), X))
    return out


def make_2d(rng, A, n):
    """``n`` exact point-line acquisitions on the image plane ``z = 0``."""
    out = []
    for _ in range(n):
        x = rng.uniform(-250, 250, 2) + np.array([0.0, 300.0])
        P = A.apply([x[0], x[1], 0.0])
        d = unit(rng.normal(size=3))
        out.append(Acquisition2D(Line3(P - rng.uniform(50, 200) * d, P + rng.uniform(50, 200) * d), x))
    return out


def best_errors(candidates, A):
    """Errors of the candidate closest to ``A`` (rotation rad, translation mm, scale)."""
    if isinstance(candidates, Similarity):
        candidates = [candidates]
    errs = [similarity_errors(c, A) for c in candidates]
    return min(errs, key=lambda e: e[0] / 1e-6 + e[1] / 1e-5 + e[2] / 1e-8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def full_scale_run():
    """Full-size simulation shared by the acceptance and trend tests."""
    import time

    from uscalib.sim import SimConfig, run_experiment

    cfg = SimConfig()
    t0 = time.perf_counter()
    reports = run_experiment(cfg)
    return cfg, reports, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
