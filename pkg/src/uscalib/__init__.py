"""Freehand ultrasound probe calibration from tracked needles.

Closed-form linear and minimal solvers for 3D (line-line) and 2D
(point-line) acquisitions, RANSAC, Levenberg-Marquardt refinement, a
synthetic experiment harness and JSON file formats.
"""

from .acquisition import Acquisition2D, Acquisition3D
from .calib2d import (
    ScanPlane,
    solve_linear_2d,
    solve_minimal_2d,
    solve_minimal_2d_general,
)
from .calib3d import SolutionSet, solve_linear_3d, solve_minimal_3d
from .errors import CalibrationError, InvariantViolation, ParseError
from .geometry import Line3, Similarity, rotation_error, similarity_errors
from .refine import refine
from .robust import RansacConfig, diagnose_degeneracy, get_solver, ransac, residuals
from .sim import SimConfig, calibrate, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Acquisition2D",
    "Acquisition3D",
    "CalibrationError",
    "InvariantViolation",
    "Line3",
    "ParseError",
    "RansacConfig",
    "ScanPlane",
    "SimConfig",
    "Similarity",
    "SolutionSet",
    "calibrate",
    "diagnose_degeneracy",
    "get_solver",
    "ransac",
    "refine",
    "residuals",
    "rotation_error",
    "run_experiment",
    "similarity_errors",
    "solve_linear_2d",
    "solve_linear_3d",
    "solve_minimal_2d",
    "solve_minimal_2d_general",
    "solve_minimal_3d",
]
