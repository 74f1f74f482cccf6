import numpy as np
import pytest
from conftest import random_similarity, unit
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from uscalib.errors import DegenerateAnchor, DegenerateLine, SingularBlock
from uscalib.geometry import (
    Line3,
    Similarity,
    apply_similarity,
    is_similarity_matrix,
    line_point_distance,
    planes_from_line,
    project_to_similarity_3d,
    rotation_error,
)

seeds = st.integers(0, 2**32 - 1)


def test_apply_identity():
    assert np.array_equal(apply_similarity(Similarity.identity(), [1, 2, 3]), [1, 2, 3])


def test_apply_scale_and_translation():
    A = Similarity([1, 0, 0, 0], [1, 0, 0], 2.0)
    assert np.allclose(A.apply([1, 1, 1]), [3, 2, 2], atol=0)


def test_apply_pure_scaling():
    A = Similarity([1, 0, 0, 0], [0, 0, 0], 0.24)
    assert np.allclose(A.apply([100, 0, 0]), [24, 0, 0], rtol=1e-15)


@given(seeds)
def test_similarity_preserves_shape(seed):
    rng = np.random.default_rng(seed)
    A = random_similarity(rng, scale=rng.uniform(0.01, 10))
    X, Y = rng.normal(size=(2, 3)) * 100
    lhs = np.linalg.norm(A.apply(X) - A.apply(Y))
    assert lhs == pytest.approx(A.scale * np.linalg.norm(X - Y), rel=1e-9)


@given(seeds)
def test_similarity_invariants(seed):
    rng = np.random.default_rng(seed)
    A = Similarity(rng.normal(size=4), rng.normal(size=3), rng.uniform(0.1, 3))
    R = A.rotation
    assert abs(np.linalg.norm(A.quaternion) - 1) < 1e-12
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)


def test_similarity_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        Similarity([1, 0, 0, 0], [0, 0, 0], 0.0)
    with pytest.raises(ValueError):
        Similarity([1, 0, 0, 0], [0, 0, 0], -1.0)


def test_similarity_inverse_and_compose(rng):
    A = random_similarity(rng)
    I = A.compose(A.inverse())
    X = rng.normal(size=(5, 3)) * 50
    assert np.allclose(I.apply(X), X, atol=1e-9)


def test_line_rejects_coincident_points():
    with pytest.raises(DegenerateLine):
        Line3([1, 2, 3], [1, 2, 3 + 1e-7])


def test_line_direction_is_unit(rng):
    L = Line3(rng.normal(size=3), rng.normal(size=3) * 10)
    assert abs(np.linalg.norm(L.direction()) - 1) < 1e-12


def test_planes_from_line_axis_aligned():
    pi, pi_s = planes_from_line(Line3([1, 0, 0], [1, 1, 0]), [0, 0, 0])
    assert np.allclose(pi, [0, 0, 1, 0], atol=1e-15)
    assert np.allclose(pi_s, [1, 0, 0, -1], atol=1e-15)


def test_planes_from_line_anchor_on_line():
    with pytest.raises(DegenerateAnchor):
        planes_from_line(Line3([0, 0, 0], [0, 0, 1]), [0, 0, 5])


@given(seeds)
def test_planes_contain_line_and_are_orthogonal(seed):
    rng = np.random.default_rng(seed)
    p0, p1 = rng.normal(size=(2, 3)) * 100
    if np.linalg.norm(p1 - p0) < 1:
        return
    L = Line3(p0, p1)
    anchor = rng.normal(size=3) * 100
    if line_point_distance(L, anchor) < 1:
        return
    pi, pi_s = planes_from_line(L, anchor)
    for P in (pi, pi_s):
        assert abs(np.linalg.norm(P[:3]) - 1) < 1e-12
        for X in (p0, p1):
            assert abs(P[:3] @ X + P[3]) < 1e-10 * (1 + np.linalg.norm(X))
    assert abs(pi[:3] @ anchor + pi[3]) < 1e-10 * (1 + np.linalg.norm(anchor))
    assert abs(pi[:3] @ pi_s[:3]) < 1e-10


def test_distance_345():
    assert line_point_distance(Line3([0, 0, 0], [0, 0, 1]), [3, 4, 0]) == pytest.approx(5.0, abs=1e-15)


def test_distance_on_line(rng):
    L = Line3(rng.normal(size=3), rng.normal(size=3) + 5)
    assert line_point_distance(L, L.p0 + 3.7 * (L.p1 - L.p0)) < 1e-12


@given(seeds)
@settings(max_examples=30)
def test_distance_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    p0 = rng.normal(size=3) * 10
    d = unit(rng.normal(size=3))
    L = Line3(p0, p0 + d)
    P = rng.normal(size=3) * 10
    # coarse grid, then a fine grid around its minimum
    t = np.linspace(-100, 100, 20001)
    t0 = t[np.argmin(np.linalg.norm(P - (p0 + t[:, None] * d), axis=1))]
    t = np.linspace(t0 - 0.02, t0 + 0.02, 40001)
    grid = np.min(np.linalg.norm(P - (p0 + t[:, None] * d), axis=1))
    assert line_point_distance(L, P) == pytest.approx(grid, abs=1e-6)


@given(seeds)
def test_distance_reparameterization_invariant(seed):
    rng = np.random.default_rng(seed)
    p0, p1, P = rng.normal(size=(3, 3)) * 10
    if np.linalg.norm(p1 - p0) < 1e-3:
        return
    d0 = line_point_distance(Line3(p0, p1), P)
    assert line_point_distance(Line3(p1, p0), P) == pytest.approx(d0, rel=1e-9, abs=1e-12)
    assert line_point_distance(Line3(p0, p0 + 7.5 * (p1 - p0)), P) == pytest.approx(d0, rel=1e-9, abs=1e-12)


def test_projection_idempotent(rng):
    for _ in range(50):
        A = random_similarity(rng)
        B = project_to_similarity_3d(A.to_homogeneous() * 3.7)
        rot, tr, sc = (rotation_error(A.rotation, B.rotation), np.linalg.norm(A.translation - B.translation),
                       abs(A.scale - B.scale))
        assert rot < 1e-10 and tr < 1e-10 and sc < 1e-10


def test_projection_diagonal_block():
    M = np.eye(4)
    M[:3, :3] = np.diag([1.1, 0.9, 1.0])
    B = project_to_similarity_3d(M)
    assert B.scale == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(B.rotation, np.eye(3), atol=1e-15)


@given(seeds)
def test_projection_of_noisy_matrix_is_similarity(seed):
    rng = np.random.default_rng(seed)
    M = random_similarity(rng).to_homogeneous()
    M[:3] += 0.01 * rng.normal(size=(3, 4))
    B = project_to_similarity_3d(M)
    S = B.scaled_rotation
    assert np.abs(S.T @ S - B.scale**2 * np.eye(3)).max() < 1e-10 * B.scale**2
    assert np.abs(S @ S.T - B.scale**2 * np.eye(3)).max() < 1e-10 * B.scale**2
    assert is_similarity_matrix(B.to_homogeneous())


def test_projection_fixes_reflection():
    M = np.diag([1.0, 1.0, -1.0, 1.0])
    B = project_to_similarity_3d(M)
    assert np.linalg.det(B.rotation) == pytest.approx(1.0)
    assert B.scale > 0


def test_projection_singular_block():
    M = np.eye(4)
    M[2, 2] = 0
    with pytest.raises(SingularBlock):
        project_to_similarity_3d(M)


def test_rotation_error_zero(rng):
    R = Rotation.random(random_state=rng).as_matrix()
    assert rotation_error(R, R) < 1e-7


def test_rotation_error_quarter_turn():
    Rz = Rotation.from_rotvec([0, 0, np.pi / 2]).as_matrix()
    assert rotation_error(Rz, np.eye(3)) == pytest.approx(np.pi / 2, abs=1e-15)


@given(seeds)
def test_rotation_error_matches_quaternion_angle(seed):
    rng = np.random.default_rng(seed)
    Ra, Rb = Rotation.random(2, random_state=rng)
    # angle from the quaternion of the residual rotation, folded into [0, pi]
    q = (Ra.inv() * Rb).as_quat()
    angle = 2 * np.arctan2(np.linalg.norm(q[:3]), abs(q[3]))
    assert rotation_error(Ra.as_matrix(), Rb.as_matrix()) == pytest.approx(angle, abs=1e-10)
