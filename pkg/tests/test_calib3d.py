import numpy as np
import pytest
from conftest import best_errors, make_3d, random_similarity, unit

from uscalib import polyengine as pe
from uscalib.acquisition import Acquisition3D
from uscalib.calib3d import (
    constraint_rows_3d,
    linear_rank,
    solve_linear_3d,
    solve_minimal_3d,
)
from uscalib.errors import (
    DegenerateAnchor,
    EliminationFailure,
    InsufficientData,
    InvariantViolation,
    NoRealSolutions,
    RankDeficient,
)
from uscalib.geometry import Line3, Similarity, planes_from_line


def test_rows_vanish_at_ground_truth(rng):
    A = random_similarity(rng)
    v = pe.vec_affine(A.to_homogeneous())
    for acq in make_3d(rng, A, 10):
        rows = constraint_rows_3d(acq)
        assert rows.shape == (4, 13)
        assert np.abs(rows @ v).max() < 1e-10 * np.linalg.norm(rows) * np.linalg.norm(v)


def test_row_order():
    L = Line3([1, 0, 0], [1, 1, 0])
    X, Xs = np.array([2.0, 3.0, 4.0]), np.array([5.0, 6.0, 7.0])
    rows = constraint_rows_3d(Acquisition3D(L, [X, Xs]))
    pi, pi_s = planes_from_line(L, np.zeros(3))
    expected = [np.append(np.kron(P[:3], np.append(Y, 1)), P[3]) for Y in (X, Xs) for P in (pi, pi_s)]
    assert np.allclose(rows, expected, atol=0)


def test_point_on_plane_with_identity():
    # X on the plane z = 0 spanned by L and the origin
    L = Line3([1, 0, 0], [1, 1, 0])
    acq = Acquisition3D(L, [[4.0, -2.0, 0.0], [1.0, 5.0, 3.0]])
    v = pe.vec_affine(np.eye(4))
    assert constraint_rows_3d(acq)[0] @ v == 0.0


def test_rows_are_linear_in_the_plane():
    X = np.array([2.0, -1.0, 0.5])
    Xh = np.append(X, 1.0)
    plane = np.array([0.3, -0.2, 0.9, 4.0])
    row = np.append(np.kron(plane[:3], Xh), plane[3])
    row2 = np.append(np.kron(3 * plane[:3], Xh), 3 * plane[3])
    assert np.allclose(row2, 3 * row)


def test_anchor_on_line_propagates():
    acq = Acquisition3D(Line3([0, 0, 0], [0, 0, 1]), [[1, 0, 0], [2, 0, 0]])
    with pytest.raises(DegenerateAnchor):
        constraint_rows_3d(acq, [0, 0, 7])


def test_acquisition_rejects_coincident_points():
    with pytest.raises(InvariantViolation):
        Acquisition3D(Line3([0, 0, 0], [0, 0, 1]), [[1, 2, 3], [1, 2, 3]])


def test_linear_recovers_ground_truth(rng):
    for _ in range(50):
        A = random_similarity(rng)
        rot, tr, sc = best_errors(solve_linear_3d(make_3d(rng, A, 3)), A)
        assert rot < 1e-8 and tr < 1e-6 and sc < 1e-9


def test_linear_needs_three(rng):
    A = random_similarity(rng)
    with pytest.raises(InsufficientData):
        solve_linear_3d(make_3d(rng, A, 2))


def _from_us_lines(A, lines):
    out = []
    for c, d in lines:
        X = np.array([c - 30 * d, c + 50 * d])
        P = A.apply(X)
        out.append(Acquisition3D(Line3(P[0], 2 * P[1] - P[0]), X))
    return out


def test_linear_parallel_lines_rank_deficient(rng):
    A = random_similarity(rng)
    d = unit(rng.normal(size=3))
    acqs = _from_us_lines(A, [(rng.uniform(-200, 200, 3), d) for _ in range(5)])
    with pytest.raises(RankDeficient):
        solve_linear_3d(acqs)


def test_linear_concurrent_lines_rank_deficient(rng):
    A = random_similarity(rng)
    q = np.array([0.0, 250.0, 0.0])
    lines = []
    for _ in range(5):
        d = unit(rng.normal(size=3))
        lines.append((q + rng.uniform(40, 120) * d, d))
    with pytest.raises(RankDeficient):
        solve_linear_3d(_from_us_lines(A, lines))


def test_minimal_recovers_ground_truth(rng):
    for _ in range(100):
        A = random_similarity(rng)
        ss = solve_minimal_3d(make_3d(rng, A, 2))
        assert 1 <= len(ss) <= 8
        rot, tr, sc = best_errors(ss, A)
        assert rot < 1e-6 and tr < 1e-5 and sc < 1e-8


def test_minimal_candidates_are_proper_similarities(rng):
    A = random_similarity(rng)
    ss = solve_minimal_3d(make_3d(rng, A, 2))
    assert len(ss.residuals) == len(ss.candidates) == len(ss.raw)
    assert ss.residuals == sorted(ss.residuals)
    for S in ss:
        M = S.scaled_rotation
        assert np.abs(M.T @ M - S.scale**2 * np.eye(3)).max() < 1e-8 * S.scale**2
        assert np.linalg.det(S.rotation) > 0


def test_minimal_takes_exactly_two(rng):
    A = random_similarity(rng)
    with pytest.raises(InsufficientData):
        solve_minimal_3d(make_3d(rng, A, 3))


def test_linear_and_minimal_agree(rng):
    for _ in range(20):
        A = random_similarity(rng)
        acqs = make_3d(rng, A, 3)
        lin = solve_linear_3d(acqs)
        rot, tr, sc = best_errors(solve_minimal_3d(acqs[:2]), lin)
        assert rot < 1e-6 and tr < 1e-6 and sc < 1e-6


def test_coplanar_pair_is_not_solved_uniquely(rng):
    # two US lines in one plane: the rotation about that plane is ambiguous
    A = random_similarity(rng)
    lines = []
    for _ in range(2):
        c = np.array([rng.uniform(-50, 50), rng.uniform(100, 300), 0.0])
        lines.append((c, unit(np.append(rng.normal(size=2), 0.0))))
    acqs = _from_us_lines(A, lines)
    try:
        ss = solve_minimal_3d(acqs)
    except (RankDeficient, EliminationFailure, NoRealSolutions):
        return
    # any candidates returned must disagree with a third generic line
    third = make_3d(rng, A, 1)
    assert all(np.any(np.abs(constraint_rows_3d(third[0]) @ pe.vec_affine(S.to_homogeneous())) > 1e-6)
               for S in ss)


def test_equivariance_under_rigid_motion(rng):
    for _ in range(10):
        A = random_similarity(rng)
        acqs = make_3d(rng, A, 4)
        G = random_similarity(rng, scale=1.0)
        moved = [Acquisition3D(a.tracked_line.transformed(G), a.us_points) for a in acqs]
        GA = G.compose(A)
        for solve, data in ((solve_linear_3d, moved), (solve_minimal_3d, moved[:2])):
            rot, tr, sc = best_errors(solve(data), GA)
            assert rot < 1e-6 and tr < 1e-5 and sc < 1e-8


def test_rank_of_generic_system(rng):
    A = random_similarity(rng)
    assert linear_rank(make_3d(rng, A, 5)) == 12


def test_custom_anchor(rng):
    A = random_similarity(rng)
    acqs = make_3d(rng, A, 3)
    anchor = np.array([20.0, -30.0, 45.0])
    rot, tr, sc = best_errors(solve_linear_3d(acqs, anchor), A)
    assert rot < 1e-8 and tr < 1e-6 and sc < 1e-9
    rot, tr, sc = best_errors(solve_minimal_3d(acqs[:2], anchor), A)
    assert rot < 1e-6 and tr < 1e-5 and sc < 1e-8


def test_identity_similarity_roundtrip():
    A = Similarity.identity()
    rng = np.random.default_rng(1)
    rot, tr, sc = best_errors(solve_linear_3d(make_3d(rng, A, 3)), A)
    assert rot < 1e-8 and tr < 1e-6 and sc < 1e-9
