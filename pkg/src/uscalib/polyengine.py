"""Action-matrix machinery for the minimal solvers.

The unknown affine matrix is written as a linear combination of a nullspace
basis. Similarity constraints then become homogeneous quadratics in the
combination weights, which are dehomogenized, expanded by monomial
multiplication, reduced by elimination to a small template ``[C B]`` and
solved as the eigenproblem of the multiplication-by-``w`` matrix.

Monomials are exponent tuples. The 3D problem uses the weights
``(a, b, c, d, e, f)``; the dedicated 2D problem uses ``(a, b, c)``.

Affine layouts
--------------
A 4x4 similarity ``[[S, t], [0, h]]`` is vectorized as the 12 entries of
``[S | t]`` in row-major order followed by ``h`` (13 entries). The reduced
2D matrix ``[[c1, c2, t], [0, 0, h]]`` (shape 4x3) is vectorized as the 9
entries of ``[c1 c2 t]`` in row-major order followed by ``h`` (10 entries).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np
import scipy.linalg

from .errors import EliminationFailure, NoRealSolutions, RankDeficient, SingularC

Monomial = tuple[int, ...]

EPS_IMAG = 1e-6
EPS_HOM = 1e-8
EPS_CONS = 1e-4
MAX_COND_C = 1e12
RANK_TOL = 1e-10
CERT_TOL = 1e-6


# -- affine layouts ---------------------------------------------------------

def vec_affine(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return np.append(A[:3, :].ravel(), A[3, 3])


def unvec_affine(v) -> np.ndarray:
    A = np.zeros((4, 4))
    A[:3, :] = np.reshape(v[:12], (3, 4))
    A[3, 3] = v[12]
    return A


def vec_reduced(Abar) -> np.ndarray:
    Abar = np.asarray(Abar, dtype=float)
    return np.append(Abar[:3, :].ravel(), Abar[3, 2])


def unvec_reduced(v) -> np.ndarray:
    Abar = np.zeros((4, 3))
    Abar[:3, :] = np.reshape(v[:9], (3, 3))
    Abar[3, 2] = v[9]
    return Abar


# -- monomials --------------------------------------------------------------

def monomials_of_degree(nvars: int, deg: int) -> list[Monomial]:
    """All monomials of exactly ``deg`` in ``nvars`` variables, lex descending."""
    out = []
    for combo in combinations_with_replacement(range(nvars), deg):
        e = [0] * nvars
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    return sorted(out, reverse=True)


def monomials_upto(nvars: int, deg: int) -> list[Monomial]:
    """Graded-lex descending list of all monomials with degree <= ``deg``."""
    out = []
    for d in range(deg, -1, -1):
        out.extend(monomials_of_degree(nvars, d))
    return out


def eval_monomials(monomials, x) -> np.ndarray:
    E = np.asarray(monomials, dtype=int)
    return np.prod(np.asarray(x, dtype=float) ** E, axis=1)


def _shift(m: Monomial, var: int) -> Monomial:
    e = list(m)
    e[var] += 1
    return tuple(e)


@dataclass
class NullspaceBasis:
    basis: list  # k matrices (4x4 or 4x3)
    singular_values: np.ndarray

    def __len__(self):
        return len(self.basis)

    def combine(self, weights) -> np.ndarray:
        return sum(w * N for w, N in zip(weights, self.basis))


@dataclass
class QuadraticSystem:
    coeffs: np.ndarray  # (equations, monomials)
    monomials: list

    @property
    def nvars(self) -> int:
        return len(self.monomials[0])

    def evaluate(self, x) -> np.ndarray:
        return self.coeffs @ eval_monomials(self.monomials, x)

    def relative_residual(self, x) -> float:
        """Largest equation residual relative to the size of its terms."""
        m = eval_monomials(self.monomials, x)
        scale = np.abs(self.coeffs) @ np.abs(m)
        r = np.abs(self.coeffs @ m)
        return float(np.max(r / np.maximum(scale, np.finfo(float).tiny)))

    def dehomogenize(self, var: int) -> QuadraticSystem:
        """Set variable ``var`` to 1 and drop it from the monomials."""
        mons = [m[:var] + m[var + 1:] for m in self.monomials]
        if len(set(mons)) != len(mons):
            raise ValueError("system is not homogeneous")
        return QuadraticSystem(self.coeffs.copy(), mons)


@dataclass
class ActionMatrix:
    m: np.ndarray
    basis_monomials: list
    action_var: int


# -- linear part ------------------------------------------------------------

def nullspace(constraints, k: int, unvec=None) -> NullspaceBasis:
    """Orthonormal basis of the ``k``-dimensional right nullspace.

    Raises :class:`RankDeficient` if the constraints do not have rank
    ``p - k``: the smallest singular value that should be nonzero must be at
    least ``1e-10`` of the largest.
    """
    M = np.asarray(constraints, dtype=float)
    p = M.shape[1]
    if M.shape[0] < p - k:
        raise RankDeficient(f"need at least {p - k} constraint rows, got {M.shape[0]}")
    _, sv, Vt = np.linalg.svd(M, full_matrices=True)
    if sv[0] == 0 or sv[p - k - 1] < RANK_TOL * sv[0]:
        raise RankDeficient(
            f"constraint rank below {p - k} (sigma ratio {sv[p - k - 1] / max(sv[0], 1e-300):.2e})"
        )
    vecs = Vt[p - k:]
    basis = [unvec(v) if unvec else v.copy() for v in vecs]
    return NullspaceBasis(basis, sv)


# -- quadratic constraints --------------------------------------------------

def _forms_to_system(forms: list[np.ndarray]) -> QuadraticSystem:
    """Quadratic forms ``x^T G x`` (any symmetry) -> monomial coefficients."""
    n = forms[0].shape[0]
    iu, ju = np.triu_indices(n)
    rows = []
    for G in forms:
        Gs = G + G.T
        c = Gs[iu, ju]
        c[iu == ju] *= 0.5
        rows.append(c)
    mons = []
    for i, j in zip(iu, ju):
        e = [0] * n
        e[i] += 1
        e[j] += 1
        mons.append(tuple(e))
    # triu order (i<=j, row-major) is already lex descending for degree 2
    return QuadraticSystem(np.array(rows), mons)


def quadratic_constraints_3d(basis: NullspaceBasis) -> QuadraticSystem:
    """Ten quadratics forcing the 3x3 block to be a scaled orthogonal matrix.

    Five column conditions (``c1.c1 - c2.c2``, ``c1.c1 - c3.c3``, ``c1.c2``,
    ``c1.c3``, ``c2.c3``) followed by the same five on the rows.
    """
    S = np.stack([np.asarray(N)[:3, :3] for N in basis.basis])
    col = np.einsum("kai,laj->ijkl", S, S)
    row = np.einsum("kia,lja->ijkl", S, S)
    forms = []
    for G in (col, row):
        forms += [G[0, 0] - G[1, 1], G[0, 0] - G[2, 2], G[0, 1], G[0, 2], G[1, 2]]
    return _forms_to_system(forms)


def quadratic_constraints_2d(basis: NullspaceBasis) -> QuadraticSystem:
    """``c1.c1 - c2.c2`` and ``c1.c2`` for the reduced 2D matrix."""
    c1 = np.stack([np.asarray(N)[:3, 0] for N in basis.basis])
    c2 = np.stack([np.asarray(N)[:3, 1] for N in basis.basis])
    return _forms_to_system([c1 @ c1.T - c2 @ c2.T, c1 @ c2.T])


# -- templates --------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    """Column layout of an expanded system.

    ``multipliers`` are the variables each input equation is multiplied by;
    the input equations themselves are appended after the products.
    """

    nvars: int
    multipliers: tuple
    m_C: tuple
    m_B: tuple
    action_var: int

    @property
    def input_monomials(self) -> list[Monomial]:
        return monomials_upto(self.nvars, 2)

    @cached_property
    def columns(self) -> list[Monomial]:
        reach = set(self.input_monomials)
        for v in self.multipliers:
            reach.update(_shift(m, v) for m in self.input_monomials)
        tail = list(self.m_C) + list(self.m_B)
        lead = [m for m in monomials_upto(self.nvars, 3) if m in reach and m not in tail]
        return lead + tail

    @cached_property
    def n_lead(self) -> int:
        return len(self.columns) - len(self.m_C) - len(self.m_B)


def _mono(**kw) -> Monomial:
    names = "abcde"
    return tuple(kw.get(n, 0) for n in names)


TEMPLATE_3D = Template(
    nvars=5,
    multipliers=(0, 1, 2, 3),
    m_C=(_mono(b=3), _mono(a=1, b=2), _mono(b=1, e=1), _mono(b=1, d=1), _mono(b=1, c=1)),
    m_B=(_mono(b=2), _mono(a=1, b=1), _mono(e=1), _mono(d=1), _mono(c=1), _mono(b=1),
         _mono(a=1), _mono()),
    action_var=1,
)

TEMPLATE_2D = Template(
    nvars=2,
    multipliers=(0, 1),
    m_C=((1, 2), (0, 2)),
    m_B=((1, 1), (0, 1), (1, 0), (0, 0)),
    action_var=1,
)


def expand(sys: QuadraticSystem, template: Template) -> tuple[np.ndarray, list[Monomial]]:
    """Multiply every equation by each template multiplier and append the originals.

    ``sys`` must already be dehomogenized (degree <= 2 in ``template.nvars``
    variables). Returns the expanded coefficient matrix with columns in
    ``template.columns`` order.
    """
    cols = template.columns
    index = {m: i for i, m in enumerate(cols)}
    src = [index[m] for m in sys.monomials]
    blocks = []
    for v in template.multipliers:
        blk = np.zeros((sys.coeffs.shape[0], len(cols)))
        blk[:, [index[_shift(m, v)] for m in sys.monomials]] = sys.coeffs
        blocks.append(blk)
    orig = np.zeros((sys.coeffs.shape[0], len(cols)))
    orig[:, src] = sys.coeffs
    blocks.append(orig)
    return np.vstack(blocks), cols


def reduce_template(E, n_lead: int, n_keep: int, tol: float = RANK_TOL) -> np.ndarray:
    """Eliminate the leading ``n_lead`` monomials; return ``n_keep`` reduced rows.

    Rows are normalized, the leading block is factored by column-pivoted QR
    and its left complement is applied to the trailing block. The reduced
    rows are an orthonormal basis of what remains.
    """
    E = np.asarray(E, dtype=float)
    norms = np.linalg.norm(E, axis=1)
    E = E[norms > 0] / norms[norms > 0, None]
    M1, M2 = E[:, :n_lead], E[:, n_lead:]
    Q, R, _ = scipy.linalg.qr(M1, mode="full", pivoting=True)
    d = np.abs(np.diag(R))
    r1 = int(np.sum(d > tol * d[0])) if d.size else 0
    Y = Q[:, r1:].T @ M2
    if Y.shape[0] < n_keep:
        raise EliminationFailure(f"only {Y.shape[0]} rows left after elimination")
    _, sv, Vt = np.linalg.svd(Y)
    r2 = int(np.sum(sv > tol * max(d[0], sv[0])))
    if r2 < n_keep:
        raise EliminationFailure(f"reduced template has rank {r2} < {n_keep}")
    return Vt[:n_keep]


def action_matrix(C, B, template: Template) -> ActionMatrix:
    """Multiplication-by-``w`` matrix on ``m_B`` from the reduced template."""
    C = np.asarray(C, dtype=float)
    if np.linalg.cond(C) > MAX_COND_C:
        raise SingularC(f"template block C is singular (cond {np.linalg.cond(C):.2e})")
    red = -np.linalg.solve(C, B)  # m_C = red @ m_B
    mC = {m: i for i, m in enumerate(template.m_C)}
    mB = {m: i for i, m in enumerate(template.m_B)}
    n = len(template.m_B)
    M = np.zeros((n, n))
    for i, m in enumerate(template.m_B):
        w = _shift(m, template.action_var)
        if w in mC:
            M[i] = red[mC[w]]
        elif w in mB:
            M[i, mB[w]] = 1.0
        else:
            raise ValueError(f"monomial {w} not covered by the template")
    return ActionMatrix(M, list(template.m_B), template.action_var)


def extract_solutions(am: ActionMatrix) -> list[np.ndarray]:
    """Real solutions read from the eigenvectors of the action matrix.

    Complex eigenvalues, eigenvectors with a vanishing constant entry, and
    vectors whose entries are not consistent with their monomials are
    dropped. Near-duplicate roots are merged.
    """
    mons = am.basis_monomials
    nvars = len(mons[0])
    one = mons.index(tuple([0] * nvars))
    linear = []
    for v in range(nvars):
        e = [0] * nvars
        e[v] = 1
        linear.append(mons.index(tuple(e)))
    vals, vecs = np.linalg.eig(am.m)
    sols = []
    for lam, vec in zip(vals, vecs.T):
        if abs(lam.imag) >= EPS_IMAG * (1 + abs(lam.real)):
            continue
        vec = vec / np.linalg.norm(vec)
        if abs(vec[one]) < EPS_HOM:
            continue
        v = (vec / vec[one]).real
        x = v[linear]
        if not np.all(np.isfinite(x)):
            continue
        pred = eval_monomials(mons, x)
        if np.any(np.abs(v - pred) > EPS_CONS * (1 + np.abs(pred))):
            continue
        if any(np.linalg.norm(x - y) <= 1e-7 * (1 + np.linalg.norm(y)) for y in sols):
            continue
        sols.append(x)
    if not sols:
        raise NoRealSolutions("no real eigenpair survived")
    return sols


def expand_and_reduce_3d(sys: QuadraticSystem) -> tuple[np.ndarray, np.ndarray]:
    """``(C, B)`` of the reduced 3D template for the ten-quadratic system, ``f = 1``."""
    E, _ = expand(sys.dehomogenize(5), TEMPLATE_3D)
    R = reduce_template(E, TEMPLATE_3D.n_lead, 5)
    return R[:, :5], R[:, 5:]


def _solve_template(sys: QuadraticSystem, template: Template, n_keep: int, dehom: int):
    """Dehomogenize on ``dehom``, reduce, and return full homogeneous solutions."""
    n = sys.nvars
    dsys = sys.dehomogenize(dehom)
    E, _ = expand(dsys, template)
    R = reduce_template(E, template.n_lead, n_keep)
    k = len(template.m_C)
    am = action_matrix(R[:, :k], R[:, k:], template)
    out = []
    for x in extract_solutions(am):
        full = polish(sys, np.insert(x, dehom, 1.0), dehom)
        if sys.relative_residual(full) < CERT_TOL:
            out.append(full)
    if not out:
        raise NoRealSolutions("no candidate passed the residual certificate")
    assert len(out) <= len(template.m_B) and n == len(out[0])
    return out


def polish(sys: QuadraticSystem, x, fixed: int, iters: int = 3) -> np.ndarray:
    """Gauss-Newton steps on the system with ``x[fixed]`` held at 1.

    A step is kept only if it lowers the residual norm, so a root is never
    made worse.
    """
    E = np.asarray(sys.monomials, dtype=int)
    free = [i for i in range(len(x)) if i != fixed]
    x = np.array(x, dtype=float)
    r = sys.evaluate(x)
    for _ in range(iters):
        J = np.empty((len(r), len(free)))
        for col, j in enumerate(free):
            dE = E.copy()
            dE[:, j] -= 1
            dm = E[:, j] * np.prod(x ** np.maximum(dE, 0), axis=1)
            J[:, col] = sys.coeffs @ dm
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        trial = x.copy()
        trial[free] += step
        rt = sys.evaluate(trial)
        if not np.linalg.norm(rt) < np.linalg.norm(r):
            break
        x, r = trial, rt
    return x


def solve_quadratic_3d(sys: QuadraticSystem) -> list[np.ndarray]:
    """Solve the ten-quadratic system in six homogeneous weights.

    Dehomogenizes ``f = 1``; on failure retries once with ``e = 1`` (the
    weights are permuted so the template stays the same). Returns weight
    vectors ``(a, b, c, d, e, f)`` with the dehomogenized entry equal to 1.
    """
    try:
        return _solve_template(sys, TEMPLATE_3D, 5, 5)
    except (EliminationFailure, SingularC, NoRealSolutions) as exc:
        perm = [0, 1, 2, 3, 5, 4]
        swapped = QuadraticSystem(sys.coeffs, [tuple(m[p] for p in perm) for m in sys.monomials])
        try:
            sols = _solve_template(swapped, TEMPLATE_3D, 5, 5)
        except (EliminationFailure, SingularC, NoRealSolutions):
            raise exc
        return [s[perm] for s in sols]


def _system_to_forms(sys: QuadraticSystem) -> list[np.ndarray]:
    """Symmetric matrices ``G`` with ``x^T G x`` equal to each homogeneous quadratic."""
    n = sys.nvars
    forms = []
    for row in sys.coeffs:
        G = np.zeros((n, n))
        for c, m in zip(row, sys.monomials):
            idx = [i for i, e in enumerate(m) for _ in range(e)]
            i, j = idx
            G[i, j] += c / 2
            G[j, i] += c / 2
        forms.append(G)
    return forms


def solve_two_conics(sys: QuadraticSystem, retries: int = 3) -> list[np.ndarray]:
    """Real intersections of two conics in homogeneous ``(a, b, c)``, scaled to ``c = 1``.

    Dehomogenizes ``c = 1`` and uses the action matrix of ``b`` on
    ``(ab, b, a, 1)``; at most four solutions. Systems with a special
    structure can make the template singular; those are solved again after
    a fixed pseudo-random rotation of the unknowns, which leaves the
    intersection points unchanged but makes the coefficients generic.
    Intersections at infinity (``c = 0``) are not returned.
    """
    try:
        return _solve_template(sys, TEMPLATE_2D, 2, 2)
    except (EliminationFailure, SingularC, NoRealSolutions) as exc:
        first = last = exc
    forms = _system_to_forms(sys)
    rng = np.random.default_rng(0)
    for _ in range(retries):
        Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        try:
            ys = _solve_template(_forms_to_system([Q.T @ G @ Q for G in forms]), TEMPLATE_2D, 2, 2)
        except (EliminationFailure, SingularC, NoRealSolutions) as exc:
            last = exc
            continue
        out = []
        for y in ys:
            x = Q @ y
            if abs(x[2]) > EPS_HOM * np.linalg.norm(x):
                x = polish(sys, x / x[2], 2)
                if sys.relative_residual(x) < CERT_TOL:
                    out.append(x)
        if out:
            return out
        last = NoRealSolutions("all real intersections lie at infinity")
    raise last if isinstance(last, NoRealSolutions) else first
