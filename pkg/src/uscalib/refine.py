"""Levenberg-Marquardt refinement over the orthogonal point-to-line distance.

Parameters are a quaternion (4, renormalized after each step), the
translation (3) and the log of the scale (1). The residual for every mapped
US point is its 3-vector perpendicular offset from the tracked line, so the
cost is the sum of squared orthogonal distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acquisition import as_arrays
from .errors import NonFiniteCost
from .geometry import Similarity, quat_to_matrix


@dataclass
class RefineConfig:
    max_iterations: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    initial_damping: float = 1e-3

    def __post_init__(self):
        for name in ("max_iterations", "gradient_tol", "step_tol", "initial_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class RefineResult:
    similarity: Similarity
    cost_history: list = field(default_factory=list)  # cost after each accepted step
    iterations: int = 0

    @property
    def initial_cost(self) -> float:
        return self.cost_history[0]

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1]


# d(M(q) X)/dq for the homogeneous (unnormalized) rotation polynomial M(q)
def _dM(q):
    w, x, y, z = q
    return 2 * np.array(
        [
            [[w, -z, y], [z, w, -x], [-y, x, w]],
            [[x, y, z], [y, -x, -w], [z, w, -x]],
            [[-y, x, w], [x, y, z], [-w, z, -y]],
            [[-z, -w, x], [w, -z, y], [x, y, z]],
        ]
    )


def to_params(A: Similarity) -> np.ndarray:
    return np.concatenate([A.quaternion, A.translation, [np.log(A.scale)]])


def from_params(x) -> Similarity:
    return Similarity(x[:4], x[4:7], float(np.exp(x[7])))


def _flatten(acqs):
    p0, d, X = as_arrays(acqs)
    m = X.shape[1]
    return np.repeat(p0, m, axis=0), np.repeat(d, m, axis=0), X.reshape(-1, 3)


def residual_vector(x, p0, d, X, jacobian=False):
    """Stacked perpendicular offsets ``(3n,)`` and optionally the ``(3n, 8)`` Jacobian."""
    q, t, s = x[:4], x[4:7], np.exp(x[7])
    nq = q @ q
    R = quat_to_matrix(q)
    RX = X @ R.T
    v = s * RX + t - p0
    r = v - np.sum(v * d, axis=1, keepdims=True) * d
    if not jacobian:
        return r.ravel()
    n = len(X)
    dP = np.empty((n, 3, 8))
    MX = RX * nq  # M(q) X
    for k, Dk in enumerate(_dM(q)):
        dP[:, :, k] = s * (X @ Dk.T / nq - 2 * q[k] * MX / nq**2)
    dP[:, :, 4:7] = np.eye(3)
    dP[:, :, 7] = s * RX
    dr = dP - d[:, :, None] * np.einsum("ni,nik->nk", d, dP)[:, None, :]
    return r.ravel(), dr.reshape(3 * n, 8)


def cost(A: Similarity, acqs) -> float:
    r = residual_vector(to_params(A), *_flatten(acqs))
    return float(r @ r)


def refine_detailed(acqs, A0: Similarity, cfg: RefineConfig | None = None) -> RefineResult:
    cfg = cfg or RefineConfig()
    p0, d, X = _flatten(acqs)
    x = to_params(A0)
    with np.errstate(over="ignore", invalid="ignore"):
        r, J = residual_vector(x, p0, d, X, jacobian=True)
        c = float(r @ r)
    if not np.isfinite(c):
        raise NonFiniteCost("initial residuals are not finite")
    history = [c]
    lam = cfg.initial_damping
    accepted = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        g = J.T @ r
        if np.max(np.abs(g)) < cfg.gradient_tol:
            break
        H = J.T @ J
        D = np.diag(np.diag(H)) + 1e-12 * np.eye(8)
        improved = False
        converged = False
        while lam < 1e16:
            step = np.linalg.solve(H + lam * D, -g)
            if np.linalg.norm(step) < cfg.step_tol * (1 + np.linalg.norm(x)):
                converged = True
                break
            xn = x + step
            xn[:4] /= np.linalg.norm(xn[:4])
            rn = residual_vector(xn, p0, d, X)
            cn = float(rn @ rn)
            if np.isfinite(cn) and cn < c:
                x, c = xn, cn
                r, J = residual_vector(x, p0, d, X, jacobian=True)
                lam = max(lam / 10, 1e-15)
                improved = accepted = True
                history.append(c)
                break
            lam *= 10
        if converged or not improved:
            break
    return RefineResult(from_params(x) if accepted else A0, history, it)


def refine(acqs, A0: Similarity, cfg: RefineConfig | None = None) -> Similarity:
    """Refined similarity; its cost never exceeds the cost of ``A0``."""
    return refine_detailed(acqs, A0, cfg).similarity
