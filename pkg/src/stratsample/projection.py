"""Newton solvers that project tangent-displaced points onto target manifolds.

Both solvers are deterministic with deterministic initial iterates: the
sampler re-runs them from the proposed point to certify that the reverse
move is constructible, and that check only makes sense if identical inputs
always produce identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NewtonSettings:
    """Absolute residual tolerance on max|q_k| and the iteration cap."""

    tol: float = 1e-10
    max_iter: int = 50

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter >= 1")


@dataclass
class ProjectionResult:
    ok: bool
    y: np.ndarray | None = None
    alpha: float | None = None
    iterations: int = 0

    def __bool__(self):
        return self.ok


_FAIL = ProjectionResult(ok=False)


def nes(system, z, Q, eq, settings) -> ProjectionResult:
    """Solve q_k(z + Q a) = 0 for all k in eq, starting from a = 0.

    Q holds the constraint gradients at the move's base point (not at z).
    Each iteration solves (Qtilde^T Q) da = -F by LU with partial pivoting,
    where Qtilde holds the gradients at the current iterate.
    """
    m = len(eq)
    if m == 0:
        return ProjectionResult(True, z, None, 0)
    a = np.zeros(m)
    y = z
    for it in range(settings.max_iter):
        F = system.values(y, eq)
        if np.abs(F).max() < settings.tol:
            return ProjectionResult(True, y, None, it)
        J = system.gradient_matrix(eq, y).T @ Q
        try:
            da = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return _FAIL
        if not np.isfinite(da).all():
            return _FAIL
        a = a + da
        y = z + Q @ a
    return _FAIL


def nes_l(system, x, Q_v, eq0, i0, v, settings) -> ProjectionResult:
    """Projection for a Lose move: solve for the step length too.

    Q_v is the gradient matrix of the current equality constraints with the
    unit direction v appended as the last column; the unknown vector a has
    the free step length alpha as its last entry.  The initial iterate puts
    the full estimated boundary distance into alpha and zero elsewhere.
    The sign of alpha is not checked here; callers reject alpha <= 0.
    """
    g0 = system.gradient(i0, x)
    den = float(g0 @ v)
    if den == 0.0 or not np.isfinite(den):
        return _FAIL
    h = -system.value(i0, x) / den
    if not np.isfinite(h):
        return _FAIL
    eq_all = list(eq0) + [i0]
    a = np.zeros(len(eq_all))
    a[-1] = h
    y = x + Q_v @ a
    for it in range(settings.max_iter):
        F = system.values(y, eq_all)
        if np.abs(F).max() < settings.tol:
            return ProjectionResult(True, y, float(a[-1]), it)
        J = system.gradient_matrix(eq_all, y).T @ Q_v
        try:
            da = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return _FAIL
        if not np.isfinite(da).all():
            return _FAIL
        a = a + da
        y = x + Q_v @ a
    return _FAIL
