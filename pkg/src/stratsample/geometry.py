"""Tangent-space linear algebra: bases, boundary estimates, cross determinants.

The tangent space of a manifold at x is the kernel of the transposed
constraint-gradient matrix; an orthonormal basis comes out of a full QR
factorization.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .constraints import EQ, DegenerateConfigurationError, eq_indices

# Relative rank threshold for the regularity assumption; the smallest QR
# diagonal below this fraction of the largest means the gradients are
# numerically dependent.
RANK_RTOL = 1e-10

# Singular values below this are structural zeros in pseudodeterminants.
PDET_TOL = 1e-12


def constraint_gradient_matrix(system, labels, x) -> np.ndarray:
    """Columns are the gradients of the EQ-tagged functions, in tag order."""
    return system.gradient_matrix(eq_indices(labels), x)


def tangent_basis_from_gradients(Q: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the null space of Q^T (the tangent space).

    Q is n x m with full column rank; the result is the trailing n-m
    columns of the full orthogonal factor of Q's QR factorization.
    """
    n, m = Q.shape
    if m == 0:
        return np.eye(n)
    if m > n:
        raise DegenerateConfigurationError(
            f"{m} equality constraints in ambient dimension {n}"
        )
    W, R = np.linalg.qr(Q, mode="complete")
    diag = np.abs(np.diag(R[:m, :m]))
    if diag.min() < RANK_RTOL * max(diag.max(), np.finfo(float).tiny):
        raise DegenerateConfigurationError(
            "constraint gradients are numerically rank deficient"
        )
    return W[:, m:]


def tangent_basis(system, labels, x, Q=None) -> np.ndarray:
    """Orthonormal basis of the tangent space at x of the labelled manifold.

    With no equality constraints this is the identity; on a zero-dimensional
    manifold it has zero columns.
    """
    if Q is None:
        Q = constraint_gradient_matrix(system, labels, x)
    return tangent_basis_from_gradients(Q)


def tangent_basis_perp_v(T: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Basis of the part of the tangent space orthogonal to tangent vector v.

    Projects the columns of T against v and re-orthonormalizes.  Column
    pivoting keeps the result well-defined when v lines up with a basis
    column (plain QR would then pass a zero column through).
    """
    n, d = T.shape
    if d < 2:
        return np.zeros((n, 0))
    P = T - np.outer(v, v @ T)
    W, _, _ = scipy.linalg.qr(P, mode="full", pivoting=True)
    return W[:, : d - 1]


def boundary_distance_estimate(system, labels, x, T, k) -> float:
    """Linearized distance along the manifold to the boundary q_k = 0.

    Exact when q_k is affine.  Returns +inf when the boundary is
    unreachable along the tangent space.
    """
    if labels[k] == EQ:
        raise ValueError(f"function {k} is already an equality constraint")
    g = system.gradient(k, x)
    denom = np.linalg.norm(T.T @ g)
    if denom <= 1e-14 * max(np.linalg.norm(g), 1.0):
        return np.inf
    return abs(system.value(k, x)) / denom


def boundary_direction(system, labels, x, T, k) -> np.ndarray:
    """Unit tangent vector along which the boundary q_k = 0 is closest.

    Sign is chosen so the step decreases |q_k|; for two-sided targets with
    q_k < 0 this flips the projected gradient.
    """
    g = system.gradient(k, x)
    w = T @ (T.T @ g)
    norm = np.linalg.norm(w)
    if norm <= 1e-14 * max(np.linalg.norm(g), 1.0):
        raise DegenerateConfigurationError(
            f"gradient of function {k} has no tangential component"
        )
    sign = -1.0 if system.value(k, x) >= 0.0 else 1.0
    return sign * w / norm


def project_gradient_direction(T: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Unit vector along the projection of g onto the span of T."""
    w = T @ (T.T @ g)
    norm = np.linalg.norm(w)
    if norm <= 1e-14 * max(np.linalg.norm(g), 1.0):
        raise DegenerateConfigurationError(
            "gradient has no component in the tangent space"
        )
    return w / norm


def cross_tangent_pseudodet(Ta: np.ndarray, Tb: np.ndarray) -> float:
    """|det(Ta^T Tb)| for square products, pseudodeterminant otherwise.

    Both inputs must have orthonormal columns, so the value is the product
    of cosines of principal angles and lies in [0, 1].
    """
    M = Ta.T @ Tb
    if M.shape == (0, 0):
        return 1.0
    if M.shape[0] == M.shape[1]:
        return abs(np.linalg.det(M))
    s = np.linalg.svd(M, compute_uv=False)
    s = s[s > PDET_TOL]
    return float(np.prod(s)) if s.size else 0.0


def log_cross_tangent_det(Ta: np.ndarray, Tb: np.ndarray) -> float:
    """log |det(Ta^T Tb)| for conformable square products (-inf if singular)."""
    M = Ta.T @ Tb
    if M.shape == (0, 0):
        return 0.0
    sign, logdet = np.linalg.slogdet(M)
    return logdet if sign != 0 else -np.inf


def log_pseudodet_gram(Q: np.ndarray) -> float:
    """log sqrt(det(Q^T Q)), the coarea factor of a gradient matrix."""
    if Q.shape[1] == 0:
        return 0.0
    G = Q.T @ Q
    sign, logdet = np.linalg.slogdet(G)
    if sign <= 0:
        raise DegenerateConfigurationError("gram matrix of gradients is singular")
    return 0.5 * logdet
