"""Move proposals and their probability densities.

Three move types: Same keeps the current constraint set, Gain drops one
constraint (dimension +1), Lose adds one (dimension -1).  Lose moves are
only proposed toward boundaries estimated to lie within sigma_bdy, and the
Gain step distribution is shaped so the two are mutually reversible: for a
pair of flat manifolds cut out by affine constraints with constant weight,
every Gain/Lose proposal is accepted with probability exactly one.

Densities are computed in log space, and always by reconstructing the
tangent step from the two endpoints, so the forward and reverse directions
go through identical code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .constraints import manifold_dims
from .projection import NewtonSettings

LOG_2PI = math.log(2.0 * math.pi)

SAME, GAIN, LOSE = "same", "gain", "lose"
REVERSED = {SAME: SAME, GAIN: LOSE, LOSE: GAIN}


@dataclass(frozen=True)
class SamplerParams:
    """Step scales and move-type probabilities.

    sigma is the Gaussian scale of Same steps, sigma_bdy the boundary
    cutoff (and the Gain normal-step range), sigma_tan the tangential
    scale of Gain/Lose steps.  lambda_gain defaults to
    sigma_bdy * lambda_lose, the relation that makes flat Gain/Lose pairs
    with equal weights accept with probability one; when the weight ratio
    f_hi/f_lo between neighbouring manifolds is known, pass
    lambda_gain=recommended_lambda_gain(...) instead.
    """

    sigma: float = 0.5
    sigma_bdy: float = 0.3
    sigma_tan: float = 0.3
    lambda_lose: float = 0.4
    lambda_gain: float | None = None
    newton: NewtonSettings = field(default_factory=NewtonSettings)

    def __post_init__(self):
        if self.lambda_gain is None:
            object.__setattr__(self, "lambda_gain", self.sigma_bdy * self.lambda_lose)
        if min(self.sigma, self.sigma_bdy, self.sigma_tan) <= 0:
            raise ValueError("all step scales must be positive")
        if not 0 < self.lambda_lose < 1 or not 0 < self.lambda_gain < 1:
            raise ValueError("move probabilities must lie in (0, 1)")
        if self.lambda_gain + self.lambda_lose >= 1:
            raise ValueError("lambda_gain + lambda_lose must be < 1")

    def with_(self, **kw) -> "SamplerParams":
        return replace(self, **kw)


def recommended_lambda_gain(weight_ratio, sigma_bdy, lambda_lose) -> float:
    """lambda_gain that balances a Gain/Lose pair with weight ratio f_hi/f_lo."""
    return weight_ratio * sigma_bdy * lambda_lose


@dataclass
class MoveProposal:
    """A proposed label change plus tangent step, with its bookkeeping."""

    movetype: str
    target_labels: np.ndarray
    changed_index: int | None
    two_sided: bool
    v: np.ndarray
    v_n: float = 0.0
    v_t: np.ndarray | None = None
    r: np.ndarray | None = None


@dataclass
class MoveProbabilities:
    """Per-point move-type probabilities and the neighbour sets behind them."""

    lam_same: float
    lam_gain: float
    lam_lose: float
    gains: list
    near_loses: list

    @property
    def n_gain(self):
        return len(self.gains)

    @property
    def n_lose(self):
        return len(self.near_loses)


def nearby_lose_neighbours(system, spec, labels, x, T, params):
    """Lose neighbours whose boundary is estimated within sigma_bdy.

    Returns (target labels, changed index, two_sided, h_estimate) tuples.
    """
    out = []
    for target, k, two in spec.lose_neighbours(labels):
        h = geometry.boundary_distance_estimate(system, labels, x, T, k)
        if h < params.sigma_bdy:
            out.append((target, k, two, h))
    return out


def move_probabilities(system, spec, labels, x, T, params) -> MoveProbabilities:
    """Evaluate the move-type probabilities at a point.

    A move type gets its configured probability only when it has at least
    one candidate neighbour; Same absorbs the remainder.
    """
    gains = spec.gain_neighbours(labels)
    near = nearby_lose_neighbours(system, spec, labels, x, T, params)
    lam_gain = params.lambda_gain if gains else 0.0
    lam_lose = params.lambda_lose if near else 0.0
    return MoveProbabilities(1.0 - lam_gain - lam_lose, lam_gain, lam_lose, gains, near)


def propose_labels(mp: MoveProbabilities, labels, rng):
    """Draw a move type and target labels.

    One uniform draw is partitioned [0, lam_same), [lam_same,
    lam_same + lam_gain), remainder; Gain targets are uniform over all
    Gain neighbours and Lose targets uniform over the nearby set.
    """
    u = rng.random()
    if u < mp.lam_same:
        return SAME, labels, None, False
    if u < mp.lam_same + mp.lam_gain:
        pick = mp.gains[int(rng.random() * mp.n_gain)]
        return GAIN, pick[0], pick[1], pick[2]
    pick = mp.near_loses[int(rng.random() * mp.n_lose)]
    return LOSE, pick[0], pick[1], pick[2]


def propose_tangent_step(system, spec, x, labels, T, movetype, target_labels,
                         changed, two_sided, params, rng) -> MoveProposal:
    """Draw the tangent step for the chosen move type.

    Same: isotropic Gaussian in the tangent space (zero step on a
    zero-dimensional manifold).  Gain: uniform normal component away from
    the boundary plus a Gaussian tangential part whose scale grows with the
    normal component.  Lose: a unit direction concentrated around the
    estimated shortest path to the boundary.
    """
    n = x.shape[0]
    d0 = T.shape[1]
    if movetype == SAME:
        if d0 == 0:
            return MoveProposal(SAME, target_labels, None, False, np.zeros(n))
        r = params.sigma * rng.standard_normal(d0)
        return MoveProposal(SAME, target_labels, None, False, T @ r, r=r)

    if movetype == GAIN:
        T_hi = geometry.tangent_basis(system, target_labels, x)
        u_n = geometry.project_gradient_direction(T_hi, system.gradient(changed, x))
        u = rng.random()
        v_n = params.sigma_bdy * (2.0 * u - 1.0) if two_sided else params.sigma_bdy * u
        v = v_n * u_n
        v_t = None
        if d0 >= 1:
            v_t = (params.sigma_tan * abs(v_n)) * rng.standard_normal(d0)
            v = v + T @ v_t
        return MoveProposal(GAIN, target_labels, changed, two_sided, v,
                            v_n=v_n, v_t=v_t)

    v_opt = geometry.boundary_direction(system, labels, x, T, changed)
    if d0 >= 2:
        T_perp = geometry.tangent_basis_perp_v(T, v_opt)
        r = params.sigma_tan * rng.standard_normal(d0 - 1)
        v = v_opt + T_perp @ r
        v = v / np.linalg.norm(v)
    else:
        r = np.zeros(0)
        v = v_opt
    return MoveProposal(LOSE, target_labels, changed, two_sided, v, r=r)


def tangential_components(v, v_opt, T_perp):
    """Recover the Gaussian coefficients behind a Lose direction.

    Inverts the Lose construction by rescaling v to unit length along
    v_opt.  Undefined (returns None) when v . v_opt <= 0: such a direction
    can never be proposed, so its density is zero.
    """
    c = float(v @ v_opt)
    if c <= 0.0:
        return None
    return (T_perp.T @ v) / c


def log_gauss(u, scale, dim) -> float:
    """Log density of an isotropic Gaussian of the given scale and dimension."""
    if dim == 0:
        return 0.0
    u = np.asarray(u)
    return -0.5 * dim * (LOG_2PI + 2.0 * math.log(scale)) - float(u @ u) / (2.0 * scale * scale)


def transition_log_density(system, spec, params, movetype, x, labels_x, T_x,
                           y, labels_y, T_y, changed, two_sided,
                           mp_x: MoveProbabilities | None = None,
                           T_hi: np.ndarray | None = None) -> float:
    """Log proposal density of moving x -> y, reconstructed from endpoints.

    T_x is the tangent basis at x on the source manifold and T_y the basis
    at y on the target manifold.  Returns -inf whenever the move could not
    have been generated (wrong side of a window, boundary not nearby,
    direction opposite the optimal one).  Jacobian factors relating the
    reference measures of the two manifolds are included; the Same-move
    cross-tangent factor cancels against the reverse density and is left
    out on both sides.
    """
    if mp_x is None:
        mp_x = move_probabilities(system, spec, labels_x, x, T_x, params)
    n = x.shape[0]
    d_x = T_x.shape[1]

    if movetype == SAME:
        if mp_x.lam_same <= 0.0:
            return -np.inf
        v = T_x @ (T_x.T @ (y - x))
        return math.log(mp_x.lam_same) + log_gauss(v, params.sigma, d_x)

    if movetype == GAIN:
        if mp_x.lam_gain <= 0.0:
            return -np.inf
        # Tangent space of the higher-dimensional target manifold at x.
        if T_hi is None:
            T_hi = geometry.tangent_basis(system, labels_y, x)
        u_n = geometry.project_gradient_direction(T_hi, system.gradient(changed, x))
        v = T_hi @ (T_hi.T @ (y - x))
        v_n = float(v @ u_n)
        if two_sided:
            if not 0.0 < abs(v_n) <= params.sigma_bdy:
                return -np.inf
            logd = -math.log(2.0 * params.sigma_bdy)
        else:
            if not 0.0 < v_n <= params.sigma_bdy:
                return -np.inf
            logd = -math.log(params.sigma_bdy)
        logd += math.log(mp_x.lam_gain) - math.log(mp_x.n_gain)
        if d_x >= 1:
            v_t = T_x.T @ v
            logd += log_gauss(v_t, params.sigma_tan * abs(v_n), d_x)
        logd += geometry.log_cross_tangent_det(T_hi, T_y)
        return logd

    # Lose: x sits on the higher-dimensional manifold, y on its boundary.
    if mp_x.lam_lose <= 0.0:
        return -np.inf
    if not any(k == changed for _, k, _, _ in mp_x.near_loses):
        return -np.inf  # target boundary not estimated nearby
    d_y = d_x - 1
    vt = T_x @ (T_x.T @ (y - x))
    alpha = float(np.linalg.norm(vt))
    if alpha <= 0.0:
        return -np.inf
    v = vt / alpha
    v_opt = geometry.boundary_direction(system, labels_x, x, T_x, changed)
    c = float(v @ v_opt)
    if c <= 0.0:
        return -np.inf
    logd = math.log(mp_x.lam_lose) - math.log(mp_x.n_lose)
    if d_x >= 2:
        T_perp_opt = geometry.tangent_basis_perp_v(T_x, v_opt)
        r = (T_perp_opt.T @ v) / c
        logd += log_gauss(r, params.sigma_tan, d_y)
        logd -= d_x * math.log(c)
        T_perp_v = geometry.tangent_basis_perp_v(T_x, v)
    else:
        T_perp_v = np.zeros((n, 0))
    logd -= d_y * math.log(alpha) if d_y > 0 else 0.0
    logd += geometry.log_cross_tangent_det(T_perp_v, T_y)
    return logd


def reverse_step(x, y, T_rev, lose_reversed: bool):
    """Tangent step of the reverse move y -> x, from the endpoints alone.

    T_rev is the tangent basis at y appropriate for the reversed move type.
    For a reversed Lose move the step is split into a unit direction and a
    length alpha; alpha = 0 flags a degenerate (zero-density) reverse move.
    """
    v = T_rev @ (T_rev.T @ (x - y))
    if not lose_reversed:
        return v, None
    alpha = float(np.linalg.norm(v))
    if alpha == 0.0:
        return v, 0.0
    return v / alpha, alpha
