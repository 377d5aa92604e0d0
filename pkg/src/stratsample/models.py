"""Built-in models: constraint systems, stratifications, and weights.

Each model bundles a constraint family, the set of manifolds to sample,
the weight f_L(x) of each manifold against its natural surface measure,
named observables, a feasible starting state, and sampling parameters
that are known to mix well.

Sticky-sphere weights use the coarea factor of the *distance-gauge*
gradient matrix (columns grad|x_i-x_j| of unit bond vectors), even though
the constraints themselves are the numerically friendlier squared
distances q_ij = |x_i-x_j|^2 - 1.  The gauges differ by a factor 2r per
bond; the distance gauge is the one under which the analytic triangle
probability kappa/(kappa + pi/sqrt(3)) holds, which the test suite checks
by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .constraints import (
    EQ,
    FIX,
    IN,
    NONE,
    VARY,
    ChainState,
    DiagonalQuadratic,
    PairDistance2,
    StratificationSpec,
    StructuredConstraintSystem,
    eq_indices,
)
from .projection import NewtonSettings, nes
from .proposals import SamplerParams


@dataclass
class Model:
    """A sampleable system: constraints, stratification, weights, observables."""

    name: str
    system: StructuredConstraintSystem
    spec: StratificationSpec
    observable_names: tuple
    log_weight: callable
    observables: callable
    initial_state: callable
    default_params: SamplerParams
    model_params: dict = field(default_factory=dict)
    kernel: dict | None = None  # compiled-backend description; None = Python only

    def density_weight(self, x, labels) -> float:
        """The weight f_L(x) > 0 of the labelled manifold at x."""
        return math.exp(self.log_weight(np.asarray(x, float), labels))


def _sticky_log_weight(system, log_kappa, pair_gauge, k_bend, n_particles, dim):
    """log f for sticky models: kappa powers times the inverse coarea factor.

    Every EQ-tagged function contributes its log kappa; the gradient matrix
    is assembled in the distance gauge (pair columns divided by 2r); an
    optional bending energy penalizes non-straight backbones.
    """
    terms = system.terms

    def logw(x, labels):
        eq = eq_indices(labels)
        s = float(np.sum(log_kappa[eq]))
        if len(eq):
            Q = np.empty((system.n_vars, len(eq)))
            for col, i in enumerate(eq):
                g = system.gradient(i, x)
                if pair_gauge[i]:
                    t = terms[i]
                    d = x[t.i * t.dim:(t.i + 1) * t.dim] - x[t.j * t.dim:(t.j + 1) * t.dim]
                    g = g / (2.0 * np.linalg.norm(d))
                Q[:, col] = g
            s -= geometry.log_pseudodet_gram(Q)
        if k_bend > 0.0:
            p = x.reshape(n_particles, dim)
            bonds = p[1:] - p[:-1]
            cos = np.sum(bonds[1:] * bonds[:-1], axis=1)
            s -= 0.5 * k_bend * float(np.sum(1.0 - cos))
        return s

    return logw


def _const_log_weight(spec, log_c):
    log_c = np.asarray(log_c, dtype=float)

    def logw(x, labels):
        return float(log_c[spec.manifold_index(labels)])

    return logw


# ---------------------------------------------------------------------------
# Parabola and line in the plane

def parabola_line_theory() -> np.ndarray:
    """Exact occupation fractions of the four manifolds.

    Computed from the surface measures: the area between the curves, the
    arc length of the parabola below the line, the chord length, and the
    two corner points.
    """
    r = math.sqrt(2.0)
    area = 8.0 * r / 3.0
    arc = 3.0 * r + 0.5 * math.asinh(2.0 * r)
    chord = 2.0 * r
    corners = 2.0
    w = np.array([area, arc, chord, corners])
    return w / w.sum()


def model_parabola_line() -> Model:
    """Interior between a parabola and a line, the two curves, and corners.

    q_1 = y - x^2 and q_2 = 2 - y; all four tag combinations are present,
    every weight is 1, so each manifold is weighted by its own surface
    measure.  Small enough to visualize, yet it exercises manifolds with
    no constraints, with every constraint, and everything between.
    """
    system = StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(-1.0, 0.0), lin=(0.0, 1.0), const=0.0),
        DiagonalQuadratic(quad=(0.0, 0.0), lin=(0.0, -1.0), const=2.0),
    ])
    labels = [(IN, IN), (EQ, IN), (IN, EQ), (EQ, EQ)]
    spec = StratificationSpec(2, label_list=labels)
    params = SamplerParams(sigma=0.9, sigma_bdy=0.3, sigma_tan=0.6,
                           lambda_lose=0.7, lambda_gain=0.21)
    return Model(
        name="parabola-line",
        system=system,
        spec=spec,
        observable_names=("x", "y"),
        log_weight=lambda x, labels: 0.0,
        observables=lambda x, labels: (x[0], x[1]),
        initial_state=lambda: ChainState(np.array([0.0, 1.0]), labels[0]),
        default_params=params,
        kernel={"weight": ("const", np.zeros(4)), "observables": "xy"},
    )


# ---------------------------------------------------------------------------
# Trimer of sticky discs

def triangle_probability(kappa: float) -> float:
    """Equilibrium probability of the bonded triangle versus the open trimer."""
    return kappa / (kappa + math.pi / math.sqrt(3.0))


def trimer_angle(x) -> float:
    """Opening angle at the middle disc, in (0, 2pi)."""
    u = x[0:2] - x[2:4]
    w = x[4:6] - x[2:4]
    th = math.atan2(u[0] * w[1] - u[1] * w[0], u[0] * w[0] + u[1] * w[1])
    return th if th > 0 else th + 2.0 * math.pi


def model_trimer(kappa: float = 1.0) -> Model:
    """Three unit discs: a two-bond polymer and the rigid triangle.

    Pair functions q_ij = |x_i-x_j|^2 - 1 in the order (12), (13), (23).
    The polymer keeps bonds 12 and 23 with 13 as a non-overlap inequality;
    the triangle bonds all three.  f_L = kappa^m / |Q_L| with the
    distance-gauge coarea factor, so the triangle fraction follows
    triangle_probability(kappa).
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    system = StructuredConstraintSystem(6, [
        PairDistance2(0, 1, 2),
        PairDistance2(0, 2, 2),
        PairDistance2(1, 2, 2),
    ])
    polymer = (EQ, IN, EQ)
    triangle = (EQ, EQ, EQ)
    spec = StratificationSpec(3, label_list=[polymer, triangle])
    log_kappa = np.full(3, math.log(kappa))
    pair_gauge = np.array([True, True, True])
    params = SamplerParams(sigma=0.5, sigma_bdy=0.4, sigma_tan=0.3,
                           lambda_lose=0.7, lambda_gain=0.28)
    x0 = np.array([-1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    return Model(
        name="trimer",
        system=system,
        spec=spec,
        observable_names=("theta",),
        log_weight=_sticky_log_weight(system, log_kappa, pair_gauge, 0.0, 3, 2),
        observables=lambda x, labels: (trimer_angle(x),),
        initial_state=lambda: ChainState(x0, polymer),
        default_params=params,
        model_params={"kappa": kappa},
        kernel={
            "weight": ("sticky", {"log_kappa": log_kappa, "pair_gauge": pair_gauge,
                                  "k_bend": 0.0, "n_particles": 3, "dim": 2}),
            "observables": "trimer",
        },
    )


# ---------------------------------------------------------------------------
# Polymer of six sticky spheres

POLYMER6_N = 6
POLYMER6_TYPES = "BAAAAB"  # spheres 2..5 are type A, the chain ends type B


def polymer6_pairs():
    """All 15 index pairs (i < j) in lexicographic order."""
    return [(i, j) for i in range(POLYMER6_N) for j in range(i + 1, POLYMER6_N)]


def polymer6_backbone():
    return [(i, i + 1) for i in range(POLYMER6_N - 1)]


def _polymer6_kappa_table(kappa, kappa_aa, kappa_ab, kappa_bb):
    """Per-pair sticky parameter for the breakable bonds."""
    typed = [kappa_aa, kappa_ab, kappa_bb]
    if any(v is not None for v in typed):
        if any(v is None for v in typed):
            raise ValueError("specify all of kappa_aa, kappa_ab, kappa_bb or none")
        table = {"AA": kappa_aa, "AB": kappa_ab, "BB": kappa_bb}
    else:
        table = {"AA": kappa, "AB": kappa, "BB": kappa}
    if any(v <= 0 for v in table.values()):
        raise ValueError("sticky parameters must be positive")
    return table


def pair_type(i, j, types=POLYMER6_TYPES) -> str:
    return "".join(sorted(types[i] + types[j]))


def _straight_chain(n, dim, spacing=1.0):
    x = np.zeros(n * dim)
    x[0::dim] = spacing * np.arange(n)
    return x


def model_polymer6(kappa: float = 2.0, kappa_aa=None, kappa_ab=None,
                   kappa_bb=None) -> Model:
    """Six unit spheres chained by five unbreakable backbone bonds.

    The ten non-backbone pairs can bond and unbond (one-sided: an absent
    bond is a non-overlap inequality).  With identical sticky parameter the
    weight is kappa^(m-5)/|Q_L|; with per-type parameters each breakable
    bond contributes the kappa of its type pair.  Feasible bond counts run
    from 5 (open chain) to 12 (octahedron or polytetrahedron).
    """
    table = _polymer6_kappa_table(kappa, kappa_aa, kappa_ab, kappa_bb)
    pairs = polymer6_pairs()
    backbone = set(polymer6_backbone())
    n = POLYMER6_N * 3
    system = StructuredConstraintSystem(n, [PairDistance2(i, j, 3) for i, j in pairs])
    fix = np.array([FIX if (i, j) in backbone else VARY for i, j in pairs], dtype=np.int8)
    spec = StratificationSpec(len(pairs), fix_flags=fix)
    log_kappa = np.array([
        0.0 if (i, j) in backbone else math.log(table[pair_type(i, j)])
        for i, j in pairs
    ])
    pair_gauge = np.ones(len(pairs), dtype=bool)
    off_pairs = [k for k, p in enumerate(pairs) if tuple(p) not in backbone]
    off_type = [pair_type(i, j) for i, j in (pairs[k] for k in off_pairs)]

    def observables(x, labels):
        m = naa = nab = nbb = 0
        mask = 0
        for bit, k in enumerate(off_pairs):
            if labels[k] == EQ:
                mask |= 1 << bit
                t = off_type[bit]
                naa += t == "AA"
                nab += t == "AB"
                nbb += t == "BB"
        m = int(np.count_nonzero(labels == EQ))
        return (float(m), float(naa), float(nab), float(nbb), float(mask))

    init_labels = np.array([EQ if (i, j) in backbone else IN for i, j in pairs],
                            dtype=np.int8)

    def initial_state():
        # Straight chain, jittered off the exactly collinear configuration,
        # then projected back onto the backbone manifold.
        x0 = _straight_chain(POLYMER6_N, 3)
        z = x0 + 0.01 * np.random.default_rng(20240 + POLYMER6_N).standard_normal(n)
        eq = eq_indices(init_labels)
        Q = system.gradient_matrix(eq, x0)
        res = nes(system, z, Q, eq, NewtonSettings())
        if not res.ok:
            raise RuntimeError("failed to project the initial chain")
        return ChainState(res.y, init_labels)

    params = SamplerParams(sigma=0.4, sigma_bdy=0.3, sigma_tan=0.2,
                           lambda_lose=0.4, lambda_gain=0.24)
    return Model(
        name="polymer6",
        system=system,
        spec=spec,
        observable_names=("m", "n_aa", "n_ab", "n_bb", "bond_mask"),
        log_weight=_sticky_log_weight(system, log_kappa, pair_gauge, 0.0, POLYMER6_N, 3),
        observables=observables,
        initial_state=initial_state,
        default_params=params,
        model_params={"kappa": kappa, **({"kappa_aa": kappa_aa, "kappa_ab": kappa_ab,
                                          "kappa_bb": kappa_bb}
                                         if kappa_aa is not None else {})},
        kernel={
            "weight": ("sticky", {"log_kappa": log_kappa, "pair_gauge": pair_gauge,
                                  "k_bend": 0.0, "n_particles": POLYMER6_N, "dim": 3}),
            "observables": "bonds",
            "bond_bits": off_pairs,
            "bond_types": off_type,
        },
    )


# ---------------------------------------------------------------------------
# Polymer adsorbing to a wall

def model_polymer_wall(n_spheres: int = 10, kappa: float = 1.0,
                       k_bend: float = 0.0) -> Model:
    """A chain of unit spheres sticking to the plane z = 0.

    Backbone bonds are fixed; each sphere carries a wall function
    w_i = z_i that can flip between stuck (EQ) and strictly above (IN),
    except sphere 1 which is always stuck.  k_bend > 0 adds a stiffness
    energy sum(1 - cos(angle))/2 * k_bend.  Inequalities between spheres
    are deliberately not included.
    """
    if n_spheres < 2:
        raise ValueError("need at least two spheres")
    if kappa <= 0 or k_bend < 0:
        raise ValueError("kappa must be positive and k_bend nonnegative")
    N, dim = n_spheres, 3
    n = N * dim
    terms = [PairDistance2(i, i + 1, 3) for i in range(N - 1)]
    wall0 = len(terms)
    for i in range(N):
        lin = np.zeros(n)
        lin[dim * i + 2] = 1.0
        terms.append(DiagonalQuadratic(quad=tuple(np.zeros(n)), lin=tuple(lin)))
    system = StructuredConstraintSystem(n, terms)
    nf = len(terms)
    fix = np.full(nf, FIX, dtype=np.int8)
    fix[wall0 + 1:] = VARY  # every wall function except sphere 1's may flip
    spec = StratificationSpec(nf, fix_flags=fix)
    log_kappa = np.zeros(nf)
    log_kappa[wall0:] = math.log(kappa)
    pair_gauge = np.zeros(nf, dtype=bool)
    pair_gauge[:wall0] = True

    def observables(x, labels):
        n_wall = int(np.count_nonzero(labels[wall0:] == EQ))
        r_end = float(np.linalg.norm(x[0:dim] - x[-dim:]))
        return (float(n_wall), n_wall / N, r_end)

    init_labels = np.full(nf, EQ, dtype=np.int8)  # straight chain lying on the wall
    x0 = _straight_chain(N, dim)

    params = SamplerParams(sigma=0.3, sigma_bdy=0.3, sigma_tan=0.2,
                           lambda_lose=0.4, lambda_gain=0.24)
    return Model(
        name="polymer-wall",
        system=system,
        spec=spec,
        observable_names=("n_wall", "frac_wall", "r_end"),
        log_weight=_sticky_log_weight(system, log_kappa, pair_gauge, k_bend, N, dim),
        observables=observables,
        initial_state=lambda: ChainState(x0.copy(), init_labels),
        default_params=params,
        model_params={"n_spheres": N, "kappa": kappa, "k_bend": k_bend},
        kernel={
            "weight": ("sticky", {"log_kappa": log_kappa, "pair_gauge": pair_gauge,
                                  "k_bend": k_bend, "n_particles": N, "dim": dim}),
            "observables": "wall",
        },
    )


# ---------------------------------------------------------------------------
# Nested ellipsoid stratification for volume estimation

def ellipsoid_interior_volume(semiaxes) -> float:
    """Volume of the solid ellipsoid with the given semiaxes."""
    a = np.asarray(semiaxes, dtype=float)
    n = a.shape[0]
    return float(math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0) * np.prod(a))


def _ellipsoid_surface_term(semiaxes, flip=False):
    a = np.asarray(semiaxes, dtype=float)
    quad = 1.0 / a ** 2
    if flip:
        return DiagonalQuadratic(quad=tuple(-quad), lin=tuple(np.zeros(a.size)), const=1.0)
    return DiagonalQuadratic(quad=tuple(quad), lin=tuple(np.zeros(a.size)), const=-1.0)


def _ellipsoid_start(semiaxes):
    a = np.asarray(semiaxes, dtype=float)
    w = np.full(a.size, 0.05)
    w[0] = 1.0
    return w / math.sqrt(float(np.sum(w * w / a ** 2)))


def model_ellipsoid(semiaxes, c_exponent: float | None = 0.94,
                    c_weights=None) -> Model:
    """Ellipsoid surface intersected with more and more coordinate planes.

    Level k is the surface cut by the first k-1 planes x_2 = ... = x_k = 0,
    ending in the two-point set {+-a_1 e_1}.  Weights c_k (default
    exp(c_exponent * k)) steer the sampler to spend comparable time on all
    levels; counting visits against the known size of the two-point level
    yields the surface area.  All Gain moves are two-sided: a dropped plane
    is forgotten, not turned into an inequality.
    """
    a = np.asarray(semiaxes, dtype=float)
    if (a <= 0).any():
        raise ValueError("semiaxes must be positive")
    ndim = a.shape[0]
    terms = [_ellipsoid_surface_term(a)]
    for k in range(1, ndim):
        lin = np.zeros(ndim)
        lin[k] = 1.0
        terms.append(DiagonalQuadratic(quad=tuple(np.zeros(ndim)), lin=tuple(lin)))
    system = StructuredConstraintSystem(ndim, terms)
    labels = []
    for k in range(1, ndim + 1):
        lab = np.full(ndim, NONE, dtype=np.int8)
        lab[:k] = EQ
        labels.append(lab)
    spec = StratificationSpec(ndim, label_list=labels,
                              two_sided=np.ones(ndim, dtype=bool))
    if c_weights is not None:
        log_c = np.log(np.asarray(c_weights, dtype=float))
        if log_c.shape != (ndim,):
            raise ValueError("need one weight per level")
        cfg = {"c_weights": list(map(float, c_weights))}
    else:
        log_c = c_exponent * np.arange(1, ndim + 1, dtype=float)
        cfg = {"c_exponent": c_exponent}
    params = SamplerParams(sigma=0.6, sigma_bdy=0.4, sigma_tan=0.3,
                           lambda_lose=0.4, lambda_gain=0.16)
    x0 = _ellipsoid_start(a)
    return Model(
        name="ellipsoid",
        system=system,
        spec=spec,
        observable_names=("level",),
        log_weight=_const_log_weight(spec, log_c),
        observables=lambda x, labels: (float(np.count_nonzero(labels == EQ)),),
        initial_state=lambda: ChainState(x0.copy(), labels[0]),
        default_params=params,
        model_params={"semiaxes": list(map(float, a)), **cfg},
        kernel={"weight": ("const", log_c), "observables": "level"},
    )


def model_ellipsoid_interior(semiaxes, c_surface: float = 1.0,
                             c_interior: float = 1.0) -> Model:
    """Two-manifold stratification: the ellipsoid surface and its interior.

    The interior volume is known in closed form, which makes this the
    higher-precision anchor for the surface-area estimate.
    """
    a = np.asarray(semiaxes, dtype=float)
    if (a <= 0).any():
        raise ValueError("semiaxes must be positive")
    ndim = a.shape[0]
    system = StructuredConstraintSystem(ndim, [_ellipsoid_surface_term(a, flip=True)])
    spec = StratificationSpec(1, label_list=[(EQ,), (IN,)])
    log_c = np.log([c_surface, c_interior])
    params = SamplerParams(sigma=0.6, sigma_bdy=0.4, sigma_tan=0.3,
                           lambda_lose=0.4, lambda_gain=0.16)
    return Model(
        name="ellipsoid-interior",
        system=system,
        spec=spec,
        observable_names=(),
        log_weight=_const_log_weight(spec, log_c),
        observables=lambda x, labels: (),
        initial_state=lambda: ChainState(np.zeros(ndim), (IN,)),
        default_params=params,
        model_params={"semiaxes": list(map(float, a)),
                      "c_surface": c_surface, "c_interior": c_interior},
        kernel={"weight": ("const", log_c), "observables": "none"},
    )


# ---------------------------------------------------------------------------
# Affine stratifications (used by the flat-case exactness checks)

def model_affine_pair(normal, offset: float = 0.0, two_sided: bool = False) -> Model:
    """A hyperplane and the half space (or full space) beside it.

    The single constraint is q(x) = normal . x + offset.  With constant
    weight this is the configuration for which Gain/Lose proposals are
    accepted with probability exactly one, provided
    lambda_gain = sigma_bdy * lambda_lose (one-sided) or twice that
    (two-sided, where either side of the plane is reachable).
    """
    a = np.asarray(normal, dtype=float)
    n = a.shape[0]
    system = StructuredConstraintSystem(
        n, [DiagonalQuadratic(quad=tuple(np.zeros(n)), lin=tuple(a), const=offset)])
    free_tag = NONE if two_sided else IN
    spec = StratificationSpec(1, label_list=[(EQ,), (free_tag,)],
                              two_sided=np.array([two_sided]))
    x0 = -offset * a / float(a @ a)
    params = SamplerParams(sigma=0.4, sigma_bdy=0.3, sigma_tan=0.5, lambda_lose=0.4,
                           lambda_gain=(2.0 if two_sided else 1.0) * 0.3 * 0.4)
    return Model(
        name="affine-pair",
        system=system,
        spec=spec,
        observable_names=(),
        log_weight=lambda x, labels: 0.0,
        observables=lambda x, labels: (),
        initial_state=lambda: ChainState(x0, (EQ,)),
        default_params=params,
        model_params={"two_sided": two_sided},
        kernel={"weight": ("const", np.zeros(2)), "observables": "none"},
    )


# ---------------------------------------------------------------------------

BUILTIN_MODELS = {
    "parabola-line": model_parabola_line,
    "trimer": model_trimer,
    "polymer6": model_polymer6,
    "polymer-wall": model_polymer_wall,
    "ellipsoid": model_ellipsoid,
    "ellipsoid-interior": model_ellipsoid_interior,
}


def make_model(name: str, **kwargs) -> Model:
    """Instantiate a built-in model by name."""
    if name not in BUILTIN_MODELS:
        raise KeyError(f"unknown model {name!r}; available: {sorted(BUILTIN_MODELS)}")
    return BUILTIN_MODELS[name](**kwargs)
