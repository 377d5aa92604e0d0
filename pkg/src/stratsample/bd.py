"""Brownian-dynamics reference simulation for the six-sphere polymer.

Backbone neighbours interact through stiff springs, every other pair
through a Morse potential; overdamped dynamics at unit temperature are
integrated with Euler-Maruyama.  This is the independent physics oracle
against which the constraint sampler's bond statistics are checked: the
Morse well depth E maps to a sticky parameter through the Boltzmann
integral kappa(E).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .models import POLYMER6_N, polymer6_backbone, polymer6_pairs
from .traces import ChainTrace


@dataclass(frozen=True)
class PotentialParams:
    """Morse depth E (units of kT), inverse range rho, spring constant."""

    E: float
    rho: float = 60.0
    k_spring: float | None = None
    contact: float = 1.0

    def __post_init__(self):
        if self.E < 0 or self.rho <= 0:
            raise ValueError("need E >= 0 and rho > 0")
        if self.k_spring is None:
            # Matches the spring width to the Morse well width.
            object.__setattr__(self, "k_spring", 6.0 * self.rho ** 2)

    @property
    def cutoff(self) -> float:
        """Bond-detection and integration cutoff."""
        return self.contact + 2.5 / self.rho


_PAIRS = np.array(polymer6_pairs())
_BACKBONE = set(polymer6_backbone())
_IS_BACKBONE = np.array([tuple(p) in _BACKBONE for p in _PAIRS])


def morse(r, params):
    e = np.exp(-params.rho * (r - params.contact))
    return params.E * (1.0 - e) ** 2 - params.E


def total_energy_and_gradient(x, params):
    """U(x) and its gradient for the 6-sphere chain in R^18."""
    p = np.asarray(x, dtype=float).reshape(POLYMER6_N, 3)
    d = p[_PAIRS[:, 0]] - p[_PAIRS[:, 1]]
    r = np.linalg.norm(d, axis=1)
    u = np.zeros(15)
    du = np.zeros(15)
    bb = _IS_BACKBONE
    u[bb] = 0.5 * params.k_spring * (r[bb] - params.contact) ** 2
    du[bb] = params.k_spring * (r[bb] - params.contact)
    e = np.exp(-params.rho * (r[~bb] - params.contact))
    u[~bb] = params.E * (1.0 - e) ** 2 - params.E
    du[~bb] = 2.0 * params.E * params.rho * (1.0 - e) * e
    grad = np.zeros((POLYMER6_N, 3))
    f = (du / r)[:, None] * d
    np.add.at(grad, _PAIRS[:, 0], f)
    np.add.at(grad, _PAIRS[:, 1], -f)
    return float(u.sum()), grad.reshape(-1)


def em_step(x, dt, params, rng):
    """One Euler-Maruyama step of dX = -grad U dt + sqrt(2) dW."""
    _, g = total_energy_and_gradient(x, params)
    return x - g * dt + math.sqrt(2.0 * dt) * rng.standard_normal(x.shape[0])


def sticky_kappa_of_E(E, rho=60.0) -> float:
    """Boltzmann integral of the Morse bond out to the cutoff.

    Quadrature, not Laplace asymptotics: the well is too shallow for the
    asymptotic form at the depths of interest.  At E = 0 the integrand is
    one and kappa equals the cutoff length.
    """
    params = PotentialParams(E=E, rho=rho)
    val, _ = integrate.quad(lambda r: math.exp(-morse(r, params)),
                            0.0, params.cutoff, points=[params.contact],
                            limit=200)
    return float(val)


def morse_depth_for_kappa(kappa, rho=60.0, bracket=(0.0, 40.0)) -> float:
    """Invert kappa(E) by bisection."""
    lo, hi = bracket
    if not sticky_kappa_of_E(lo, rho) <= kappa <= sticky_kappa_of_E(hi, rho):
        raise ValueError(f"kappa={kappa} outside the bracketed range")
    return float(optimize.brentq(
        lambda E: sticky_kappa_of_E(E, rho) - kappa, lo, hi, xtol=1e-10))


def bond_census(x, cutoff):
    """Total bond count and per-pair bond mask of the breakable pairs.

    Backbone pairs always count (their springs hold them at contact); a
    breakable pair is bonded when its centre distance is below the cutoff.
    """
    p = np.asarray(x, dtype=float).reshape(POLYMER6_N, 3)
    d = p[_PAIRS[:, 0]] - p[_PAIRS[:, 1]]
    r = np.linalg.norm(d, axis=1)
    off = ~_IS_BACKBONE
    bonded = r[off] < cutoff
    mask = 0
    for bit, b in enumerate(bonded):
        if b:
            mask |= 1 << bit
    return int(_IS_BACKBONE.sum() + bonded.sum()), mask


def _straight_chain():
    x = np.zeros(POLYMER6_N * 3)
    x[0::3] = np.arange(POLYMER6_N)
    return x


def run_bd_python(params, total_time, dt=1e-6, record_every=0.05, seed=0,
                  burn_in=0.1, census_cutoff=None) -> ChainTrace:
    """Pure-Python BD run (slow; the compiled kernel covers real runs)."""
    rng = np.random.default_rng(seed)
    cutoff = params.cutoff if census_cutoff is None else census_cutoff
    x = _straight_chain()
    n_steps = int(round(total_time / dt))
    stride = max(1, int(round(record_every / dt)))
    skip = int(burn_in * n_steps)
    t0 = time.perf_counter()
    recs = []
    for k in range(1, n_steps + 1):
        x = em_step(x, dt, params, rng)
        if k > skip and k % stride == 0:
            m, mask = bond_census(x, cutoff)
            recs.append((k, m, mask))
    return _bd_trace(recs, params, total_time, dt, seed,
                     time.perf_counter() - t0, backend="python")


def _bd_trace(recs, params, total_time, dt, seed, wall, backend):
    from .analysis import _adjacency_from_mask  # noqa: F401 (shared format)
    from .models import POLYMER6_TYPES, pair_type

    pairs = polymer6_pairs()
    off = [p for p in pairs if tuple(p) not in _BACKBONE]
    types = [pair_type(i, j) for i, j in off]
    step = np.array([r[0] for r in recs], dtype=np.int64)
    m = np.array([r[1] for r in recs], dtype=np.int64)
    masks = np.array([r[2] for r in recs], dtype=np.int64)
    obs = np.zeros((len(recs), 5))
    man = []
    for k, mask in enumerate(masks):
        naa = nab = nbb = 0
        tags = []
        for bit, t in enumerate(types):
            if mask >> bit & 1:
                naa += t == "AA"
                nab += t == "AB"
                nbb += t == "BB"
        obs[k] = (m[k], naa, nab, nbb, mask)
        # Same canonical label string the sampler would emit.
        bits = {off[i]: (mask >> i & 1) for i in range(len(off))}
        man.append("".join(
            "E" if (tuple(p) in _BACKBONE or bits.get(tuple(p), 0)) else "I"
            for p in pairs))
    return ChainTrace(
        model_name="polymer6-bd",
        observable_names=("m", "n_aa", "n_ab", "n_bb", "bond_mask"),
        step=step, manifold=man, m=m, obs=obs,
        n_steps=int(round(total_time / dt)), thin=0, seed=seed,
        backend=backend,
        params={"E": params.E, "rho": params.rho, "k_spring": params.k_spring,
                "dt": dt, "total_time": total_time,
                "kappa": sticky_kappa_of_E(params.E, params.rho)},
        model_params={},
        wall_time=wall,
    )


def run_bd(params, total_time, dt=1e-6, record_every=0.05, seed=0,
           burn_in=0.1, backend="auto", census_cutoff=None) -> ChainTrace:
    """Run the polymer BD oracle; compiled kernel when available.

    census_cutoff overrides the bond-detection distance (the trajectory is
    unaffected, so same-seed runs give a cutoff sensitivity sweep on
    identical paths).
    """
    from . import backend as _backend

    use_compiled = _backend.compiled_available() and backend in ("auto", "compiled")
    if backend == "compiled" and not _backend.compiled_available():
        raise RuntimeError("compiled backend requested but not built")
    if not use_compiled:
        return run_bd_python(params, total_time, dt, record_every, seed,
                             burn_in, census_cutoff)

    from . import _core

    n_steps = int(round(total_time / dt))
    stride = max(1, int(round(record_every / dt)))
    skip = int(burn_in * n_steps)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    cutoff = params.cutoff if census_cutoff is None else census_cutoff
    step, m, mask = _core.run_bd(
        _straight_chain(), float(params.E), float(params.rho),
        float(params.k_spring), float(params.contact), float(cutoff),
        float(dt), n_steps, stride, skip, rng)
    recs = list(zip(step.tolist(), m.tolist(), mask.tolist()))
    return _bd_trace(recs, params, total_time, dt, seed,
                     time.perf_counter() - t0, backend="compiled")
