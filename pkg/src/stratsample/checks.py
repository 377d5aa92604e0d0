"""Self tests behind `stratsample check`: gradients, bases, neighbours, flat case.

Each check returns a list of failure strings; empty means healthy.  These
duplicate the fast invariants of the pytest suite in a form that ships with
the installed package.
"""

from __future__ import annotations

import math

import numpy as np

from . import geometry, proposals, sampler
from .constraints import check_gradients, eq_indices, in_indices
from .models import (
    model_affine_pair,
    model_ellipsoid,
    model_parabola_line,
    model_polymer6,
    model_polymer_wall,
    model_trimer,
)


def _random_feasible_points(model, n_points, seed=0):
    """States visited by a short chain, one per stride."""
    stride = 25
    out = []
    for state, _ in sampler.iterate_chain(model, n_points * stride, seed=seed):
        out.append(state)
    return out[stride - 1::stride]


def check_model_gradients(model, n_points=20, seed=0):
    failures = []
    for k, state in enumerate(_random_feasible_points(model, n_points, seed)):
        try:
            check_gradients(model.system, state.x, rel_tol=1e-5)
        except AssertionError as exc:
            failures.append(f"{model.name}: point {k}: {exc}")
    return failures


def check_tangent_bases(model, n_points=20, seed=0):
    failures = []
    for k, state in enumerate(_random_feasible_points(model, n_points, seed)):
        T = geometry.tangent_basis(model.system, state.labels, state.x)
        d = T.shape[1]
        if d and np.abs(T.T @ T - np.eye(d)).max() > 1e-10:
            failures.append(f"{model.name}: point {k}: T^T T != I")
        Q = geometry.constraint_gradient_matrix(model.system, state.labels, state.x)
        if Q.shape[1] and d and np.abs(Q.T @ T).max() > 1e-10 * max(
                1.0, np.abs(Q).max()):
            failures.append(f"{model.name}: point {k}: Q^T T != 0")
    return failures


def check_neighbour_symmetry(model):
    spec = model.spec
    if not spec.explicit:
        return []
    failures = []
    for L in spec.label_list:
        for target, k, _ in spec.gain_neighbours(L):
            back = [t for t, kk, _ in spec.lose_neighbours(target) if kk == k]
            if not any(np.array_equal(b, L) for b in back):
                failures.append(f"{model.name}: gain/lose asymmetry at fn {k}")
    return failures


def check_flat_case(n_trials=200, seed=0):
    """Gain/Lose Metropolis ratios on affine pairs must be exactly one."""
    failures = []
    rng = np.random.default_rng(seed)
    for two_sided in (False, True):
        for d in (1, 3):
            a = rng.standard_normal(d + 1)
            a /= np.linalg.norm(a)
            model = model_affine_pair(a, offset=float(rng.standard_normal()),
                                      two_sided=two_sided)
            st = model.initial_state()
            chain_rng = np.random.default_rng(seed + d)
            for _ in range(n_trials):
                st, out = sampler.sample_strat_step(
                    model, st, model.default_params, chain_rng)
                if out.movetype != "same" and math.isfinite(out.log_mh_ratio):
                    if abs(math.expm1(out.log_mh_ratio)) > 1e-9:
                        failures.append(
                            f"flat d={d} two_sided={two_sided}: ratio off by "
                            f"{math.expm1(out.log_mh_ratio):.2e}")
    return failures


def run_all(verbose=False):
    models = [
        model_parabola_line(),
        model_trimer(2.0),
        model_polymer6(2.0),
        model_polymer_wall(6, 1.0, 0.0),
        model_ellipsoid([1.5, 1.0, 0.5]),
    ]
    failures = []
    for model in models:
        for check in (check_model_gradients, check_tangent_bases,
                      check_neighbour_symmetry):
            errs = check(model) if check is check_neighbour_symmetry else \
                check(model, n_points=10)
            failures += errs
            if verbose:
                status = "FAIL" if errs else "ok"
                print(f"{check.__name__}[{model.name}]: {status}")
    errs = check_flat_case()
    failures += errs
    if verbose:
        print(f"check_flat_case: {'FAIL' if errs else 'ok'}")
        for msg in failures:
            print("  " + msg)
        print("self-test:", "FAIL" if failures else "all checks passed")
    return failures
