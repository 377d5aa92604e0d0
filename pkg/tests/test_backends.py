"""Compiled-versus-Python backend agreement and the benchmark hook."""

import numpy as np
import pytest

import stratsample as ss
from stratsample import backend, bench, geometry
from stratsample.models import (
    model_ellipsoid,
    model_parabola_line,
    model_polymer6,
    model_trimer,
)

needs_compiled = pytest.mark.skipif(not backend.compiled_available(),
                                    reason="compiled kernels not built")


@needs_compiled
def test_backend_resolution():
    model = model_parabola_line()
    assert backend.resolve(model, "auto") == "compiled"
    assert backend.resolve(model, "python") == "python"
    with pytest.raises(ValueError):
        backend.resolve(model, "weird")


@needs_compiled
def test_compiled_same_seed_identical():
    model = model_trimer(2.0)
    a = ss.run_chain(model, 20000, thin=10, seed=8, backend="compiled")
    b = ss.run_chain(model, 20000, thin=10, seed=8, backend="compiled")
    assert a.obs.tobytes() == b.obs.tobytes()
    assert a.reason_counts == b.reason_counts


@needs_compiled
def test_compiled_tangent_matches_python_subspace():
    from stratsample import _kernelspec

    model = model_trimer(1.0)
    ck = _kernelspec._kernel(model)
    rng = np.random.default_rng(3)
    for m in (1, 2, 3):
        Q = rng.standard_normal((6, m))
        T_c = ck.dbg_tangent(Q)
        T_p = geometry.tangent_basis_from_gradients(Q)
        assert T_c.shape == T_p.shape
        # Same subspace: projectors agree.
        assert np.abs(T_c @ T_c.T - T_p @ T_p.T).max() < 1e-10
        assert np.abs(T_c.T @ T_c - np.eye(T_c.shape[1])).max() < 1e-10


@needs_compiled
@pytest.mark.parametrize("factory,kwargs", [
    (model_parabola_line, {}),
    (model_trimer, {"kappa": 2.0}),
    (model_polymer6, {"kappa": 2.0}),
    (model_ellipsoid, {"semiaxes": [2.0, 1.0, 1.0]}),
])
def test_backends_agree_statistically(factory, kwargs):
    """Same model, both backends: per-manifold fractions within joint errors."""
    model = factory(**kwargs)
    n = 150_000
    tr_c = ss.run_chain(model, n, thin=10, seed=5, backend="compiled")
    tr_p = ss.run_chain(model, 30_000, thin=10, seed=6, backend="python")
    from stratsample.analysis import manifold_fraction_errors

    ec = manifold_fraction_errors(tr_c)
    ep = manifold_fraction_errors(tr_p)
    for mid in set(ec) | set(ep):
        a = ec.get(mid)
        b = ep.get(mid)
        va, sa = (a.value, a.std_error) if a else (0.0, 0.0)
        vb, sb = (b.value, b.std_error) if b else (0.0, 0.0)
        sigma = max(np.hypot(sa, sb), 5e-3)
        assert abs(va - vb) < 5 * sigma, f"{model.name} manifold {mid}"


@needs_compiled
def test_compiled_visit_counts_partition(polymer6_trace_2885):
    tr = polymer6_trace_2885
    assert sum(tr.visit_counts.values()) == tr.n_steps
    assert sum(tr.reason_counts.values()) == tr.n_steps
    # Canonical label strings: 15 characters, E or I only.
    assert all(set(k) <= {"E", "I"} and len(k) == 15 for k in tr.visit_counts)


@needs_compiled
def test_benchmark_reports_both_backends():
    model = model_trimer(2.0)
    res = bench.compare_backends(model, n_steps=4000, thin=10, seed=0)
    assert set(res) == {"python", "compiled"}
    assert res["compiled"]["seconds"] < res["python"]["seconds"]


def test_python_backend_always_available():
    model = model_parabola_line()
    assert backend.resolve(model, "python") == "python"


@needs_compiled
def test_large_wall_uses_dict_visit_counting():
    """More than 20 varying functions: per-label dict counting inside the
    kernel (mask arrays would not fit)."""
    model = ss.make_model("polymer-wall", n_spheres=25, kappa=1.0)
    tr = ss.run_chain(model, 3000, thin=10, seed=2, backend="compiled")
    assert sum(tr.visit_counts.values()) == 3000
    assert all(len(k) == 24 + 25 for k in tr.visit_counts)
