import math

import numpy as np
import pytest
from scipy.integrate import quad

import stratsample as ss
from stratsample import geometry
from stratsample.constraints import EQ, check_gradients
from stratsample.models import (
    ellipsoid_interior_volume,
    model_ellipsoid,
    model_ellipsoid_interior,
    model_parabola_line,
    model_polymer6,
    model_polymer_wall,
    model_trimer,
    parabola_line_theory,
    polymer6_backbone,
    polymer6_pairs,
    triangle_probability,
    trimer_angle,
)

from conftest import random_feasible_states


def test_parabola_line_structure():
    model = model_parabola_line()
    assert model.spec.n_manifolds == 4
    # Corner point set {(-sqrt(2), 2), (sqrt(2), 2)}
    for sx in (-1.0, 1.0):
        x = np.array([sx * math.sqrt(2.0), 2.0])
        assert abs(model.system.value(0, x)) < 1e-12
        assert abs(model.system.value(1, x)) < 1e-12
    th = parabola_line_theory()
    np.testing.assert_allclose(th, [0.2748, 0.3734, 0.2061, 0.1457], atol=5e-5)
    assert model.density_weight(np.array([0.0, 1.0]),
                                model.spec.label_list[0]) == 1.0


def test_trimer_constants():
    assert triangle_probability(1.0) == pytest.approx(0.355391, abs=1e-6)
    x = np.array([0.0, 0.0, 1.0, 0.0, 0.5, math.sqrt(3) / 2])
    model = model_trimer(1.0)
    # Distance-gauge pseudodeterminant at the unit triangle.
    Q = geometry.constraint_gradient_matrix(model.system, [EQ] * 3, x) / 2.0
    assert math.sqrt(np.linalg.det(Q.T @ Q)) == pytest.approx(
        math.sqrt(27.0 / 4.0), rel=1e-12)
    # weight = kappa^3 / |Q| there
    kappa = 1.7
    w = model_trimer(kappa).density_weight(x, [EQ] * 3)
    assert w == pytest.approx(kappa ** 3 / math.sqrt(27.0 / 4.0), rel=1e-10)


def _trimer_shape(theta):
    """Centered polymer configuration with opening angle theta."""
    h, c = theta / 2.0, theta
    return np.array([-math.sin(h), -math.cos(h) / 3.0, 0.0,
                     2.0 * math.cos(h) / 3.0, math.sin(h), -math.cos(h) / 3.0])


def test_trimer_analytic_law_by_quadrature():
    # Independent oracle for the weight convention: integrating the
    # implemented polymer weight over the shape parameterization (times the
    # rotational volume |x|) must reproduce P_Triangle = kappa/(kappa+pi/sqrt(3)).
    kappa = 2.3
    model = model_trimer(kappa)
    polymer, triangle = model.spec.label_list

    def integrand(theta):
        x = _trimer_shape(theta)
        h = 1e-6
        dx = (_trimer_shape(theta + h) - _trimer_shape(theta - h)) / (2 * h)
        return (model.density_weight(x, polymer) * np.linalg.norm(x)
                * np.linalg.norm(dx))

    poly_mass, _ = quad(integrand, math.pi / 3 + 1e-9, 5 * math.pi / 3 - 1e-9,
                        limit=200)
    x_tri = np.array([0.0, 0.0, 1.0, 0.0, 0.5, math.sqrt(3) / 2])
    x_tri = x_tri - np.tile(x_tri.reshape(3, 2).mean(axis=0), 3)
    tri_mass = 2.0 * model.density_weight(x_tri, triangle) * np.linalg.norm(x_tri)
    p_triangle = tri_mass / (tri_mass + poly_mass)
    assert p_triangle == pytest.approx(triangle_probability(kappa), rel=1e-6)


def test_trimer_angle_observable():
    assert trimer_angle(np.array([-1.0, 0, 0, 0, 1.0, 0])) == pytest.approx(math.pi)
    x = _trimer_shape(2.0)
    assert trimer_angle(x) == pytest.approx(2.0, abs=1e-12)
    x = _trimer_shape(4.5)
    assert trimer_angle(x) == pytest.approx(4.5, abs=1e-12)


def test_polymer6_typed_weight_reduces_to_untyped():
    untyped = model_polymer6(kappa=2.885)
    typed = model_polymer6(kappa_aa=2.885, kappa_ab=2.885, kappa_bb=2.885)
    state = untyped.initial_state()
    rng = np.random.default_rng(1)
    for _ in range(5):
        labels = state.labels.copy()
        flip = rng.choice(np.flatnonzero(untyped.spec.fix_flags == 0), 3,
                          replace=False)
        a = untyped.log_weight(state.x, labels)
        b = typed.log_weight(state.x, labels)
        assert a == b  # bit identical: one code path


def test_polymer6_observables_and_masks():
    model = model_polymer6()
    state = model.initial_state()
    m, naa, nab, nbb, mask = model.observables(state.x, state.labels)
    assert (m, naa, nab, nbb, mask) == (5.0, 0.0, 0.0, 0.0, 0.0)
    labels = state.labels.copy()
    off = np.flatnonzero(model.spec.fix_flags == 0)
    labels[off[0]] = EQ  # pair (1,3): both ends... types B,A -> AB
    m, naa, nab, nbb, mask = model.observables(state.x, labels)
    assert m == 6.0 and mask == 1.0
    pairs = polymer6_pairs()
    i, j = pairs[off[0]]
    types = "BAAAAB"
    kinds = {"AA": naa, "AB": nab, "BB": nbb}
    assert kinds["".join(sorted(types[i] + types[j]))] == 1.0


def test_polymer6_initial_state_feasible():
    model = model_polymer6()
    st = model.initial_state()
    assert st.check_feasible(model.system, 1e-8)
    # straight-ish chain: all backbone contacts exact
    for k, (i, j) in enumerate(polymer6_pairs()):
        if (i, j) in set(polymer6_backbone()):
            assert abs(model.system.value(k, st.x)) < 1e-8


def test_polymer_wall_bend_energy():
    flat = model_polymer_wall(6, 1.0, 0.0)
    stiff = model_polymer_wall(6, 1.0, 2.0)
    st = flat.initial_state()
    # Straight chain: every angle cosine is 1, the bend term vanishes.
    assert stiff.log_weight(st.x, st.labels) == pytest.approx(
        flat.log_weight(st.x, st.labels))
    # Bend one joint by 90 degrees off the wall manifold bookkeeping:
    x = st.x.copy().reshape(6, 3)
    x[5] = x[4] + np.array([0.0, 1.0, 0.0])
    x = x.reshape(-1)
    labels = st.labels.copy()
    labels[-1] = 2  # last sphere off the wall (IN)
    dw = stiff.log_weight(x, labels) - flat.log_weight(x, labels)
    assert dw == pytest.approx(-0.5 * 2.0 * 1.0)  # one right angle


def test_polymer_wall_observables():
    model = model_polymer_wall(5, 1.0)
    st = model.initial_state()
    n_wall, frac, r_end = model.observables(st.x, st.labels)
    assert n_wall == 5.0 and frac == 1.0
    assert r_end == pytest.approx(4.0)


def test_ellipsoid_model_shapes():
    ax = [2, 2, 2, 2, 3, 3, 3, 1, 1, 1]
    model = model_ellipsoid(ax, c_exponent=0.94)
    assert model.spec.n_manifolds == 10
    # Deepest level contains exactly the two points +-a_1 e_1.
    lab = model.spec.label_list[-1]
    for s in (2.0, -2.0):
        x = np.zeros(10)
        x[0] = s
        assert all(abs(model.system.value(k, x)) < 1e-12 for k in range(10))
    assert ellipsoid_interior_volume(ax) == pytest.approx(
        math.pi ** 5 * 432 / 120, rel=1e-12)
    assert ellipsoid_interior_volume(ax) == pytest.approx(1101.7, abs=0.05)
    # weights c_k = exp(0.94 k)
    x0 = model.initial_state().x
    assert model.density_weight(x0, model.spec.label_list[2]) == pytest.approx(
        math.exp(0.94 * 3))


def test_ellipsoid_interior_model():
    model = model_ellipsoid_interior([1.0, 1.0])
    st = model.initial_state()
    assert st.check_feasible(model.system, 1e-12)
    surf, inner = model.spec.label_list
    assert model.spec.gain_neighbours(surf)[0][1] == 0
    assert not model.spec.gain_neighbours(surf)[0][2]  # one-sided


def test_all_model_gradients_against_finite_differences():
    models = [model_parabola_line(), model_trimer(2.0), model_polymer6(2.0),
              model_polymer_wall(6, 1.0, 1.5), model_ellipsoid([2.0, 1.0, 0.5])]
    for model in models:
        for state in random_feasible_states(model, 5, seed=13):
            check_gradients(model.system, state.x, rel_tol=1e-5)


def test_make_model_registry():
    with pytest.raises(KeyError):
        ss.make_model("nope")
    m = ss.make_model("trimer", kappa=3.0)
    assert m.model_params["kappa"] == 3.0
    with pytest.raises(ValueError):
        ss.make_model("trimer", kappa=-1.0)
    with pytest.raises(ValueError):
        ss.make_model("polymer6", kappa_aa=1.0)  # incomplete typed table
