import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratsample import geometry
from stratsample.constraints import (
    EQ,
    IN,
    NONE,
    DegenerateConfigurationError,
    DiagonalQuadratic,
    StructuredConstraintSystem,
)
from stratsample.models import model_parabola_line, model_polymer6, model_trimer

from conftest import random_feasible_states


def circle_system():
    return StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(1.0, 1.0), lin=(0.0, 0.0), const=-1.0)])


def test_gradient_matrix_columns_in_tag_order():
    model = model_parabola_line()
    Q = geometry.constraint_gradient_matrix(model.system, [EQ, IN],
                                            np.array([1.0, 1.0]))
    np.testing.assert_allclose(Q[:, 0], [-2.0, 1.0])


def test_trimer_triangle_gram_determinants():
    # Unit triangle: det(Q^T Q) is 432 for squared-distance gradients and
    # 27/4 for the distance-gauge columns (each pair column scales by 2r).
    model = model_trimer()
    x = np.array([0.0, 0.0, 1.0, 0.0, 0.5, math.sqrt(3) / 2])
    Q = geometry.constraint_gradient_matrix(model.system, [EQ, EQ, EQ], x)
    det_sq = np.linalg.det(Q.T @ Q)
    assert det_sq == pytest.approx(432.0, rel=1e-10)
    assert math.sqrt(det_sq) / 2 ** 3 == pytest.approx(math.sqrt(27.0 / 4.0),
                                                       rel=1e-10)


def test_polymer_backbone_full_rank():
    model = model_polymer6()
    state = model.initial_state()
    Q = geometry.constraint_gradient_matrix(model.system, state.labels, state.x)
    assert Q.shape == (18, 5)
    assert np.linalg.matrix_rank(Q) == 5


def test_tangent_basis_circle():
    T = geometry.tangent_basis(circle_system(), [EQ], np.array([1.0, 0.0]))
    assert T.shape == (2, 1)
    np.testing.assert_allclose(np.abs(T[:, 0]), [0.0, 1.0], atol=1e-12)


def test_tangent_basis_special_dimensions():
    sys_ = circle_system()
    T = geometry.tangent_basis(sys_, [IN], np.array([2.0, 0.0]))
    np.testing.assert_allclose(T, np.eye(2))
    model = model_parabola_line()
    corner = np.array([math.sqrt(2.0), 2.0])
    T0 = geometry.tangent_basis(model.system, [EQ, EQ], corner)
    assert T0.shape == (2, 0)


def test_tangent_basis_rank_deficiency_raises():
    sys_ = StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(0, 0), lin=(1.0, 1.0), const=0.0),
        DiagonalQuadratic(quad=(0, 0), lin=(2.0, 2.0), const=0.0)])
    with pytest.raises(DegenerateConfigurationError):
        geometry.tangent_basis(sys_, [EQ, EQ], np.zeros(2))


def test_tangent_basis_invariants_on_models(parabola_trace=None):
    for model in (model_parabola_line(), model_trimer(), model_polymer6()):
        for state in random_feasible_states(model, 6, seed=3):
            T = geometry.tangent_basis(model.system, state.labels, state.x)
            d = T.shape[1]
            if d:
                assert np.abs(T.T @ T - np.eye(d)).max() < 1e-10
            Q = geometry.constraint_gradient_matrix(model.system, state.labels,
                                                    state.x)
            if Q.size and d:
                assert np.abs(Q.T @ T).max() < 1e-10 * max(1.0, np.abs(Q).max())


def test_perp_basis_plane_cases():
    Tv = geometry.tangent_basis_perp_v(np.eye(2), np.array([1.0, 0.0]))
    np.testing.assert_allclose(np.abs(Tv), [[0.0], [1.0]], atol=1e-12)

    Tv3 = geometry.tangent_basis_perp_v(np.eye(3), np.array([0.0, 0.0, 1.0]))
    assert Tv3.shape == (3, 2)
    assert np.abs(Tv3[2]).max() < 1e-12
    assert np.abs(Tv3.T @ Tv3 - np.eye(2)).max() < 1e-12


def test_perp_basis_sphere_north_pole():
    sys_ = StructuredConstraintSystem(3, [
        DiagonalQuadratic(quad=(1, 1, 1), lin=(0, 0, 0), const=-1.0)])
    x = np.array([0.0, 0.0, 1.0])
    T = geometry.tangent_basis(sys_, [EQ], x)
    v = T[:, 0]
    Tv = geometry.tangent_basis_perp_v(T, v)
    assert Tv.shape == (3, 1)
    assert abs(Tv[:, 0] @ v) < 1e-12
    assert abs(Tv[:, 0] @ x) < 1e-12  # orthogonal to the pole axis too
    assert np.linalg.norm(Tv[:, 0]) == pytest.approx(1.0)


def test_boundary_distance_estimates():
    line = StructuredConstraintSystem(1, [
        DiagonalQuadratic(quad=(0.0,), lin=(1.0,), const=0.0)])
    h = geometry.boundary_distance_estimate(line, [IN], np.array([0.5]),
                                            np.eye(1), 0)
    assert h == pytest.approx(0.5)

    plane = StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(0, 0), lin=(0.0, -1.0), const=2.0)])
    h = geometry.boundary_distance_estimate(plane, [IN], np.array([3.0, 1.4]),
                                            np.eye(2), 0)
    assert h == pytest.approx(0.6)

    h = geometry.boundary_distance_estimate(circle_system(), [IN],
                                            np.array([2.0, 0.0]), np.eye(2), 0)
    assert h == pytest.approx(3.0 / 4.0)  # linearization, not the true distance 1


def test_boundary_distance_unreachable():
    # Gradient orthogonal to the tangent space: report +inf.
    sys_ = StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(0, 0), lin=(0.0, 1.0), const=1.0)])
    T = np.array([[1.0], [0.0]])
    assert geometry.boundary_distance_estimate(sys_, [IN], np.zeros(2), T, 0) \
        == math.inf


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.data())
def test_boundary_distance_exact_for_affine(n, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 10**6)))
    a = rng.standard_normal(n)
    b = rng.standard_normal()
    sys_ = StructuredConstraintSystem(n, [
        DiagonalQuadratic(quad=tuple(np.zeros(n)), lin=tuple(a), const=b)])
    x = rng.standard_normal(n)
    if sys_.value(0, x) == 0.0:
        x = x + 1.0
    h = geometry.boundary_distance_estimate(sys_, [IN], x, np.eye(n), 0)
    true = abs(a @ x + b) / np.linalg.norm(a)
    assert h == pytest.approx(true, abs=1e-12)


def test_boundary_direction_cases():
    up = StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(0, 0), lin=(0.0, -1.0), const=2.0)])
    v = geometry.boundary_direction(up, [IN], np.array([0.0, 1.0]), np.eye(2), 0)
    np.testing.assert_allclose(v, [0.0, 1.0], atol=1e-12)

    xline = StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(0, 0), lin=(1.0, 0.0), const=0.0)])
    v = geometry.boundary_direction(xline, [IN], np.array([0.5, 0.0]),
                                    np.eye(2), 0)
    np.testing.assert_allclose(v, [-1.0, 0.0], atol=1e-12)
    # Two-sided target on the negative side: sign flips.
    v = geometry.boundary_direction(xline, [NONE], np.array([-0.5, 0.0]),
                                    np.eye(2), 0)
    np.testing.assert_allclose(v, [1.0, 0.0], atol=1e-12)


def test_boundary_direction_is_unit_tangent():
    model = model_trimer()
    for state in random_feasible_states(model, 5, seed=11):
        if state.labels[1] != IN:
            continue
        T = geometry.tangent_basis(model.system, state.labels, state.x)
        v = geometry.boundary_direction(model.system, state.labels, state.x, T, 1)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
        Q = geometry.constraint_gradient_matrix(model.system, state.labels,
                                                state.x)
        assert np.abs(Q.T @ v).max() < 1e-10 * max(1.0, np.abs(Q).max())


def test_cross_tangent_pseudodet():
    T = np.linalg.qr(np.random.default_rng(1).standard_normal((5, 3)))[0]
    assert geometry.cross_tangent_pseudodet(T, T) == pytest.approx(1.0)

    th = 0.7
    Ta = np.array([[1.0], [0.0]])
    Tb = np.array([[math.cos(th)], [math.sin(th)]])
    assert geometry.cross_tangent_pseudodet(Ta, Tb) == pytest.approx(abs(math.cos(th)))

    assert geometry.cross_tangent_pseudodet(np.zeros((3, 0)), np.zeros((3, 0))) == 1.0


def test_cross_tangent_matches_principal_angles():
    rng = np.random.default_rng(5)
    for _ in range(5):
        Ta = np.linalg.qr(rng.standard_normal((7, 3)))[0]
        Tb = np.linalg.qr(rng.standard_normal((7, 4)))[0]
        got = geometry.cross_tangent_pseudodet(Ta, Tb)
        s = np.linalg.svd(Ta.T @ Tb, compute_uv=False)
        want = np.prod(s[s > 1e-12])
        assert got == pytest.approx(want, rel=1e-12)
        # square case is symmetric
        Tc = np.linalg.qr(rng.standard_normal((7, 3)))[0]
        assert geometry.cross_tangent_pseudodet(Ta, Tc) == pytest.approx(
            geometry.cross_tangent_pseudodet(Tc, Ta), rel=1e-12)
