import math

import numpy as np
import pytest
from scipy.optimize import brentq

from stratsample.constraints import (
    EQ,
    DiagonalQuadratic,
    StructuredConstraintSystem,
)
from stratsample.projection import NewtonSettings, nes, nes_l

SETTINGS = NewtonSettings()


def circle():
    return StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(1.0, 1.0), lin=(0.0, 0.0), const=-1.0)])


def test_nes_circle_closed_form():
    # Solve (1+2a)^2 + 0.1^2 = 1 for a: the projection along the base-point
    # gradient column Q = (2, 0).
    sys_ = circle()
    Q = np.array([[2.0], [0.0]])
    res = nes(sys_, np.array([1.0, 0.1]), Q, [0], SETTINGS)
    assert res.ok
    a_exact = (math.sqrt(0.99) - 1.0) / 2.0
    np.testing.assert_allclose(res.y, [math.sqrt(0.99), 0.1], atol=1e-12)
    assert (res.y[0] - 1.0) / 2.0 == pytest.approx(a_exact, abs=1e-12)
    assert a_exact == pytest.approx(-0.0025063, abs=1e-7)


def test_nes_already_on_manifold():
    sys_ = circle()
    Q = np.array([[2.0], [0.0]])
    res = nes(sys_, np.array([1.0, 0.0]), Q, [0], SETTINGS)
    assert res.ok
    assert res.iterations <= 1
    np.testing.assert_allclose(res.y, [1.0, 0.0])


def test_nes_divergence_fails():
    # From the centre the Newton direction is degenerate.
    sys_ = circle()
    Q = np.array([[2.0], [0.0]])
    res = nes(sys_, np.array([0.0, 0.0]), Q, [0], SETTINGS)
    assert not res.ok


def test_nes_l_affine_exact():
    sys_ = StructuredConstraintSystem(2, [
        DiagonalQuadratic(quad=(0.0, 0.0), lin=(0.0, -1.0), const=2.0)])
    x = np.zeros(2)
    v = np.array([0.0, 1.0])
    res = nes_l(sys_, x, v.reshape(2, 1), [], 0, v, SETTINGS)
    assert res.ok
    np.testing.assert_allclose(res.y, [0.0, 2.0], atol=1e-12)
    assert res.alpha == pytest.approx(2.0)
    # The initial iterate already carries the exact affine boundary
    # distance, so no Newton solve is needed at all.
    assert res.iterations == 0

    res = nes_l(sys_, x, -v.reshape(2, 1), [], 0, -v, SETTINGS)
    assert res.ok
    assert res.alpha == pytest.approx(-2.0)  # caller rejects the sign


def test_nes_l_circle_alpha_matches_bisection():
    # Step from an interior point toward the circle: alpha from the solver
    # equals the 1-D root of q(x + alpha v) (no other constraints, so the
    # normal correction vanishes).
    sys_ = circle()
    x = np.array([0.3, 0.2])
    v = np.array([0.8, 0.6])
    v = v / np.linalg.norm(v)
    res = nes_l(sys_, x, v.reshape(2, 1), [], 0, v, SETTINGS)
    assert res.ok
    alpha_true = brentq(lambda a: sys_.value(0, x + a * v), 0.0, 2.0)
    assert res.alpha == pytest.approx(alpha_true, abs=1e-10)
    assert abs(sys_.value(0, res.y)) < SETTINGS.tol


def test_projection_determinism():
    sys_ = circle()
    Q = np.array([[1.7], [0.9]])
    z = np.array([1.1, 0.13])
    r1 = nes(sys_, z, Q, [0], SETTINGS)
    r2 = nes(sys_, z, Q, [0], SETTINGS)
    assert r1.ok and r2.ok
    assert r1.y.tobytes() == r2.y.tobytes()
    assert r1.iterations == r2.iterations


def test_affine_systems_converge_in_one_iteration():
    rng = np.random.default_rng(2)
    for n, m in ((3, 1), (5, 2), (6, 3)):
        terms = []
        for _ in range(m):
            terms.append(DiagonalQuadratic(quad=tuple(np.zeros(n)),
                                           lin=tuple(rng.standard_normal(n)),
                                           const=rng.standard_normal()))
        sys_ = StructuredConstraintSystem(n, terms)
        eq = list(range(m))
        x0 = rng.standard_normal(n)
        Q = sys_.gradient_matrix(eq, x0)
        res = nes(sys_, x0, Q, eq, SETTINGS)
        assert res.ok and res.iterations == 1

        v = rng.standard_normal(n)
        # Component along one gradient so the added equation is reachable.
        v = v / np.linalg.norm(v)
        extra = DiagonalQuadratic(quad=tuple(np.zeros(n)),
                                  lin=tuple(rng.standard_normal(n)),
                                  const=rng.standard_normal())
        sys2 = StructuredConstraintSystem(n, terms + [extra])
        Qv = np.column_stack([sys2.gradient_matrix(eq, x0), v])
        res = nes_l(sys2, x0, Qv, eq, m, v, SETTINGS)
        if res.ok:
            assert res.iterations <= 1


def test_solution_stays_in_column_span():
    sys_ = circle()
    Q = np.array([[2.0], [0.0]])
    z = np.array([1.05, 0.2])
    res = nes(sys_, z, Q, [0], SETTINGS)
    assert res.ok
    # y - z must lie in span(Q)
    resid = res.y - z
    proj = Q @ np.linalg.lstsq(Q, resid, rcond=None)[0]
    assert np.abs(resid - proj).max() < 1e-8


def test_newton_iteration_budget_is_modest():
    # Quadratic convergence in practice: well under the iteration cap for
    # step sizes the samplers actually use.
    sys_ = circle()
    rng = np.random.default_rng(8)
    for _ in range(50):
        th = rng.uniform(0, 2 * math.pi)
        x = np.array([math.cos(th), math.sin(th)])
        Q = sys_.gradient_matrix([0], x)
        z = x + 0.4 * rng.standard_normal(2)
        res = nes(sys_, z, Q, [0], SETTINGS)
        if res.ok:
            assert res.iterations <= 10


def test_settings_validation():
    with pytest.raises(ValueError):
        NewtonSettings(tol=0.0)
    with pytest.raises(ValueError):
        NewtonSettings(max_iter=0)
