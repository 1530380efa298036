import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marangoni.errors import Blowup, PreconditionError
from marangoni.quadratic import (QuadraticSystem, TargetField, build_realizer, evaluate, generic_tensor,
                                 integrate, relaxation_time, slow_jacobian, slow_manifold_residual)

K8 = generic_tensor(8, seed=1, scale=0.5)
SADDLE = TargetField(2, np.zeros((2, 2, 2)), np.diag([1.0, -1.0]), np.zeros(2))
_D = np.zeros((2, 2, 2))
_D[0, 0, 1], _D[1, 0, 0] = 0.2, -0.1
ATTRACTING = TargetField(2, _D, np.array([[-1.0, 0.5], [-0.5, -1.0]]), np.array([0.2, -0.1]))


def test_evaluate_trivial_cases():
    s = QuadraticSystem(np.zeros((3, 3, 3)), np.eye(3), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(evaluate(s, np.zeros(3)), s.g)
    s0 = QuadraticSystem(np.zeros((3, 3, 3)), np.eye(3), np.zeros(3))
    X = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(evaluate(s0, X), X)


@given(st.integers(0, 2 ** 31 - 1))
def test_evaluate_matches_triple_loop(seed):
    r = np.random.default_rng(seed)
    s = QuadraticSystem(r.normal(size=(3, 3, 3)), r.normal(size=(3, 3)), r.normal(size=3))
    X = r.normal(size=3)
    ref = np.zeros(3)
    for i in range(3):
        ref[i] = s.g[i] + sum(s.M[i, j] * X[j] for j in range(3))
        for j in range(3):
            for l in range(3):
                ref[i] += s.K[i, j, l] * X[j] * X[l]
    np.testing.assert_allclose(evaluate(s, X), ref, rtol=1e-13, atol=1e-13)


def test_dimension_checks():
    with pytest.raises(PreconditionError):
        QuadraticSystem(np.zeros((2, 2, 2)), np.eye(3), np.zeros(3))
    with pytest.raises(PreconditionError):
        evaluate(QuadraticSystem(np.zeros((2, 2, 2)), np.eye(2), np.zeros(2)), np.zeros(3))


def test_system_roundtrip(rng):
    s = QuadraticSystem(rng.normal(size=(3, 3, 3)), rng.normal(size=(3, 3)), rng.normal(size=3))
    t = QuadraticSystem.from_dict(s.to_dict())
    np.testing.assert_array_equal(t.K, s.K)


def test_realizer_block_structure():
    xi = 1e-3
    sp = build_realizer(ATTRACTING, K8, xi)
    np.testing.assert_array_equal(sp.Pt, -np.eye(6) / xi)
    assert not np.any(sp.Rt) and not np.any(sp.ft)
    np.testing.assert_allclose(sp.P, sp.T / xi)
    np.testing.assert_array_equal(sp.R, ATTRACTING.R)


def test_matching_target_needs_no_correction():
    tgt = TargetField(2, K8[:2, :2, :2], np.zeros((2, 2)), np.zeros(2))
    sp = build_realizer(tgt, K8, 1e-3)
    assert np.abs(sp.T).max() < 1e-12


@settings(max_examples=25)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_reduced_field_reproduces_target(a, b):
    sp = build_realizer(ATTRACTING, K8, 1e-3)
    Y = np.array([a, b])
    np.testing.assert_allclose(sp.reduced_field(Y), ATTRACTING(Y), atol=1e-12)


def test_realizer_preconditions():
    with pytest.raises(PreconditionError):
        build_realizer(ATTRACTING, generic_tensor(5), 1e-3)
    with pytest.raises(PreconditionError):
        build_realizer(ATTRACTING, K8, 0.0)


def test_one_dimensional_relaxation_target():
    # dY/dt = -Y + 1 realized with D = 0 at xi = 1e-4
    tgt = TargetField(1, np.zeros((1, 1, 1)), np.array([[-1.0]]), np.array([1.0]), R0=2.0)
    K = generic_tensor(3, seed=2)
    xi = 1e-4
    sp = build_realizer(tgt, K, xi)
    tr = integrate(sp, sp.lift(np.array([0.2])), 5.0, 0.05)
    exact = 1 - 0.8 * np.exp(-tr.t)
    assert np.abs(tr.X[0] - exact).max() < 5 * xi ** 0.5


def test_saddle_jacobian():
    J = slow_jacobian(build_realizer(SADDLE, K8, 1e-4), np.zeros(2))
    ev = np.sort(np.linalg.eigvals(J).real)
    np.testing.assert_allclose(ev, [-1.0, 1.0], rtol=0.05)


def test_inward_condition():
    assert len(ATTRACTING.inward_violations()) == 0
    bad = SADDLE.inward_violations()
    assert len(bad) > 0 and np.allclose(np.linalg.norm(bad, axis=1), SADDLE.R0)


def test_target_roundtrip():
    t = TargetField.from_dict(ATTRACTING.to_dict())
    np.testing.assert_array_equal(t.D, ATTRACTING.D)


def test_linear_decay():
    s = QuadraticSystem(np.zeros((1, 1, 1)), -np.eye(1), np.zeros(1))
    tr = integrate(s, [1.0], 1.0, 0.5)
    assert tr.X[0, -1] == pytest.approx(np.exp(-1.0), abs=1e-8)


def test_rotation_conserves_norm():
    s = QuadraticSystem(np.zeros((2, 2, 2)), np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros(2))
    tr = integrate(s, [1.0, 0.0], 100.0, 1.0, rtol=1e-12, atol=1e-14)
    assert np.abs(np.linalg.norm(tr.X, axis=0) - 1).max() < 1e-8


def test_explicit_and_implicit_agree():
    sp = build_realizer(ATTRACTING, K8, 1e-4)
    x0 = sp.lift(np.array([0.3, -0.2]))
    a = integrate(sp, x0, 0.5, 0.05, method="RK45", rtol=1e-10, atol=1e-12)
    b = integrate(sp, x0, 0.5, 0.05, method="Radau", rtol=1e-10, atol=1e-12)
    assert np.abs(a.X[:2] - b.X[:2]).max() < 1e-6


def test_blowup_detection():
    s = QuadraticSystem(np.ones((1, 1, 1)), np.zeros((1, 1)), np.zeros(1))
    with pytest.raises(Blowup):
        integrate(s, [1.0], 2.0, 0.1)


def test_manifold_residual_at_equilibrium():
    tgt = TargetField(2, np.zeros((2, 2, 2)), -np.eye(2), np.zeros(2))
    sp = build_realizer(tgt, K8, 1e-3)
    assert slow_manifold_residual(sp, np.zeros(2)) < 1e-10


def test_relaxation_time_scale():
    for xi in (1e-2, 1e-3):
        sp = build_realizer(ATTRACTING, K8, xi)
        assert relaxation_time(sp, np.array([0.3, 0.2])) / xi == pytest.approx(1.0, rel=0.2)
