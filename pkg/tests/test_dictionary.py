"""Dictionary construction, point/batch evaluation, and state Jacobians."""

import numpy as np
import pytest

from koopman_robust import (
    build_dictionary,
    build_identity_dictionary,
    build_poly_dictionary,
    evaluate,
    evaluate_batch,
    jacobian_state,
)
from koopman_robust.dictionary import jacobian_state_batch
from koopman_robust.errors import NonFiniteDataError


def test_first_order_layout():
    d = build_poly_dictionary(2, 1, 1)
    assert d.size == 4
    assert [obs.name for obs in d.observables] == ["x1", "x2", "u1", "1"]
    psi = evaluate(d, np.array([2.0, 3.0]), np.array([5.0]))
    np.testing.assert_array_equal(psi, [2.0, 3.0, 5.0, 1.0])


@pytest.mark.parametrize(
    "n_state, n_input, degree, expected",
    [(2, 1, 2, 10), (2, 1, 3, 20), (3, 2, 2, 21), (2, 0, 2, 6)],
)
def test_monomial_count(n_state, n_input, degree, expected):
    # C(n_vars + degree, degree) monomials of total degree <= degree
    assert build_poly_dictionary(n_state, n_input, degree).size == expected


def test_degree_two_ordering_is_frozen():
    d = build_poly_dictionary(2, 1, 2)
    names = [obs.name for obs in d.observables]
    assert names == [
        "x1", "x2", "u1", "1",
        "x1^2", "x1*x2", "x1*u1", "x2^2", "x2*u1", "u1^2",
    ]


def test_identity_prefix_and_constant():
    d = build_poly_dictionary(3, 2, 2)
    assert d.identity_prefix
    names = [obs.name for obs in d.observables]
    assert names[:5] == ["x1", "x2", "x3", "u1", "u2"]
    assert names[5] == "1"
    x = np.array([0.3, -1.2, 0.7])
    u = np.array([2.0, -0.5])
    psi = evaluate(d, x, u)
    np.testing.assert_array_equal(psi[:5], np.concatenate([x, u]))
    assert psi[5] == 1.0
    # the constant has zero state gradient
    np.testing.assert_array_equal(jacobian_state(d, x, u)[5], np.zeros(3))


def test_single_monomial_value_and_gradient():
    d = build_poly_dictionary(2, 1, 3)
    names = [obs.name for obs in d.observables]
    q = names.index("x1^2*x2")
    x = np.array([2.0, 3.0])
    u = np.array([0.5])
    assert d.observables[q].eval(x, u) == pytest.approx(12.0, abs=0.0)
    np.testing.assert_allclose(d.observables[q].grad_state(x, u), [12.0, 4.0])
    assert evaluate(d, x, u)[q] == pytest.approx(12.0, abs=0.0)
    np.testing.assert_allclose(jacobian_state(d, x, u)[q], [12.0, 4.0])


def test_jacobian_matches_finite_differences():
    d = build_poly_dictionary(2, 1, 3)
    rng = np.random.default_rng(42)
    h = 1e-6
    for _ in range(100):
        x = rng.uniform(-2.0, 2.0, size=2)
        u = rng.uniform(-2.0, 2.0, size=1)
        jac = jacobian_state(d, x, u)
        fd = np.empty_like(jac)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd[:, i] = (evaluate(d, x + e, u) - evaluate(d, x - e, u)) / (2 * h)
        err = np.abs(jac - fd).max() / (1.0 + np.abs(fd).max())
        assert err <= 1e-5


def test_identity_dictionary():
    d = build_identity_dictionary(2, 1)
    assert d.size == 3
    assert [obs.name for obs in d.observables] == ["x1", "x2", "u1"]
    x = np.array([0.4, -0.9])
    u = np.array([1.5])
    np.testing.assert_array_equal(evaluate(d, x, u), [0.4, -0.9, 1.5])
    jac = jacobian_state(d, x, u)
    np.testing.assert_array_equal(jac[:2], np.eye(2))
    np.testing.assert_array_equal(jac[2], np.zeros(2))


def test_batch_agrees_with_pointwise():
    d = build_poly_dictionary(2, 1, 3)
    rng = np.random.default_rng(3)
    X = rng.uniform(-1.5, 1.5, size=(2, 17))
    U = rng.uniform(-1.5, 1.5, size=(1, 17))
    batch = evaluate_batch(d, X, U)
    assert batch.shape == (17, d.size)
    for m in range(17):
        np.testing.assert_allclose(
            batch[m], evaluate(d, X[:, m], U[:, m]), rtol=0, atol=1e-14
        )
    for coord in range(2):
        jb = jacobian_state_batch(d, X, U, coord)
        assert jb.shape == (17, d.size)
        for m in range(17):
            np.testing.assert_allclose(
                jb[m],
                jacobian_state(d, X[:, m], U[:, m])[:, coord],
                rtol=0,
                atol=1e-14,
            )


def test_spec_roundtrip():
    for d in (build_poly_dictionary(3, 2, 2), build_identity_dictionary(2, 1)):
        rebuilt = build_dictionary(d.spec)
        assert rebuilt.size == d.size
        assert [o.name for o in rebuilt.observables] == [
            o.name for o in d.observables
        ]
        np.testing.assert_array_equal(rebuilt.exponents, d.exponents)
    with pytest.raises(ValueError, match="unknown dictionary spec"):
        build_dictionary({"type": "fourier"})


def test_shape_validation():
    d = build_poly_dictionary(2, 1, 2)
    with pytest.raises(ValueError, match="state has shape"):
        evaluate(d, np.zeros(3), np.zeros(1))
    with pytest.raises(ValueError, match="input has shape"):
        evaluate(d, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        build_poly_dictionary(0, 1, 2)
    with pytest.raises(ValueError):
        build_poly_dictionary(2, 1, 0)


def test_non_finite_evaluation_rejected():
    d = build_poly_dictionary(2, 1, 2)
    with np.errstate(invalid="ignore"):
        with pytest.raises(NonFiniteDataError):
            evaluate(d, np.array([np.inf, 0.0]), np.array([0.0]))
    X = np.array([[1.0, np.nan], [0.0, 0.0]])
    U = np.zeros((1, 2))
    with np.errstate(invalid="ignore"):
        with pytest.raises(NonFiniteDataError):
            evaluate_batch(d, X, U)
