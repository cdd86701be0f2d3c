import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import normal_equations
from ppsd.errors import DegenerateProblem, InvalidArgument
from ppsd.objective import (
    global_gradient_at,
    instance_from_dict,
    linear_regression,
    make_regression,
    make_rendezvous,
    rendezvous,
    smoothness_constants,
)


def finite_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_rendezvous_gradient_example():
    inst = rendezvous([[1, 2], [0, 0]])
    np.testing.assert_array_equal(inst.local_gradient(1, [0, 0]), [-1, -2])


def test_rendezvous_minimizers():
    assert rendezvous([[1], [-1]]).x_star.tolist() == [0.0]
    inst = rendezvous([[0], [1], [5]])
    assert inst.x_star.tolist() == [2.0]
    # first-order condition at the minimizer
    assert np.allclose(global_gradient_at(inst, inst.x_star), 0, atol=1e-15)


def test_rendezvous_rejects_mixed_dimensions():
    with pytest.raises(InvalidArgument):
        rendezvous([[1, 2], [1]])


def test_constants_examples():
    assert smoothness_constants(rendezvous([[0], [1], [5]])) == (3.0, 1.0, 3.0)
    assert np.all(global_gradient_at(rendezvous([[1], [-1]]), [0.0]) == 0)


def test_regression_examples():
    inst = linear_regression([np.eye(1)], [[0.0]])
    assert inst.local_gradient(1, [1.0]).tolist() == [2.0]
    assert linear_regression([np.eye(1)], [[3.0]]).x_star.tolist() == pytest.approx([3.0])


def test_regression_singular_normal_matrix():
    with pytest.raises(DegenerateProblem):
        linear_regression([np.array([[1.0, 0.0]])], [[1.0]])


def test_regression_shape_mismatch():
    with pytest.raises(InvalidArgument):
        linear_regression([np.eye(2)], [[1.0, 2.0, 3.0]])


def test_seeded_regression_against_normal_equations():
    inst = make_regression(5, d=10, p=10, noise=0.2, seed=3)
    Qs = [o.params["Q"] for o in inst.objectives]
    ms = [o.params["m"] for o in inst.objectives]
    x_ref = normal_equations(Qs, ms)
    np.testing.assert_allclose(inst.x_star, x_ref, rtol=1e-10, atol=1e-12)
    assert np.linalg.norm(global_gradient_at(inst, inst.x_star)) < 1e-10


def test_regression_normalization_and_constants():
    inst = make_regression(4, d=3, p=5, seed=1)
    for o in inst.objectives:
        assert np.linalg.norm(o.params["Q"], 2) == pytest.approx(1.0)
        assert o.L == pytest.approx(2.0)
    mu, L, L_bar = smoothness_constants(inst)
    assert 0 < mu <= L_bar and L == pytest.approx(2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_gradients_match_finite_differences(seed):
    inst = make_regression(3, d=4, p=6, seed=seed)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((3, 4))
    batch = inst.gradients(X)
    for i in range(1, 4):
        fd = finite_difference(lambda x: inst.local_value(i, x), X[i - 1])
        np.testing.assert_allclose(inst.local_gradient(i, X[i - 1]), fd, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(batch[i - 1], inst.local_gradient(i, X[i - 1]), rtol=1e-13, atol=1e-13)


def test_gradient_shift_keeps_minimizer_when_balanced():
    inst = make_rendezvous(3, d=2, seed=0)
    shifted = inst.with_gradient_shifts({1: [1.0, 0.0], 2: [-1.0, 0.0]})
    np.testing.assert_array_equal(shifted.x_star, inst.x_star)
    np.testing.assert_allclose(shifted.local_gradient(1, [0, 0]), inst.local_gradient(1, [0, 0]) + [1, 0])
    assert inst.with_gradient_shifts({1: [1.0, 0.0]}).x_star is None


def test_instance_round_trip():
    for inst in (make_rendezvous(4, d=2, seed=5), make_regression(3, d=2, p=3, seed=5)):
        back = instance_from_dict(inst.to_dict())
        np.testing.assert_array_equal(back.x_star, inst.x_star)
    explicit = rendezvous([[1.0], [2.0]])
    assert instance_from_dict(explicit.to_dict()).x_star.tolist() == [1.5]
    with pytest.raises(InvalidArgument):
        instance_from_dict({"kind": "lasso"})
