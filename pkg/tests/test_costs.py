import numpy as np
import pytest

from lib.transport.costs import (
    CostFunction,
    check_integrability,
    cost_from_description,
    cost_matrix,
    power_cost,
)
from lib.transport.exceptions import IntegrabilityViolationError, InvalidArgumentError
from lib.transport.measures import DiscreteMeasure


def test_quadratic_cost_value_and_gradient(quadratic):
    assert quadratic.eval(0.0, 0.3) == pytest.approx(0.09)
    assert quadratic.grad_y(0.0, 0.3) == pytest.approx([0.6])
    assert quadratic.eval([0.0, 0.0], [3.0, 4.0]) == pytest.approx(25.0)


def test_linear_cost_gradient_vanishes_on_the_atom():
    c = power_cost(1.0)
    assert c.grad_y(0.5, 0.5) == pytest.approx([0.0])
    assert c.grad_y(0.0, 2.0) == pytest.approx([1.0])


def test_power_cost_validation():
    with pytest.raises(InvalidArgumentError):
        power_cost(0.0)
    c = power_cost(0.5)
    assert not c.has_grad_y
    with pytest.raises(InvalidArgumentError):
        c.grad_y(0.0, 1.0)


def test_assumption_flags():
    assert power_cost(2.0).flags.uniqueness
    assert power_cost(2.0).flags.reg.holds
    assert power_cost(3.0).flags.uniqueness and not power_cost(3.0).flags.twist.holds
    flags = power_cost(1.0).flags
    assert not flags.uniqueness
    assert flags.missing_for_uniqueness() == ["A1", "A2", "A3"]
    assert set(flags.to_dict()) == {"a1", "a2", "a3", "reg", "twist", "qc"}


def test_cost_matrix_shape(quadratic):
    P = DiscreteMeasure(points=[0.0, 1.0], weights=[0.5, 0.5])
    C = cost_matrix(quadratic, P, [0.0, 0.5, 2.0])
    assert C.shape == (2, 3)
    assert np.allclose(C, [[0.0, 0.25, 4.0], [1.0, 0.25, 1.0]])


def test_cost_from_description():
    assert cost_from_description({"cost": "power", "exponent": 1.5}).exponent == 1.5
    assert cost_from_description({"cost": "zero"}).eval(0.0, 3.0) == 0.0
    with pytest.raises(InvalidArgumentError):
        cost_from_description({"cost": "cosine"})


def test_check_integrability(quadratic, unit_interval, oracle_P):
    estimates = check_integrability(quadratic, oracle_P, unit_interval, 50_000, seed=11)
    assert estimates == pytest.approx([1.0 / 3.0, 1.0 / 3.0], abs=0.01)


def test_check_integrability_detects_infinite_cost(unit_interval, oracle_P):
    c = CostFunction(name="infinite", pairwise=lambda Y, X: np.full((Y.shape[0], X.shape[0]), np.inf))
    with pytest.raises(IntegrabilityViolationError) as info:
        check_integrability(c, oracle_P, unit_interval, 100, seed=1)
    assert info.value.atom_index == 0


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
def test_power_cost_is_symmetric_and_translation_invariant(p, rng):
    c = power_cost(p)
    for x, y, shift in rng.uniform(-2.0, 2.0, (20, 3, 2)):
        assert c.eval(x, y) == pytest.approx(c.eval(y, x), rel=1e-12)
        assert c.eval(x + shift, y + shift) == pytest.approx(c.eval(x, y), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_gradient_matches_central_differences(p, rng):
    c = power_cost(p)
    h = 1e-6
    for x, y in rng.uniform(-1.0, 1.0, (20, 2, 2)):
        fd = np.array([(c.eval(x, y + h * e) - c.eval(x, y - h * e)) / (2 * h) for e in np.eye(2)])
        assert c.grad_y(x, y) == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_cubic_cost_value_and_gradient():
    c = power_cost(3.0)
    assert c.eval(0.0, 2.0) == pytest.approx(8.0)
    assert c.grad_y(0.0, 2.0) == pytest.approx([12.0])
    assert c.grad_y(2.0, 0.0) == pytest.approx([-12.0])


def test_pairwise_matches_eval(rng):
    c = power_cost(1.5)
    Y, X = rng.uniform(0.0, 1.0, (5, 2)), rng.uniform(0.0, 1.0, (3, 2))
    C = c.pairwise(Y, X)
    assert C.shape == (5, 3)
    for i, j in np.ndindex(C.shape):
        assert C[i, j] == pytest.approx(c.eval(X[j], Y[i]))
