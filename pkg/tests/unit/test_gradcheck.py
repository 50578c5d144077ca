import numpy as np
import pytest

from app.core import autodiff as ad
from app.core.autodiff import Tensor
from app.core.exceptions import GradientCheckException
from app.core.gradcheck import grad_check, grad_check_report
from app.services.gradcheck_suite import primitive_cases, run_gradcheck_suite


@pytest.mark.unit
def test_square_at_three():
    """f(w) = w^2 at w = 3 agrees with its finite difference."""
    w = Tensor.parameter([3.0])

    assert grad_check(lambda ps: ad.sum_(ad.mul(ps[0], ps[0])), [w]) < 1e-6


@pytest.mark.unit
def test_constant_function_has_zero_error():
    """A loss that ignores its parameters yields zero gradients on both sides."""
    w = Tensor.parameter([1.0, -2.0])

    assert grad_check(lambda ps: ad.sum_(Tensor([4.0, 5.0])), [w]) == 0.0


@pytest.mark.unit
def test_two_layer_tanh_network(rng):
    """A small tanh network with mse loss passes at the default threshold."""
    w1 = Tensor.parameter(rng.normal(size=(3, 4)))
    b1 = Tensor.parameter(rng.normal(size=4))
    w2 = Tensor.parameter(rng.normal(size=(4, 2)))
    x = Tensor(rng.normal(size=(5, 3)))
    y = Tensor(rng.normal(size=(5, 2)))

    def f(ps):
        hidden = ad.tanh(ad.add(ad.matmul(x, ps[0]), ps[1]))
        return ad.mse(ad.matmul(hidden, ps[2]), y)

    report = grad_check_report(f, {"w1": w1, "b1": b1, "w2": w2})

    assert set(report) == {"w1", "b1", "w2"}
    assert max(report.values()) < 1e-4


@pytest.mark.unit
def test_parameters_restored_after_check(rng):
    """Perturbations are undone once the check finishes."""
    w = Tensor.parameter(rng.normal(size=(2, 3)))
    before = w.data.copy()

    grad_check(lambda ps: ad.sum_(ad.tanh(ps[0])), [w])

    np.testing.assert_array_equal(w.data, before)


@pytest.mark.unit
def test_non_positive_eps_rejected():
    """eps must be positive."""
    w = Tensor.parameter([1.0])

    with pytest.raises(GradientCheckException):
        grad_check(lambda ps: ad.sum_(ps[0]), [w], eps=0.0)


@pytest.mark.unit
def test_non_deterministic_function_rejected():
    """Two evaluations at one point must agree."""
    w = Tensor.parameter([1.0])
    calls = {"n": 0}

    def f(ps):
        calls["n"] += 1
        return ad.sum_(ad.scale(ps[0], float(calls["n"])))

    with pytest.raises(GradientCheckException):
        grad_check(f, [w])


@pytest.mark.unit
def test_every_primitive_has_a_case():
    """The suite covers each registered primitive."""
    assert set(primitive_cases()) == set(ad.PRIMITIVES)


@pytest.mark.unit
def test_primitive_suite_passes():
    """Every primitive agrees with central differences below 1e-4."""
    results = run_gradcheck_suite(variants=())

    failing = {k: v for k, v in results.items() if v >= 1e-4}
    assert not failing, failing


@pytest.mark.unit
@pytest.mark.slow
def test_variant_graphs_pass():
    """The full coupled objectives of variants (a) and (e) pass the check."""
    results = run_gradcheck_suite(variants=("a", "e"))

    assert results["variant_a"] < 1e-4
    assert results["variant_e"] < 1e-4
