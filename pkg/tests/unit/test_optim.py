import numpy as np
import pytest

from app.core.autodiff import Tensor
from app.core.exceptions import ConfigException
from app.core.optim import OptimizerState, clip_grad_norm, optimizer_step


@pytest.mark.unit
def test_sgd_step():
    """w = 1, g = 2, lr = 0.1 gives 0.8."""
    w = Tensor.parameter([1.0])
    state = OptimizerState("sgd", 0.1)

    optimizer_step(state, [w], [np.array([2.0])])

    assert w.data[0] == pytest.approx(0.8)
    assert state.step == 1


@pytest.mark.unit
@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_parameters(kind):
    """A zero gradient is a no-op for both optimizers."""
    w = Tensor.parameter([0.5, -1.5])

    optimizer_step(OptimizerState(kind, 0.1), [w], [np.zeros(2)])

    np.testing.assert_array_equal(w.data, [0.5, -1.5])


@pytest.mark.unit
def test_first_adam_step_moves_by_learning_rate():
    """Bias correction makes the first Adam step ~lr in the gradient's direction."""
    w = Tensor.parameter([0.0, 0.0])

    optimizer_step(OptimizerState("adam", 1e-3), [w], [np.array([5.0, -0.01])])

    np.testing.assert_allclose(w.data, [-1e-3, 1e-3], rtol=1e-4)


@pytest.mark.unit
def test_zero_learning_rate_is_allowed():
    """lr = 0 is valid and freezes the parameters."""
    w = Tensor.parameter([1.0])

    optimizer_step(OptimizerState("sgd", 0.0), [w], [np.array([3.0])])

    assert w.data[0] == 1.0


@pytest.mark.unit
def test_invalid_optimizer_settings():
    """Unknown kinds and negative rates are configuration errors."""
    with pytest.raises(ConfigException):
        OptimizerState("rmsprop", 0.1)
    with pytest.raises(ConfigException):
        OptimizerState("sgd", -0.1)


@pytest.mark.unit
def test_clip_grad_norm():
    """Gradients above max_norm are rescaled jointly; smaller ones are untouched."""
    grads = [np.array([3.0]), np.array([4.0])]

    clipped = clip_grad_norm(grads, 1.0)
    untouched = clip_grad_norm(grads, 10.0)

    np.testing.assert_allclose([clipped[0][0], clipped[1][0]], [0.6, 0.8])
    assert untouched[0][0] == 3.0
    assert clip_grad_norm(grads, None) == grads
