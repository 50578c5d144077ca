import numpy as np
import pytest

from app.core.autodiff import Tape, Tensor, backward
from app.core.exceptions import ConfigException, ShapeMismatchException, UndefinedMetricException
from app.services.losses import (
    LossBreakdown,
    LossWeights,
    coupled_objective,
    coupled_objective_tensor,
    cycle_loss,
    frame_mask,
    one_hot,
    prediction_loss,
    translation_loss,
)


@pytest.fixture
def weights():
    return LossWeights(lambda_t=0.5, lambda_c=2.0, lambda_t1=1.0, lambda_c1=0.25, lambda_t2=3.0)


@pytest.mark.unit
def test_bimodal_objective(weights):
    """lambda_t * l_t + lambda_c * l_c + l_p."""
    parts = {"l_t": 2.0, "l_c": 1.0, "l_p": 0.5}

    assert coupled_objective(parts, weights) == pytest.approx(0.5 * 2.0 + 2.0 * 1.0 + 0.5)


@pytest.mark.unit
def test_trimodal_objective(weights):
    """lambda_t1 * l_t1 + lambda_c1 * l_c1 + lambda_t2 * l_t2 + l_p."""
    parts = LossBreakdown(l_t1=1.0, l_c1=4.0, l_t2=2.0, l_p=0.1)

    assert coupled_objective(parts, weights, "trimodal") == pytest.approx(1.0 + 1.0 + 6.0 + 0.1)


@pytest.mark.unit
def test_reverse_translation_shares_forward_weight(weights):
    """l_t_rev is weighted by lambda_t."""
    parts = {"l_t": 1.0, "l_t_rev": 3.0, "l_p": 0.0}

    total = coupled_objective(parts, weights, plan=("l_t", "l_t_rev", "l_p"))

    assert total == pytest.approx(0.5 * 1.0 + 0.5 * 3.0)


@pytest.mark.unit
def test_missing_component_rejected(weights):
    with pytest.raises(ConfigException):
        coupled_objective({"l_t": 1.0, "l_p": 1.0}, weights)


@pytest.mark.unit
def test_unknown_component_and_arity(weights):
    with pytest.raises(ConfigException):
        weights.weight_of("l_x")
    with pytest.raises(ConfigException):
        coupled_objective({"l_p": 1.0}, weights, "quadmodal")


@pytest.mark.unit
def test_tensor_objective_matches_float_objective(weights):
    """The differentiable total equals the float total, and zero weights drop out."""
    parts = {"l_t": Tensor.parameter(2.0), "l_c": Tensor.parameter(1.0), "l_p": Tensor.parameter(0.5)}
    with Tape():
        total = coupled_objective_tensor(parts, weights)

    assert total.item() == pytest.approx(coupled_objective({k: v.item() for k, v in parts.items()}, weights))

    no_cycle = LossWeights(lambda_t=1.0, lambda_c=0.0)
    with Tape() as tape:
        total = coupled_objective_tensor(parts, no_cycle)
    backward(total)
    assert tape.grad(parts["l_c"]) is None


@pytest.mark.unit
def test_translation_loss_ignores_padding():
    """Frames past the true length do not count."""
    x = np.zeros((1, 3, 2))
    x_hat = np.ones((1, 3, 2))
    x_hat[0, 2] = 100.0

    assert translation_loss(x_hat, x, [2]).item() == pytest.approx(1.0)
    assert cycle_loss(x_hat, x, [2]).item() == pytest.approx(1.0)


@pytest.mark.unit
def test_translation_loss_shape_mismatch():
    with pytest.raises(ShapeMismatchException):
        translation_loss(np.zeros((2, 3)), np.zeros((3, 2)))


@pytest.mark.unit
def test_frame_mask():
    """None when nothing is padded; per-frame booleans otherwise."""
    assert frame_mask((2, 3, 4), [3, 3]) is None

    mask = frame_mask((2, 3, 4), [3, 1])
    assert mask.shape == (2, 3, 4)
    assert mask[1, 0].all() and not mask[1, 1:].any()


@pytest.mark.unit
def test_regression_prediction_loss():
    """Mean absolute error."""
    assert prediction_loss(np.array([1.0, -1.0]), [0.0, 1.0], "regression").item() == pytest.approx(1.5)


@pytest.mark.unit
def test_classification_prediction_loss():
    """Mean -log p of the correct class."""
    probs = np.array([[0.8, 0.2], [0.4, 0.6]])

    loss = prediction_loss(probs, [0, 1], "classification").item()

    assert loss == pytest.approx(-(np.log(0.8) + np.log(0.6)) / 2)


@pytest.mark.unit
def test_classification_needs_normalised_rows():
    with pytest.raises(UndefinedMetricException):
        prediction_loss(np.array([[0.5, 0.6]]), [0], "classification")


@pytest.mark.unit
def test_one_hot_range():
    np.testing.assert_array_equal(one_hot([1, 0], 2), [[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ShapeMismatchException):
        one_hot([2], 2)
