"""
Finite-difference verification of tape gradients.
"""
import logging
from typing import Callable, Dict, List, Sequence

import numpy as np

from app.core.autodiff import Tape, Tensor, backward, gradients
from app.core.exceptions import GradientCheckException

logger = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-8

LossFn = Callable[[Sequence[Tensor]], Tensor]


def _evaluate(f: LossFn, params: Sequence[Tensor]) -> float:
    return f(params).item()


def relative_errors(f: LossFn, params: Sequence[Tensor], eps: float = 1e-4) -> List[float]:
    """
    Per-parameter maximum relative error between backward() gradients and
    central finite differences (f(w+eps) - f(w-eps)) / (2 eps).

    Args:
        f: Maps the parameter list to a scalar loss tensor
        params: Trainable tensors perturbed in place and restored afterwards
        eps: Finite-difference step

    Returns:
        One error per parameter: max over its elements of
        |a - n| / max(|a|, |n|, 1e-8)

    Raises:
        GradientCheckException: If eps <= 0 or f is not deterministic
    """
    if eps <= 0:
        raise GradientCheckException("eps must be positive", details={"eps": eps})

    base = _evaluate(f, params)
    if _evaluate(f, params) != base:
        raise GradientCheckException(
            "Function is not deterministic: two evaluations at the same point differ",
            details={"value": base}
        )

    with Tape() as tape:
        loss = f(params)
    if loss.node_id is None:
        # constant function: every analytic gradient is zero
        analytic = [np.zeros(p.shape) for p in params]
    else:
        backward(loss)
        analytic = gradients(tape, params)

    errors = []
    for p, a_grad in zip(params, analytic):
        original = p.data.copy()
        flat = original.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + eps
            p.assign(bumped.reshape(original.shape))
            f_plus = _evaluate(f, params)
            bumped[i] = flat[i] - eps
            p.assign(bumped.reshape(original.shape))
            f_minus = _evaluate(f, params)
            p.assign(original)

            numeric = (f_plus - f_minus) / (2.0 * eps)
            exact = float(a_grad.reshape(-1)[i])
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), RELATIVE_FLOOR)
            worst = max(worst, err)
        errors.append(worst)
    return errors


def grad_check(f: LossFn, params: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Max relative gradient error over every element of every parameter."""
    errors = relative_errors(f, params, eps)
    result = max(errors) if errors else 0.0
    logger.debug(f"grad_check over {len(params)} tensors: max relative error {result:.3e}")
    return result


def grad_check_report(f: LossFn, named_params: Dict[str, Tensor], eps: float = 1e-4) -> Dict[str, float]:
    """Max relative error per named parameter."""
    names = list(named_params)
    errors = relative_errors(f, [named_params[n] for n in names], eps)
    return dict(zip(names, errors))
