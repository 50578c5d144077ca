"""
First-order optimizers over Tensor parameters.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence

import numpy as np

from app.core.autodiff import Tensor
from app.core.exceptions import ConfigException, ShapeMismatchException

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    """
    Optimizer kind, step size, step counter and (for adam) one pair of
    moment buffers per parameter, created lazily on the first step.
    """
    kind: Literal["sgd", "adam"] = "adam"
    learning_rate: float = 1e-3
    step: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigException(f"Unknown optimizer '{self.kind}'", details={"optimizer": self.kind})
        if self.learning_rate < 0:
            raise ConfigException("learning_rate must be non-negative", details={"learning_rate": self.learning_rate})


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: Optional[float]) -> List[np.ndarray]:
    """Rescale gradients so their joint L2 norm is at most max_norm."""
    grads = list(grads)
    if max_norm is None:
        return grads
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    logger.debug(f"Clipping gradient norm {total:.4f} to {max_norm}")
    return [g * factor for g in grads]


def optimizer_step(state: OptimizerState, params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> Sequence[Tensor]:
    """
    Apply one update to every parameter.

    sgd:  w <- w - lr * g
    adam: bias-corrected moments with beta1=0.9, beta2=0.999, eps=1e-8

    Args:
        state: Optimizer state, advanced in place
        params: Parameters, rebound to their new values
        grads: One gradient per parameter, same shapes

    Returns:
        The updated parameters

    Raises:
        ShapeMismatchException: If params and grads are not aligned
    """
    if len(params) != len(grads):
        raise ShapeMismatchException(
            "optimizer_step: parameter and gradient counts differ",
            details={"op": "optimizer_step", "params": len(params), "grads": len(grads)}
        )
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeMismatchException(
                f"optimizer_step: gradient shape {np.shape(g)} does not match parameter {p.name or ''} {p.shape}",
                details={"op": "optimizer_step", "shapes": [list(p.shape), list(np.shape(g))]}
            )

    state.step += 1
    lr = state.learning_rate

    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p.assign(p.data - lr * g)
        return params

    if not state.first_moments:
        state.first_moments = [np.zeros(p.shape) for p in params]
        state.second_moments = [np.zeros(p.shape) for p in params]
    if len(state.first_moments) != len(params):
        raise ShapeMismatchException(
            "optimizer_step: moment buffers were created for a different parameter list",
            details={"op": "optimizer_step", "moments": len(state.first_moments), "params": len(params)}
        )

    correction1 = 1.0 - ADAM_BETA1 ** state.step
    correction2 = 1.0 - ADAM_BETA2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        m = ADAM_BETA1 * state.first_moments[i] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.second_moments[i] + (1.0 - ADAM_BETA2) * g * g
        state.first_moments[i] = m
        state.second_moments[i] = v
        m_hat = m / correction1
        v_hat = v / correction2
        p.assign(p.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
    return params
