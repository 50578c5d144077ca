"""
Translation, cycle and prediction losses and the coupled objective that
weights them.

Bimodal:  total = lambda_t * l_t + lambda_c * l_c + l_p
Trimodal: total = lambda_t1 * l_t1 + lambda_c1 * l_c1 + lambda_t2 * l_t2 + l_p

Variants without a cycle or with extra reverse translations use a loss plan,
the ordered list of components they produce. Reverse translations share the
weight of their forward direction.
"""
import logging
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from app.core.autodiff import Tensor, add, cross_entropy, mae, mse, reshape, scale
from app.core.config import settings
from app.core.exceptions import ConfigException, ShapeMismatchException, UndefinedMetricException

logger = logging.getLogger(__name__)

Arity = Literal["bimodal", "trimodal"]

PROBABILITY_TOLERANCE = 1e-6

COMPONENT_WEIGHTS = {
    "l_t": "lambda_t",
    "l_c": "lambda_c",
    "l_t_rev": "lambda_t",
    "l_t1": "lambda_t1",
    "l_c1": "lambda_c1",
    "l_t1_rev": "lambda_t1",
    "l_t2": "lambda_t2",
}

DEFAULT_PLANS = {
    "bimodal": ("l_t", "l_c", "l_p"),
    "trimodal": ("l_t1", "l_c1", "l_t2", "l_p"),
}


class LossWeights(BaseModel):
    lambda_t: float = Field(default_factory=lambda: settings.lambda_t, ge=0.0)
    lambda_c: float = Field(default_factory=lambda: settings.lambda_c, ge=0.0)
    lambda_t1: float = Field(default_factory=lambda: settings.lambda_t1, ge=0.0)
    lambda_c1: float = Field(default_factory=lambda: settings.lambda_c1, ge=0.0)
    lambda_t2: float = Field(default_factory=lambda: settings.lambda_t2, ge=0.0)

    def weight_of(self, component: str) -> float:
        if component == "l_p":
            return 1.0
        if component not in COMPONENT_WEIGHTS:
            raise ConfigException(f"Unknown loss component '{component}'", details={"component": component})
        return getattr(self, COMPONENT_WEIGHTS[component])


class LossBreakdown(BaseModel):
    """Component losses and their weighted total; absent components are None."""
    l_t: Optional[float] = None
    l_c: Optional[float] = None
    l_p: Optional[float] = None
    l_t1: Optional[float] = None
    l_c1: Optional[float] = None
    l_t2: Optional[float] = None
    l_t_rev: Optional[float] = None
    l_t1_rev: Optional[float] = None
    total: float = 0.0

    def components(self) -> Dict[str, float]:
        return {k: v for k, v in self.model_dump(exclude={"total"}).items() if v is not None}


def _plan_for(arity: str, plan: Optional[Sequence[str]]) -> Tuple[str, ...]:
    if arity not in DEFAULT_PLANS:
        raise ConfigException(f"Unknown arity '{arity}'", details={"arity": arity})
    return tuple(plan) if plan is not None else DEFAULT_PLANS[arity]


def _check_present(plan: Iterable[str], present: Iterable[str]) -> None:
    present = set(present)
    missing = [c for c in plan if c not in present]
    if missing:
        raise ConfigException(
            f"Loss breakdown is missing component(s) {missing}",
            details={"missing": missing, "present": sorted(present)}
        )


def weighted_terms(w: LossWeights, arity: str, plan: Optional[Sequence[str]] = None) -> List[Tuple[str, float]]:
    """(component, weight) pairs in summation order."""
    return [(c, w.weight_of(c)) for c in _plan_for(arity, plan)]


def coupled_objective(parts: Union[LossBreakdown, Mapping[str, float]], w: LossWeights, arity: str = "bimodal",
                      plan: Optional[Sequence[str]] = None) -> float:
    """
    Weighted sum of loss components.

    Args:
        parts: Component values
        w: Loss weights
        arity: "bimodal" or "trimodal" (selects the default plan)
        plan: Components to combine, in order

    Returns:
        Total loss

    Raises:
        ConfigException: If a component of the plan is missing
    """
    values = parts.components() if isinstance(parts, LossBreakdown) else {k: v for k, v in parts.items() if v is not None}
    plan = _plan_for(arity, plan)
    _check_present(plan, values)
    total = 0.0
    for component, weight in weighted_terms(w, arity, plan):
        total = total + weight * float(values[component])
    return total


def coupled_objective_tensor(parts: Mapping[str, Tensor], w: LossWeights, arity: str = "bimodal",
                             plan: Optional[Sequence[str]] = None) -> Tensor:
    """
    Differentiable counterpart of coupled_objective. Components with weight
    zero are left out of the graph entirely.
    """
    plan = _plan_for(arity, plan)
    _check_present(plan, parts)
    total: Optional[Tensor] = None
    for component, weight in weighted_terms(w, arity, plan):
        if weight == 0.0:
            continue
        term = parts[component] if weight == 1.0 else scale(parts[component], weight)
        total = term if total is None else add(total, term)
    return total


def frame_mask(shape: Tuple[int, ...], lengths: Optional[Sequence[int]]) -> Optional[np.ndarray]:
    """Boolean mask of unpadded frames for L x d or B x L x d values, or None when nothing is padded."""
    if lengths is None:
        return None
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    steps = shape[-2]
    valid = np.arange(steps)[None, :] < lengths[:, None]
    if valid.all():
        return None
    mask = np.repeat(valid[:, :, None], shape[-1], axis=2)
    return mask if len(shape) == 3 else mask[0]


def _as_tensor(x: Union[Tensor, np.ndarray]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def translation_loss(x_hat: Union[Tensor, np.ndarray], x: Union[Tensor, np.ndarray],
                     lengths: Optional[Sequence[int]] = None) -> Tensor:
    """
    Mean squared error over unpadded frames.

    Raises:
        ShapeMismatchException: If the shapes differ
    """
    x_hat, x = _as_tensor(x_hat), _as_tensor(x)
    if x_hat.shape != x.shape:
        raise ShapeMismatchException(
            "translation_loss: prediction and target shapes differ",
            details={"op": "translation_loss", "shapes": [list(x_hat.shape), list(x.shape)]}
        )
    return mse(x_hat, x, frame_mask(x.shape, lengths))


def cycle_loss(x_hat_s: Union[Tensor, np.ndarray], x_s: Union[Tensor, np.ndarray],
               lengths: Optional[Sequence[int]] = None) -> Tensor:
    """Reconstruction error of the back-translated source, same reduction as translation_loss."""
    return translation_loss(x_hat_s, x_s, lengths)


def one_hot(labels: Sequence[float], num_classes: int) -> np.ndarray:
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise ShapeMismatchException(
            f"Class labels must lie in [0, {num_classes})",
            details={"op": "one_hot", "num_classes": num_classes}
        )
    out = np.zeros((idx.size, num_classes))
    out[np.arange(idx.size), idx] = 1.0
    return out


def prediction_loss(y_hat: Union[Tensor, np.ndarray], y: Sequence[float], task: str) -> Tensor:
    """
    Regression: mean |y_hat - y|. Classification: mean -log p(correct class)
    over B x K probability rows.

    Raises:
        UndefinedMetricException: If a probability row does not sum to 1 within 1e-6
        ShapeMismatchException: If shapes are inconsistent with the task
    """
    y_hat = _as_tensor(y_hat)
    labels = np.asarray(y, dtype=np.float64).reshape(-1)
    if task == "regression":
        if labels.size != y_hat.size:
            raise ShapeMismatchException(
                "prediction_loss: one label per prediction is required",
                details={"op": "prediction_loss", "shapes": [list(y_hat.shape), list(labels.shape)]}
            )
        return mae(y_hat, Tensor(labels.reshape(y_hat.shape)))
    if task != "classification":
        raise ConfigException(f"Unknown task '{task}'", details={"task": task})
    probs = y_hat if y_hat.ndim == 2 else reshape(y_hat, (1, y_hat.size))
    sums = probs.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROBABILITY_TOLERANCE):
        raise UndefinedMetricException(
            "Probability vectors must sum to 1",
            details={"max_deviation": float(np.abs(sums - 1.0).max())}
        )
    return cross_entropy(probs, Tensor(one_hot(labels, probs.shape[-1])))
