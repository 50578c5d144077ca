"""
Mini-batch training of a ModelBundle on the coupled translation-prediction
objective, with validation on source-only predictions and early stopping.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm

from app.core.autodiff import Tape, backward, gradients
from app.core.config import settings
from app.core.exceptions import (
    DatasetValidationException,
    NonFiniteException,
    TrainingDivergedException,
    UnknownModalityException,
)
from app.core.optim import OptimizerState, clip_grad_norm, optimizer_step
from app.services.datasets import Batch, MultimodalDataset, Sample, iterate_batches
from app.services.losses import LossWeights, coupled_objective, coupled_objective_tensor, prediction_loss
from app.services.mctn import ModelBundle, ModelConfig

logger = logging.getLogger(__name__)


class TrainConfig(ModelConfig):
    epochs: int = Field(default_factory=lambda: settings.epochs, gt=0)
    batch_size: int = Field(default_factory=lambda: settings.batch_size, gt=0)
    learning_rate: float = Field(default_factory=lambda: settings.learning_rate, ge=0.0)
    optimizer: Literal["sgd", "adam"] = Field(default_factory=lambda: settings.optimizer)
    patience: int = Field(default_factory=lambda: settings.patience, gt=0)
    teacher_forcing: bool = True
    use_cycle: bool = True
    max_grad_norm: Optional[float] = Field(default_factory=lambda: settings.max_grad_norm, gt=0.0)
    lambda_t: float = Field(default_factory=lambda: settings.lambda_t, ge=0.0)
    lambda_c: float = Field(default_factory=lambda: settings.lambda_c, ge=0.0)
    lambda_t1: float = Field(default_factory=lambda: settings.lambda_t1, ge=0.0)
    lambda_c1: float = Field(default_factory=lambda: settings.lambda_c1, ge=0.0)
    lambda_t2: float = Field(default_factory=lambda: settings.lambda_t2, ge=0.0)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(
            lambda_t=self.lambda_t,
            lambda_c=self.lambda_c,
            lambda_t1=self.lambda_t1,
            lambda_c1=self.lambda_c1,
            lambda_t2=self.lambda_t2,
        )


class EpochRecord(BaseModel):
    """
    One line of epochs.jsonl.

    Translation and cycle components are means over every unpadded training
    frame of the epoch; l_p is the mean over training samples.
    """
    epoch: int
    l_t: Optional[float] = None
    l_c: Optional[float] = None
    l_p: Optional[float] = None
    total: float
    val_l_p: float
    l_t1: Optional[float] = None
    l_c1: Optional[float] = None
    l_t2: Optional[float] = None
    l_t_rev: Optional[float] = None
    l_t1_rev: Optional[float] = None

    def to_json_line(self) -> str:
        extras = {"l_t1", "l_c1", "l_t2", "l_t_rev", "l_t1_rev"}
        exclude = {k for k in extras if getattr(self, k) is None}
        return self.model_dump_json(exclude=exclude)


def _component_weight(component: str, batch: Batch) -> int:
    """Frames behind a batch mean: unpadded frames for translation terms, samples for l_p."""
    return batch.size if component == "l_p" else int(batch.lengths.sum())


def predict_samples(bundle: ModelBundle, samples: Sequence[Sample], batch_size: int) -> np.ndarray:
    """Source-only predictions in sample order; only the bundle's input modalities are read."""
    outputs = []
    for batch in iterate_batches(samples, batch_size, bundle.input_modalities):
        outputs.append(bundle.infer(batch).data)
    return np.concatenate(outputs, axis=0)


def validation_loss(bundle: ModelBundle, samples: Sequence[Sample], batch_size: int) -> float:
    predictions = predict_samples(bundle, samples, batch_size)
    labels = np.array([s.label for s in samples], dtype=np.float64)
    return prediction_loss(predictions, labels, bundle.task).item()


def _require_modalities(bundle: ModelBundle, dataset: MultimodalDataset) -> None:
    missing = [m for m in bundle.spec.roles if m not in dataset.loaded_modalities]
    if missing:
        raise UnknownModalityException(
            f"Training needs frames for {missing}",
            details={"missing": missing, "loaded": dataset.loaded_modalities}
        )


def fit(bundle: ModelBundle, dataset: MultimodalDataset, config: TrainConfig,
        epoch_log: Optional[Path] = None) -> Tuple[ModelBundle, List[EpochRecord]]:
    """
    Minimise the coupled objective with mini-batch gradient descent.

    Each epoch shuffles the training split with a generator seeded by
    config.seed, then evaluates the prediction loss on the validation split
    from source-only inference. Training stops after ``patience`` epochs
    without a strict improvement; the best validation parameters are restored.

    Args:
        bundle: Model to train in place
        dataset: Dataset with non-empty train and valid splits
        config: Training configuration
        epoch_log: Optional epochs.jsonl path, written one record per epoch

    Returns:
        (bundle, per-epoch records)

    Raises:
        DatasetValidationException: If a split is empty
        TrainingDivergedException: If a loss becomes non-finite
    """
    train, valid = dataset.split("train"), dataset.split("valid")
    for name, split in (("train", train), ("valid", valid)):
        if not split:
            raise DatasetValidationException(f"The {name} split is empty", details={"split": name})
    _require_modalities(bundle, dataset)

    params_by_name = bundle.named_parameters()
    names = list(params_by_name)
    params = [params_by_name[n] for n in names]
    state = OptimizerState(config.optimizer, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    plan = bundle.loss_plan(config.use_cycle)
    weights = config.weights
    roles = bundle.spec.roles

    log_handle = None
    if epoch_log is not None:
        Path(epoch_log).parent.mkdir(parents=True, exist_ok=True)
        log_handle = open(epoch_log, "w", encoding="utf-8")

    records: List[EpochRecord] = []
    best_val = np.inf
    best_snapshot: Optional[Dict[str, np.ndarray]] = None
    stale = 0
    logger.info(
        f"Training variant ({bundle.spec.id}) {bundle.spec.direction}: {len(train)} train / {len(valid)} valid samples, "
        f"plan {plan}, {len(params)} tensors"
    )
    try:
        epochs = range(1, config.epochs + 1)
        for epoch in tqdm(epochs, desc="epochs", disable=not settings.show_progress):
            sums: Dict[str, float] = defaultdict(float)
            counts: Dict[str, int] = defaultdict(int)
            for batch_index, batch in enumerate(iterate_batches(train, config.batch_size, roles, rng)):
                try:
                    with Tape() as tape:
                        result = bundle.forward(batch, config.teacher_forcing, config.use_cycle)
                        parts = dict(result.losses)
                        parts["l_p"] = prediction_loss(result.prediction, batch.labels, bundle.task)
                        total = coupled_objective_tensor(parts, weights, bundle.arity, plan)
                except NonFiniteException as e:
                    raise TrainingDivergedException(
                        f"Non-finite value during epoch {epoch}, batch {batch_index}: {e.message}",
                        details={"epoch": epoch, "batch": batch_index}
                    )
                if not np.isfinite(total.item()):
                    raise TrainingDivergedException(
                        f"Non-finite loss at epoch {epoch}, batch {batch_index}",
                        details={"epoch": epoch, "batch": batch_index}
                    )
                backward(total)
                grads = clip_grad_norm(gradients(tape, params), config.max_grad_norm)
                optimizer_step(state, params, grads)
                for component in plan:
                    weight = _component_weight(component, batch)
                    sums[component] += parts[component].item() * weight
                    counts[component] += weight

            means = {component: sums[component] / counts[component] for component in plan}
            train_total = coupled_objective(means, weights, bundle.arity, plan)
            val_l_p = validation_loss(bundle, valid, config.batch_size)
            if not np.isfinite(val_l_p):
                raise TrainingDivergedException(
                    f"Non-finite validation loss at epoch {epoch}",
                    details={"epoch": epoch, "batch": None}
                )
            record = EpochRecord(epoch=epoch, total=train_total, val_l_p=val_l_p, **means)
            records.append(record)
            if log_handle is not None:
                log_handle.write(record.to_json_line() + "\n")
                log_handle.flush()
            logger.info(
                f"Epoch {epoch}: total={train_total:.6f} "
                + " ".join(f"{k}={v:.6f}" for k, v in means.items())
                + f" val_l_p={val_l_p:.6f}"
            )

            if val_l_p < best_val:
                best_val = val_l_p
                best_snapshot = {n: p.data.copy() for n, p in zip(names, params)}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info(f"Early stopping after epoch {epoch}: no validation improvement for {stale} epochs")
                    break
    finally:
        if log_handle is not None:
            log_handle.close()

    if best_snapshot is not None:
        for n, p in zip(names, params):
            p.assign(best_snapshot[n])
        logger.info(f"Restored best validation parameters (val_l_p={best_val:.6f})")
    return bundle, records
