"""
Split evaluation: source-only predictions and metrics, diagnostic translation
losses (free-running, only when target frames are available) and pooled
representations for embedding export.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from app.services.datasets import FeatureSequence, MultimodalDataset, Sample, iterate_batches
from app.services.mctn import ModelBundle
from app.services.metrics import MetricsReport, metrics
from app.services.trainer import predict_samples

logger = logging.getLogger(__name__)


@dataclass
class EvaluationResult:
    split: str
    report: MetricsReport
    ids: List[str]
    labels: np.ndarray
    predictions: np.ndarray
    diagnostics: Dict[str, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "split": self.split,
            "metrics": self.report.model_dump(),
            "diagnostics": self.diagnostics,
        }


def _translation_components(bundle: ModelBundle) -> List[str]:
    return [c for c in bundle.loss_plan(use_cycle=True) if c != "l_p"]


def diagnostic_losses(bundle: ModelBundle, dataset: MultimodalDataset, samples: List[Sample],
                      batch_size: int) -> Dict[str, Optional[float]]:
    """
    Per-frame mean translation/cycle losses with free-running decoding. Every component
    is None when any role modality was not loaded.
    """
    components = _translation_components(bundle)
    missing = [m for m in bundle.spec.roles if m not in dataset.loaded_modalities]
    if missing or not samples:
        if missing:
            logger.info(f"Diagnostic translation losses unavailable: no frames for {missing}")
        return {c: None for c in components}
    sums = {c: 0.0 for c in components}
    frames = 0
    for batch in iterate_batches(samples, batch_size, bundle.spec.roles):
        result = bundle.forward(batch, teacher_forcing=False, use_cycle=True)
        weight = int(batch.lengths.sum())
        for c in components:
            sums[c] += result.losses[c].item() * weight
        frames += weight
    return {c: sums[c] / frames for c in components}


def pooled_representations(bundle: ModelBundle, samples: List[Sample], batch_size: int) -> np.ndarray:
    """N x h mean-pooled prediction representations, source modalities only."""
    pooled = []
    for batch in iterate_batches(samples, batch_size, bundle.input_modalities):
        rep, _ = bundle.encode_source(batch)
        pooled.append(rep.pooled())
    return np.concatenate(pooled, axis=0)


def evaluate_split(bundle: ModelBundle, dataset: MultimodalDataset, split: str, batch_size: int = 32) -> EvaluationResult:
    """
    Metrics of source-only predictions on one split plus diagnostics.

    Raises:
        DatasetValidationException: If the split is empty (via batching)
    """
    samples = dataset.split(split)
    predictions = predict_samples(bundle, samples, batch_size)
    labels = np.array([s.label for s in samples], dtype=np.float64)
    report = metrics(predictions, labels, bundle.task)
    diagnostics = diagnostic_losses(bundle, dataset, samples, batch_size)
    logger.info(f"Evaluated {split} ({len(samples)} samples): {report.model_dump()}")
    return EvaluationResult(split, report, [s.id for s in samples], labels, predictions, diagnostics)


def corrupt_targets(dataset: MultimodalDataset, keep: List[str], mode: str, seed: int = 0) -> MultimodalDataset:
    """
    In-memory copy whose non-``keep`` modalities are replaced with Gaussian
    noise ("noise") or removed ("drop"). Files on disk are untouched.
    """
    rng = np.random.default_rng(seed)
    targets = [m for m in dataset.loaded_modalities if m not in keep]
    samples = []
    for s in dataset.samples:
        features = {}
        for m, seq in s.features.items():
            if m not in targets:
                features[m] = seq
            elif mode == "noise":
                noisy = np.zeros_like(seq.matrix)
                noisy[: seq.true_length] = rng.normal(size=(seq.true_length, seq.dim))
                features[m] = FeatureSequence(noisy, seq.true_length)
        samples.append(Sample(s.id, features, s.label, s.split))
    loaded = dataset.loaded_modalities if mode == "noise" else [m for m in dataset.loaded_modalities if m not in targets]
    logger.info(f"Target modalities {targets} corrupted in memory ({mode})")
    return MultimodalDataset(
        name=dataset.name,
        task=dataset.task,
        modalities=dataset.modalities,
        samples=samples,
        loaded_modalities=loaded,
        num_classes=dataset.num_classes,
    )
