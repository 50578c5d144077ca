"""
Evaluation metrics, ablation tables and 2-D embedding export.

Regression outputs are turned into binary sentiment classes with the boundary
at zero, inclusive: value >= 0 is positive. This choice changes Acc and F1 for
samples whose label is exactly 0.
"""
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import pearsonr
from sklearn.decomposition import PCA
from sklearn.metrics import accuracy_score
from sklearn.metrics import f1_score as sklearn_f1
from sklearn.metrics import mean_absolute_error

from app.core.exceptions import UndefinedMetricException
from app.utils.notation import VARIANT_TITLES

logger = logging.getLogger(__name__)

BEST_MARK = "*"
FAILED = "failed"
TABLE_COLUMNS = ["Acc", "F1", "MAE", "Corr"]


def _pair(y_hat: Sequence[float], y: Sequence[float], name: str) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    b = np.asarray(y, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise UndefinedMetricException(f"{name}: empty input", details={"metric": name})
    if a.size != b.size:
        raise UndefinedMetricException(
            f"{name}: inputs have different lengths ({a.size} vs {b.size})",
            details={"metric": name, "lengths": [a.size, b.size]}
        )
    return a, b


def sign_class(values: Sequence[float]) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) >= 0.0).astype(np.int64)


def binary_accuracy(y_hat: Sequence[float], y: Sequence[float]) -> float:
    """Fraction of samples whose sign class (value >= 0) agrees."""
    a, b = _pair(y_hat, y, "binary_accuracy")
    return float(accuracy_score(sign_class(b), sign_class(a)))


def f1_score(pred: Sequence[int], truth: Sequence[int]) -> float:
    """Binary F1 with positive class 1; 0.0 when precision + recall is 0."""
    a, b = _pair(pred, truth, "f1_score")
    return float(sklearn_f1(b.astype(np.int64), a.astype(np.int64), pos_label=1, average="binary", zero_division=0))


def mae_metric(y_hat: Sequence[float], y: Sequence[float]) -> float:
    a, b = _pair(y_hat, y, "mae")
    return float(mean_absolute_error(b, a))


def pearson_r(y_hat: Sequence[float], y: Sequence[float]) -> float:
    """
    Sample correlation.

    Raises:
        UndefinedMetricException: On fewer than 2 values or a constant input
    """
    a, b = _pair(y_hat, y, "pearson_r")
    if a.size < 2:
        raise UndefinedMetricException("pearson_r: at least two values are needed", details={"metric": "pearson_r", "n": int(a.size)})
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedMetricException("pearson_r: correlation is undefined for a constant input", details={"metric": "pearson_r"})
    return float(np.clip(pearsonr(a, b)[0], -1.0, 1.0))


class MetricsReport(BaseModel):
    acc: Optional[float] = Field(None, ge=0.0, le=1.0)
    f1: Optional[float] = Field(None, ge=0.0, le=1.0)
    mae: Optional[float] = Field(None, ge=0.0)
    corr: Optional[float] = Field(None, ge=-1.0, le=1.0)
    n: int = Field(..., ge=0)
    task: str


def metrics(predictions: np.ndarray, labels: Sequence[float], task: str) -> MetricsReport:
    """
    Regression: binary Acc/F1 on sign classes, MAE, Pearson r (None, with a
    warning, when the predictions are constant). Classification: accuracy of
    the argmax class and binary F1 (None for more than two classes).
    """
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    predictions = np.asarray(predictions, dtype=np.float64)
    if task == "classification":
        chosen = predictions.argmax(axis=-1)
        truth = labels.astype(np.int64)
        acc = float(accuracy_score(truth, chosen))
        f1 = f1_score(chosen, truth) if predictions.shape[-1] == 2 else None
        return MetricsReport(acc=acc, f1=f1, n=int(labels.size), task=task)

    values = predictions.reshape(-1)
    try:
        corr = pearson_r(values, labels)
    except UndefinedMetricException as e:
        logger.warning(f"Correlation unavailable: {e.message}")
        corr = None
    return MetricsReport(
        acc=binary_accuracy(values, labels),
        f1=f1_score(sign_class(values), sign_class(labels)),
        mae=mae_metric(values, labels),
        corr=corr,
        n=int(labels.size),
        task=task,
    )


# ---------------------------------------------------------------------------
# Embedding export
# ---------------------------------------------------------------------------

def project_2d(points: np.ndarray) -> np.ndarray:
    """
    Project rows onto their top-2 principal components. Each component's sign
    is fixed so its largest-magnitude loading is positive.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise UndefinedMetricException("At least two representations are needed for a 2-D export", details={"n": int(points.shape[0]) if points.ndim else 0})
    centered = points - points.mean(axis=0)
    out = np.zeros((points.shape[0], 2))
    if not np.any(centered):
        return out
    k = min(2, points.shape[0], points.shape[1])
    pca = PCA(n_components=k, svd_solver="full").fit(points)
    components = pca.components_.copy()
    for i in range(k):
        if components[i, np.argmax(np.abs(components[i]))] < 0:
            components[i] = -components[i]
    out[:, :k] = centered @ components.T
    return out


def export_embeddings_2d(pooled: np.ndarray, labels: Sequence[float], ids: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Rows (id, x, y, label) of mean-pooled representations projected to 2-D.

    Args:
        pooled: N x h mean-pooled representations (JointRepresentation.pooled())
        labels: N labels
        ids: N sample ids (0..N-1 when omitted)
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    xy = project_2d(pooled)
    ids = list(ids) if ids is not None else [str(i) for i in range(pooled.shape[0])]
    return pd.DataFrame({"id": ids, "x": xy[:, 0], "y": xy[:, 1], "label": list(labels)})


def separability(points: np.ndarray, classes: Sequence[int]) -> float:
    """
    Distance between the two class centroids divided by the mean distance of
    points to their own class centroid.

    Raises:
        UndefinedMetricException: Unless both classes 0 and 1 are present
    """
    points = np.asarray(points, dtype=np.float64)
    classes = np.asarray(classes).reshape(-1).astype(np.int64)
    groups = [points[classes == c] for c in (0, 1)]
    if any(g.shape[0] == 0 for g in groups):
        raise UndefinedMetricException("separability needs samples of both classes")
    centroids = [g.mean(axis=0) for g in groups]
    between = float(np.linalg.norm(centroids[0] - centroids[1]))
    within = float(np.mean(np.concatenate([np.linalg.norm(g - c, axis=1) for g, c in zip(groups, centroids)])))
    if within == 0.0:
        return float("inf") if between > 0 else 0.0
    return between / within


# ---------------------------------------------------------------------------
# Ablation tables
# ---------------------------------------------------------------------------

def _fmt(column: str, value: Optional[float]) -> str:
    if value is None:
        return "-"
    if column in ("Acc", "F1"):
        return f"{100.0 * value:.1f}"
    return f"{value:.3f}"


def ablation_frame(results: Mapping[Tuple[str, str], Optional[MetricsReport]]) -> pd.DataFrame:
    """
    One row per (variant id, direction). A None report marks a failed run.
    Best values per column (max Acc/F1/Corr, min MAE) are marked with '*';
    ties are all marked.
    """
    rows = []
    for (variant, direction_text), report in results.items():
        values = {}
        if report is not None:
            values = {"Acc": report.acc, "F1": report.f1, "MAE": report.mae, "Corr": report.corr}
        rows.append({
            "Variant": f"{VARIANT_TITLES.get(variant, variant)} ({variant})",
            "Translation": direction_text,
            **{c: values.get(c) for c in TABLE_COLUMNS},
            "failed": report is None,
        })
    frame = pd.DataFrame(rows, columns=["Variant", "Translation"] + TABLE_COLUMNS + ["failed"])

    for column in TABLE_COLUMNS:
        numeric = pd.to_numeric(frame[column], errors="coerce")
        if numeric.notna().any():
            best = numeric.min() if column == "MAE" else numeric.max()
            frame[f"{column}_best"] = numeric == best
        else:
            frame[f"{column}_best"] = False
    return frame


def ablation_table(results: Mapping[Tuple[str, str], Optional[MetricsReport]]) -> str:
    """Aligned-text table with Acc/F1/MAE/Corr columns and best values starred."""
    if not results:
        return ""
    frame = ablation_frame(results)
    display = pd.DataFrame({"Variant": frame["Variant"], "Translation": frame["Translation"]})
    for column in TABLE_COLUMNS:
        cells: List[str] = []
        for value, best, failed in zip(frame[column], frame[f"{column}_best"], frame["failed"]):
            if failed:
                cells.append(FAILED)
                continue
            value = None if pd.isna(value) else float(value)
            cells.append(_fmt(column, value) + (BEST_MARK if best and value is not None else ""))
        display[column] = cells
    return display.to_string(index=False)


def table_records(results: Mapping[Tuple[str, str], Optional[MetricsReport]]) -> List[Dict[str, object]]:
    """JSON-ready rows of the ablation table."""
    frame = ablation_frame(results)
    records = []
    for row in frame.to_dict(orient="records"):
        clean = {}
        for k, v in row.items():
            if isinstance(v, np.generic):
                v = v.item()
            clean[k] = None if isinstance(v, float) and np.isnan(v) else v
        records.append(clean)
    return records
