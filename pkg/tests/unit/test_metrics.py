import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from app.core.exceptions import UndefinedMetricException
from app.services.metrics import (
    BEST_MARK,
    FAILED,
    MetricsReport,
    ablation_table,
    binary_accuracy,
    export_embeddings_2d,
    f1_score,
    mae_metric,
    metrics,
    pearson_r,
    separability,
    sign_class,
    table_records,
)

values = st.lists(st.floats(min_value=-3, max_value=3, allow_nan=False), min_size=2, max_size=30)


@pytest.mark.unit
def test_pearson_known_value():
    """r([1, 2, 3], [1, 2, 4]) is about 0.9820."""
    assert pearson_r([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9820, abs=1e-4)


@pytest.mark.unit
def test_pearson_undefined_cases():
    with pytest.raises(UndefinedMetricException):
        pearson_r([1.0], [2.0])
    with pytest.raises(UndefinedMetricException):
        pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedMetricException):
        pearson_r([], [])
    with pytest.raises(UndefinedMetricException):
        mae_metric([1.0, 2.0], [1.0])


@pytest.mark.unit
def test_zero_counts_as_positive():
    """The sentiment boundary is inclusive."""
    np.testing.assert_array_equal(sign_class([-0.1, 0.0, 0.1]), [0, 1, 1])
    assert binary_accuracy([0.0], [0.5]) == 1.0


@pytest.mark.unit
def test_f1_without_positives_is_zero():
    assert f1_score([0, 0], [0, 0]) == 0.0
    assert f1_score([1, 0, 1], [1, 0, 0]) == pytest.approx(2 / 3)


@pytest.mark.unit
def test_literal_metric_examples():
    assert binary_accuracy([0.2, -0.1, 1.0, -2.0], [1, 1, -1, -2]) == 0.5
    assert f1_score([1, 1, 0, 0], [1, 0, 1, 0]) == 0.5
    assert mae_metric([0, 1], [1, 1]) == 0.5


def _brute_force(a, b):
    n = len(a)
    acc = sum((x >= 0) == (y >= 0) for x, y in zip(a, b)) / n
    tp = sum(x >= 0 and y >= 0 for x, y in zip(a, b))
    fp = sum(x >= 0 and y < 0 for x, y in zip(a, b))
    fn = sum(x < 0 and y >= 0 for x, y in zip(a, b))
    f1 = 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    mae = sum(abs(x - y) for x, y in zip(a, b)) / n
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    corr = cov / (sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b)) ** 0.5
    return acc, f1, mae, corr


@pytest.mark.unit
def test_metrics_match_brute_force(rng):
    """Acc, F1, MAE and Pearson r agree with loop implementations on 1000 random cases."""
    for _ in range(1000):
        n = int(rng.integers(3, 20))
        a, b = rng.normal(size=n).tolist(), rng.normal(size=n).tolist()
        acc, f1, mae, corr = _brute_force(a, b)

        assert binary_accuracy(a, b) == pytest.approx(acc, rel=1e-9)
        assert f1_score(sign_class(a), sign_class(b)) == pytest.approx(f1, rel=1e-9)
        assert mae_metric(a, b) == pytest.approx(mae, rel=1e-9)
        assert pearson_r(a, b) == pytest.approx(corr, rel=1e-9, abs=1e-12)


@pytest.mark.unit
@hyp_settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=-3, max_value=3, allow_nan=False, allow_subnormal=False), min_size=2, max_size=30),
    st.floats(min_value=1e-3, max_value=1e3),
)
def test_sign_metrics_invariant_under_positive_scaling(ys, factor):
    """Scaling predictions by a positive factor keeps every sign class."""
    preds = np.asarray(ys)
    labels = np.cos(np.arange(preds.size))

    assert binary_accuracy(factor * preds, labels) == binary_accuracy(preds, labels)
    assert f1_score(sign_class(factor * preds), sign_class(labels)) == f1_score(sign_class(preds), sign_class(labels))


@pytest.mark.unit
@hyp_settings(max_examples=50, deadline=None)
@given(values)
def test_perfect_prediction_invariants(ys):
    """Predicting the labels exactly gives MAE 0 and accuracy 1."""
    assert mae_metric(ys, ys) == 0.0
    assert binary_accuracy(ys, ys) == 1.0


@pytest.mark.unit
@hyp_settings(max_examples=50, deadline=None)
@given(values, values)
def test_metric_ranges(a, b):
    """Acc and F1 lie in [0, 1]; MAE is non-negative and symmetric."""
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]

    assert 0.0 <= binary_accuracy(a, b) <= 1.0
    assert 0.0 <= f1_score(sign_class(a), sign_class(b)) <= 1.0
    assert mae_metric(a, b) == pytest.approx(mae_metric(b, a))
    assert mae_metric(a, b) >= 0.0


@pytest.mark.unit
@hyp_settings(max_examples=50, deadline=None)
@given(values, st.floats(min_value=0.1, max_value=10), st.floats(min_value=-5, max_value=5))
def test_pearson_invariant_under_affine_maps(ys, factor, offset):
    """Correlation is unchanged by positive scaling and shifting."""
    ys = np.asarray(ys)
    if np.ptp(ys) < 1e-3:
        return
    noise = np.sin(np.arange(ys.size) * 1.7)

    base = pearson_r(ys + noise, ys)
    assert pearson_r(factor * (ys + noise) + offset, ys) == pytest.approx(base, abs=1e-9)
    assert -1.0 <= base <= 1.0


@pytest.mark.unit
def test_regression_report():
    report = metrics(np.array([0.5, -1.0, 2.0, -0.2]), [1.0, -2.0, 1.0, 0.3], "regression")

    assert report.n == 4
    assert report.acc == pytest.approx(0.75)
    assert report.mae == pytest.approx((0.5 + 1.0 + 1.0 + 0.5) / 4)
    assert report.corr is not None
    assert report.task == "regression"


@pytest.mark.unit
def test_constant_predictions_have_no_correlation():
    """Constant outputs leave Corr undefined instead of failing the report."""
    report = metrics(np.zeros(4), [1.0, -1.0, 0.5, 2.0], "regression")

    assert report.corr is None
    assert report.mae is not None


@pytest.mark.unit
def test_classification_report():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])

    report = metrics(probs, [0, 1, 1], "classification")

    assert report.acc == pytest.approx(2 / 3)
    assert report.f1 == pytest.approx(2 / 3)
    assert report.mae is None and report.corr is None


@pytest.mark.unit
def test_export_embeddings_2d(rng):
    pooled = rng.normal(size=(6, 4))

    frame = export_embeddings_2d(pooled, [1, 0, 1, 0, 1, 0], [f"s{i}" for i in range(6)])

    assert list(frame.columns) == ["id", "x", "y", "label"]
    assert len(frame) == 6
    np.testing.assert_allclose(frame[["x", "y"]].mean().to_numpy(), [0.0, 0.0], atol=1e-12)


@pytest.mark.unit
def test_projection_of_centered_plane_is_isometric(rng):
    """Already 2-D centered points are only rotated or reflected."""
    points = rng.normal(size=(8, 2))
    points -= points.mean(axis=0)

    frame = export_embeddings_2d(points, [0, 1] * 4)

    np.testing.assert_allclose(pdist(frame[["x", "y"]].to_numpy()), pdist(points), rtol=0, atol=1e-9)


@pytest.mark.unit
def test_export_needs_two_points(rng):
    with pytest.raises(UndefinedMetricException):
        export_embeddings_2d(rng.normal(size=(1, 4)), [1])


@pytest.mark.unit
def test_separability():
    """Well-separated clusters score higher than interleaved ones."""
    points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])

    separated = separability(points, [0, 0, 1, 1])
    mixed = separability(points, [0, 1, 0, 1])

    assert separated == pytest.approx(20.0)
    assert mixed < separated
    with pytest.raises(UndefinedMetricException):
        separability(points, [1, 1, 1, 1])


def _report(acc, f1, mae, corr):
    return MetricsReport(acc=acc, f1=f1, mae=mae, corr=corr, n=10, task="regression")


@pytest.mark.unit
def test_ablation_table_marks_best_values():
    """Max Acc/F1/Corr and min MAE are starred; ties are all starred; failures read 'failed'."""
    results = {
        ("a", "T⇄V"): _report(0.8, 0.7, 0.5, 0.6),
        ("b", "T→V"): _report(0.8, 0.6, 0.4, 0.5),
        ("c", "T→V, V→T"): None,
    }

    table = ablation_table(results)
    lines = table.splitlines()

    assert "MCTN Bimodal (a)" in lines[1]
    assert lines[1].count("80.0" + BEST_MARK) == 1
    assert lines[2].count("80.0" + BEST_MARK) == 1
    assert "0.400" + BEST_MARK in lines[2]
    assert "0.600" + BEST_MARK in lines[1]
    assert lines[3].count(FAILED) == 4


@pytest.mark.unit
def test_table_records_are_json_ready():
    records = table_records({
        ("a", "T⇄V"): _report(0.5, None, 0.5, None),
        ("b", "T→V"): None,
    })

    assert records[0]["Acc"] == 0.5
    assert records[0]["F1"] is None
    assert records[1]["failed"] is True
    assert isinstance(records[0]["Acc_best"], bool)
