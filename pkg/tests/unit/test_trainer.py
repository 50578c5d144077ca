import json

import numpy as np
import pytest

from app.core.exceptions import DatasetValidationException, TrainingDivergedException, UnknownModalityException
from app.services.datasets import Batch, MultimodalDataset, Sample
from app.services.evaluation import corrupt_targets
from app.services.losses import coupled_objective, translation_loss
from app.services.mctn import VariantSpec, build_variant
from app.services.trainer import EpochRecord, TrainConfig, fit, predict_samples, validation_loss


def _train(dataset, config, variant="a", log=None):
    spec = VariantSpec(id=variant, source="language", target1="visual")
    bundle = build_variant(spec, dataset.dims(), config)
    return fit(bundle, dataset, config, epoch_log=log)


@pytest.mark.unit
def test_epoch_log_lines(tmp_path, bimodal_dataset, tiny_train_config):
    """One JSON line per epoch whose total is the weighted sum of its components."""
    log = tmp_path / "epochs.jsonl"

    _, records = _train(bimodal_dataset, tiny_train_config, log=log)

    lines = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(lines) == len(records) == tiny_train_config.epochs
    for line in lines:
        assert set(line) == {"epoch", "l_t", "l_c", "l_p", "total", "val_l_p"}
        expected = coupled_objective(line, tiny_train_config.weights, "bimodal", ("l_t", "l_c", "l_p"))
        assert line["total"] == pytest.approx(expected)


@pytest.mark.unit
def test_extra_components_logged_only_when_present(tmp_path, bimodal_dataset, tiny_train_config):
    """Variant c logs its reverse translation loss."""
    log = tmp_path / "epochs.jsonl"

    _train(bimodal_dataset, tiny_train_config.model_copy(update={"epochs": 1}), variant="c", log=log)

    line = json.loads(log.read_text().splitlines()[0])
    assert "l_t_rev" in line
    assert "l_c" not in line or line["l_c"] is None


@pytest.mark.unit
def test_training_is_deterministic(tmp_path, bimodal_dataset, tiny_train_config):
    """Same seed, same data: identical epoch logs and parameters."""
    first_bundle, _ = _train(bimodal_dataset, tiny_train_config, log=tmp_path / "one.jsonl")
    second_bundle, _ = _train(bimodal_dataset, tiny_train_config, log=tmp_path / "two.jsonl")

    assert (tmp_path / "one.jsonl").read_text() == (tmp_path / "two.jsonl").read_text()
    for p, q in zip(first_bundle.parameters(), second_bundle.parameters()):
        np.testing.assert_array_equal(p.data, q.data)


@pytest.mark.unit
def test_zero_learning_rate_keeps_parameters(bimodal_dataset, tiny_train_config):
    """With lr = 0 the trained bundle equals its initialisation."""
    config = tiny_train_config.model_copy(update={"learning_rate": 0.0, "optimizer": "sgd", "epochs": 1})
    spec = VariantSpec(id="a", source="language", target1="visual")
    initial = build_variant(spec, bimodal_dataset.dims(), config)
    before = [p.data.copy() for p in initial.parameters()]

    trained, _ = fit(initial, bimodal_dataset, config)

    for p, b in zip(trained.parameters(), before):
        np.testing.assert_array_equal(p.data, b)


@pytest.mark.unit
def test_best_validation_parameters_restored(bimodal_dataset, tiny_train_config):
    """After training, the validation loss equals the best logged val_l_p."""
    config = tiny_train_config.model_copy(update={"epochs": 4})
    bundle, records = _train(bimodal_dataset, config)

    best = min(r.val_l_p for r in records)
    assert validation_loss(bundle, bimodal_dataset.split("valid"), config.batch_size) == pytest.approx(best)


@pytest.mark.unit
def test_early_stopping(bimodal_dataset, tiny_train_config):
    """lr = 0 never improves after epoch 1, so patience 1 stops after epoch 2."""
    config = tiny_train_config.model_copy(update={"learning_rate": 0.0, "patience": 1, "epochs": 10})

    _, records = _train(bimodal_dataset, config)

    assert len(records) == 2


@pytest.mark.unit
def test_empty_validation_split_rejected(bimodal_dataset, tiny_train_config):
    samples = [Sample(s.id, s.features, s.label, "train" if s.split == "valid" else s.split)
               for s in bimodal_dataset.samples]
    no_valid = MultimodalDataset(bimodal_dataset.name, bimodal_dataset.task, bimodal_dataset.modalities, samples)

    with pytest.raises(DatasetValidationException):
        _train(no_valid, tiny_train_config)


@pytest.mark.unit
def test_training_needs_target_frames(bimodal_dataset, tiny_train_config):
    """A dataset without the target modality cannot train a translator."""
    dropped = corrupt_targets(bimodal_dataset, ["language"], "drop")

    with pytest.raises(UnknownModalityException):
        _train(dropped, tiny_train_config)


@pytest.mark.unit
def test_divergence_detected(bimodal_dataset, tiny_train_config):
    """A huge learning rate ends in TrainingDivergedException, not NaN parameters."""
    config = tiny_train_config.model_copy(update={"learning_rate": 1e200, "optimizer": "sgd", "epochs": 5})

    with pytest.raises(TrainingDivergedException):
        _train(bimodal_dataset, config)


@pytest.mark.unit
def test_predict_samples_order(bimodal_dataset, tiny_train_config):
    """Batching does not reorder predictions."""
    spec = VariantSpec(id="b", source="language", target1="visual")
    bundle = build_variant(spec, bimodal_dataset.dims(), tiny_train_config)
    samples = bimodal_dataset.samples[:6]

    np.testing.assert_allclose(predict_samples(bundle, samples, 6), predict_samples(bundle, samples, 4))


@pytest.mark.unit
def test_epoch_record_line_omits_absent_extras():
    line = json.loads(EpochRecord(epoch=1, l_t=1.0, l_p=0.5, total=1.5, val_l_p=0.4).to_json_line())

    assert "l_t1" not in line
    assert line["l_c"] is None


@pytest.mark.unit
def test_zero_translation_weights_leave_decoder_untouched(bimodal_dataset, tiny_train_config):
    """With lambda_t = lambda_c = 0 only the prediction path is trained."""
    config = tiny_train_config.model_copy(update={"lambda_t": 0.0, "lambda_c": 0.0})
    spec = VariantSpec(id="a", source="language", target1="visual")
    bundle = build_variant(spec, bimodal_dataset.dims(), config)
    before = {n: p.data.copy() for n, p in bundle.named_parameters().items()}

    fit(bundle, bimodal_dataset, config)

    after = bundle.named_parameters()
    translation_only = [n for n in before if {"decoder", "attention", "output_proj"} & set(n.split("."))]
    assert translation_only
    for name in translation_only:
        np.testing.assert_array_equal(after[name].data, before[name], err_msg=name)
    assert any(not np.array_equal(after[n].data, before[n]) for n in before if ".encoder." in n)


@pytest.mark.unit
def test_cycle_free_mctn_matches_one_way_variant(bimodal_dataset, tiny_train_config):
    """Variant (a) without its cycle term trains exactly like variant (b)."""
    config = tiny_train_config.model_copy(update={"use_cycle": False, "lambda_c": 0.0, "epochs": 3})

    cyclic, cyclic_records = _train(bimodal_dataset, config, variant="a")
    one_way, one_way_records = _train(bimodal_dataset, config, variant="b")

    assert [r.model_dump() for r in cyclic_records] == [r.model_dump() for r in one_way_records]
    one_way_params = one_way.named_parameters()
    for name, p in cyclic.named_parameters().items():
        np.testing.assert_array_equal(p.data, one_way_params[name].data, err_msg=name)


@pytest.mark.unit
def test_epoch_translation_loss_is_a_per_frame_mean(bimodal_dataset, tiny_train_config):
    """At lr = 0 the logged l_t equals the masked mean over all training frames, whatever the batching."""
    config = tiny_train_config.model_copy(update={"learning_rate": 0.0, "optimizer": "sgd", "epochs": 3,
                                                  "patience": 10, "batch_size": 5})
    spec = VariantSpec(id="b", source="language", target1="visual")
    bundle = build_variant(spec, bimodal_dataset.dims(), config)
    train = bimodal_dataset.split("train")
    assert len({s.length for s in train}) > 1

    whole = Batch.from_samples(train, spec.roles)
    expected = translation_loss(bundle.forward(whole).outputs["x_hat_t1"], whole.features["visual"], whole.lengths).item()
    _, records = fit(bundle, bimodal_dataset, config)

    for record in records:
        assert record.l_t == pytest.approx(expected, rel=1e-9)


@pytest.mark.unit
@pytest.mark.slow
def test_overfits_four_samples(bimodal_dataset):
    """Variant (b) memorises four training sequences."""
    train = [Sample(s.id, s.features, s.label, "train") for s in bimodal_dataset.samples[:4]]
    valid = [Sample(s.id, s.features, s.label, "valid") for s in bimodal_dataset.samples[4:6]]
    tiny = MultimodalDataset(bimodal_dataset.name, bimodal_dataset.task, bimodal_dataset.modalities, train + valid)
    config = TrainConfig(seed=0, epochs=500, batch_size=4, patience=500, learning_rate=1e-2,
                         model_dim=8, hidden_dim=8, attention_dim=4)

    _, records = _train(tiny, config, variant="b")

    assert min(r.l_t for r in records) < 0.1 * records[0].l_t
