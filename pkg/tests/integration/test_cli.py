import json
import shutil

import pytest

from app.cli import main
from app.core.cache import clear_caches, dataset_cache

FAST = ["--epochs", "2", "--batch-size", "8", "--model-dim", "4", "--hidden-dim", "4", "--attention-dim", "3", "--seed", "0"]


def _train(manifest, out_dir, *extra):
    return main(["train", "--dataset", str(manifest), "--output-dir", str(out_dir), *FAST, *extra])


def _error_payload(stderr):
    lines = stderr.splitlines()
    index = next(i for i, line in enumerate(lines) if line.startswith("error: "))
    return json.loads(lines[index + 1])


@pytest.mark.integration
def test_train_writes_run_artifacts(tmp_path, bimodal_manifest, capsys):
    """train writes the epoch log, checkpoint, report and config echo."""
    out = tmp_path / "run"

    code = _train(bimodal_manifest, out, "--variant", "a", "--source", "language", "--target1", "visual")

    assert code == 0
    for name in ("epochs.jsonl", "checkpoint.json", "checkpoint.bin", "report.json", "config.echo.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["direction"] == "T⇄V"
    assert set(report["splits"]) == {"train", "valid", "test"}
    assert json.loads(capsys.readouterr().out)["variant"] == "a"


@pytest.mark.integration
def test_eval_reproduces_training_report(tmp_path, bimodal_manifest):
    """Evaluating the saved checkpoint gives the metrics reported after training."""
    out = tmp_path / "run"
    _train(bimodal_manifest, out, "--variant", "b")
    trained = json.loads((out / "report.json").read_text())["splits"]["test"]

    code = main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--dataset", str(bimodal_manifest),
                 "--output-dir", str(tmp_path / "eval"), "--batch-size", "8"])

    evaluated = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert code == 0
    assert evaluated["metrics"] == pytest.approx(trained["metrics"])


@pytest.mark.integration
def test_eval_without_target_files(tmp_path, bimodal_manifest):
    """Deleting the target modality's frames leaves metrics intact and diagnostics null."""
    out = tmp_path / "run"
    _train(bimodal_manifest, out, "--variant", "a")
    trained = json.loads((out / "report.json").read_text())["splits"]["test"]
    shutil.rmtree(bimodal_manifest.parent / "visual")

    code = main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--dataset", str(bimodal_manifest),
                 "--output-dir", str(tmp_path / "eval"), "--batch-size", "8"])

    evaluated = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert code == 0
    assert evaluated["metrics"] == pytest.approx(trained["metrics"])
    assert evaluated["diagnostics"] == {"l_t": None, "l_c": None}


@pytest.mark.integration
def test_eval_ignores_unreadable_target_files(tmp_path, bimodal_manifest):
    """A corrupted target frame file changes neither exit status nor predictions."""
    out = tmp_path / "run"
    _train(bimodal_manifest, out, "--variant", "a")
    trained = json.loads((out / "report.json").read_text())["splits"]["test"]
    victim = sorted((bimodal_manifest.parent / "visual").glob("*.csv"))[0]
    victim.write_text("garbage,not,numbers\n")

    code = main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--dataset", str(bimodal_manifest),
                 "--output-dir", str(tmp_path / "eval"), "--batch-size", "8"])

    evaluated = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert code == 0
    assert evaluated["metrics"] == pytest.approx(trained["metrics"])
    assert evaluated["diagnostics"] == {"l_t": None, "l_c": None}


@pytest.mark.integration
def test_eval_exports_embeddings(tmp_path, bimodal_manifest):
    out = tmp_path / "run"
    _train(bimodal_manifest, out, "--variant", "a")

    code = main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--dataset", str(bimodal_manifest),
                 "--export-embeddings", "--corrupt-targets", "noise"])

    assert code == 0
    header = (out / "embeddings.csv").read_text().splitlines()[0]
    assert header.split(",")[:3] == ["id", "x", "y"]
    assert "separability" in json.loads((out / "report.json").read_text())


@pytest.mark.integration
def test_eval_checkpoint_dataset_mismatch(tmp_path, bimodal_manifest, capsys):
    """A checkpoint trained on other feature dims is refused."""
    out = tmp_path / "run"
    _train(bimodal_manifest, out, "--variant", "b")
    main(["synth", "--n", "20", "--L", "3", "--dims", "5,2", "--output-dir", str(tmp_path / "wide")])
    capsys.readouterr()

    code = main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--dataset", str(tmp_path / "wide" / "manifest.json")])

    assert code == 1
    assert _error_payload(capsys.readouterr().err)["error"] == "TopologyMismatchException"


@pytest.mark.integration
def test_training_is_reproducible(tmp_path, bimodal_manifest):
    """The same seed and data give byte-identical epoch logs."""
    _train(bimodal_manifest, tmp_path / "one", "--variant", "c")
    _train(bimodal_manifest, tmp_path / "two", "--variant", "c")

    assert (tmp_path / "one" / "epochs.jsonl").read_text() == (tmp_path / "two" / "epochs.jsonl").read_text()


@pytest.mark.integration
def test_ablate_subset(tmp_path, bimodal_manifest, capsys):
    """ablate with a variant filter writes both tables."""
    out = tmp_path / "ablation"

    code = main(["ablate", "--dataset", str(bimodal_manifest), "--output-dir", str(out),
                 "--variants", "a,b", "--jobs", "2", *FAST])

    assert code == 0
    table = json.loads((out / "table.json").read_text())
    assert len(table["rows"]) == 4
    assert not any(row["failed"] for row in table["rows"])
    assert "Translation" in capsys.readouterr().out
    assert (out / "a_language_visual" / "checkpoint.json").exists()


@pytest.mark.integration
@pytest.mark.slow
def test_full_trimodal_ablation(tmp_path, trimodal_manifest):
    out = tmp_path / "ablation"

    code = main(["ablate", "--dataset", str(trimodal_manifest), "--output-dir", str(out), "--jobs", "4", *FAST])

    table = json.loads((out / "table.json").read_text())
    assert code == 0
    assert len(table["rows"]) == 63
    assert table["errors"] == {}


@pytest.mark.integration
def test_align_command(tmp_path, capsys):
    """align turns raw streams and word intervals into a loadable dataset."""
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "w.csv").write_text("0.0,0.5\n0.5,1.0\n")
    (raw / "a.csv").write_text("0.0\n1.0\n2.0\n3.0\n")
    (raw / "t.csv").write_text("1,0\n0,1\n")
    (raw / "align.json").write_text(json.dumps({
        "name": "aligned",
        "modalities": [{"name": "language"}, {"name": "acoustic", "rate": 4.0}],
        "samples": [{"id": "u1", "label": 0.5, "split": "train", "intervals": "w.csv",
                     "frames": {"language": "t.csv", "acoustic": "a.csv"}}],
    }))

    code = main(["align", "--spec", str(raw / "align.json"), "--output-dir", str(tmp_path / "aligned")])

    payload = json.loads(capsys.readouterr().out)
    assert code == 0
    assert payload["samples"] == 1
    assert payload["max_length"] == 2
    assert (tmp_path / "aligned" / "manifest.json").exists()


@pytest.mark.integration
def test_align_command_rejects_bad_spec(tmp_path):
    (tmp_path / "align.json").write_text(json.dumps({"name": "x", "modalities": [], "samples": []}))

    assert main(["align", "--spec", str(tmp_path / "align.json"), "--output-dir", str(tmp_path / "out")]) == 1


@pytest.mark.integration
def test_commands_share_the_dataset_cache(tmp_path, bimodal_manifest):
    """train caches the full load; eval caches a source-only load of the same manifest."""
    clear_caches()
    out = tmp_path / "run"
    _train(bimodal_manifest, out, "--variant", "b")
    main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--dataset", str(bimodal_manifest),
          "--output-dir", str(tmp_path / "eval")])

    subsets = sorted(key[1] for key in dataset_cache.keys())
    assert subsets == [(), ("language",)]
