"""
Training sessions and the ablation matrix.

A session trains one variant on one role assignment, writes its epoch log and
checkpoint, reloads the checkpoint and reports every non-empty split from the
reloaded bundle. The ablation runner enumerates the applicable variants for a
dataset, runs the sessions (optionally in a thread pool) and assembles the
table serially.
"""
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from app.core.config import settings
from app.core.exceptions import AppBaseException, DatasetValidationException
from app.services.datasets import MultimodalDataset
from app.services.evaluation import EvaluationResult, evaluate_split
from app.services.mctn import BIMODAL_VARIANTS, TRIMODAL_VARIANTS, VariantSpec, build_variant, load_bundle, save_bundle
from app.services.metrics import MetricsReport, ablation_table, table_records
from app.services.trainer import EpochRecord, TrainConfig, fit

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
CHECKPOINT_NAME = "checkpoint.json"


@dataclass
class SessionResult:
    spec: VariantSpec
    records: List[EpochRecord]
    reports: Dict[str, EvaluationResult]
    checkpoint: Path

    def report_dict(self) -> Dict[str, object]:
        return {
            "variant": self.spec.id,
            "title": self.spec.title,
            "direction": self.spec.direction,
            "epochs_run": len(self.records),
            "splits": {name: r.to_dict() for name, r in self.reports.items()},
        }


def session_config(config: TrainConfig, dataset: MultimodalDataset) -> TrainConfig:
    """The training config with the dataset's task and class count."""
    return config.model_copy(update={"task": dataset.task, "num_classes": dataset.num_classes})


def run_session(spec: VariantSpec, dataset: MultimodalDataset, config: TrainConfig, run_dir: Path) -> SessionResult:
    """
    Train, checkpoint, reload and evaluate one variant.

    The reports are computed from the reloaded checkpoint, so a later ``eval``
    of the same checkpoint reproduces them exactly.

    Outputs under run_dir: epochs.jsonl, checkpoint.json/.bin, report.json
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = session_config(config, dataset)
    bundle = build_variant(spec, dataset.dims(), config)
    bundle.check_dataset(dataset)
    bundle, records = fit(bundle, dataset, config, epoch_log=run_dir / "epochs.jsonl")

    checkpoint = run_dir / CHECKPOINT_NAME
    save_bundle(bundle, checkpoint)
    logger.info(f"Checkpoint written to {checkpoint}")
    restored = load_bundle(checkpoint)

    reports = {}
    for split in SPLITS:
        if dataset.split(split):
            reports[split] = evaluate_split(restored, dataset, split, config.batch_size)
    result = SessionResult(spec, records, reports, checkpoint)
    (run_dir / "report.json").write_text(json.dumps(result.report_dict(), indent=2), encoding="utf-8")
    return result


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def _concat_subspecs(s: str, t1: str, t2: str) -> List[Tuple[List[str], List[str]]]:
    """Two modalities into the third, one into the other two, and a pair into an overlapping pair."""
    return [([s, t1], [t2]), ([s], [t1, t2]), ([s, t1], [s, t2])]


def enumerate_runs(modalities: Sequence[str], variants: Optional[Sequence[str]] = None,
                   sources: Optional[Sequence[str]] = None) -> List[VariantSpec]:
    """
    Every applicable (variant, role assignment) combination.

    Bimodal variants run over all ordered modality pairs. With three
    modalities, (e) and (f) run over all six role assignments, (f) in both
    level-1 modes; (g) per assignment; (i) once per source and unordered
    target pair; (h) once per distinct pair of input and output sets.
    """
    wanted = set(variants) if variants else set(BIMODAL_VARIANTS + TRIMODAL_VARIANTS)
    allowed_sources = set(sources) if sources else None
    modalities = list(modalities)
    specs: List[VariantSpec] = []
    seen = set()

    def add(spec: VariantSpec, key: Tuple) -> None:
        if spec.id not in wanted or key in seen:
            return
        if allowed_sources is not None and spec.source not in allowed_sources:
            return
        seen.add(key)
        specs.append(spec)

    for s, t in itertools.permutations(modalities, 2):
        for v in BIMODAL_VARIANTS:
            add(VariantSpec(id=v, source=s, target1=t), (v, s, t))

    if len(modalities) < 3:
        skipped = sorted(wanted & set(TRIMODAL_VARIANTS))
        if skipped:
            logger.info(f"Skipping variants {skipped}: the dataset has {len(modalities)} modalities, trimodal variants need 3")
        return specs
    if len(modalities) > 3:
        logger.info(f"Trimodal variants use the first three modalities: {modalities[:3]}")

    for s, t1, t2 in itertools.permutations(modalities[:3], 3):
        add(VariantSpec(id="e", source=s, target1=t1, target2=t2), ("e", s, t1, t2))
        add(VariantSpec(id="f", source=s, target1=t1, target2=t2), ("f", s, t1, t2, "b"))
        add(VariantSpec(id="f", source=s, target1=t1, target2=t2, level1="c"), ("f", s, t1, t2, "c"))
        add(VariantSpec(id="g", source=s, target1=t1, target2=t2), ("g", s, t1, t2))
        for inputs, outputs in _concat_subspecs(s, t1, t2):
            spec = VariantSpec(id="h", source=s, target1=t1, target2=t2, inputs=inputs, outputs=outputs)
            add(spec, ("h", frozenset(inputs), frozenset(outputs)))
        add(VariantSpec(id="i", source=s, target1=t1, target2=t2), ("i", s, frozenset((t1, t2))))
    return specs


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass
class AblationOutcome:
    specs: List[VariantSpec]
    reports: Dict[str, Optional[MetricsReport]] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return bool(self.errors)

    def table_input(self) -> Dict[Tuple[str, str], Optional[MetricsReport]]:
        return {(spec.id, spec.direction): self.reports.get(spec.slug()) for spec in self.specs}


def _run_one(spec: VariantSpec, dataset: MultimodalDataset, config: TrainConfig, out_dir: Path,
             split: str) -> Tuple[Optional[MetricsReport], Optional[str]]:
    try:
        result = run_session(spec, dataset, config, out_dir / spec.slug())
        return result.reports[split].report, None
    except AppBaseException as e:
        logger.error(f"Run {spec.slug()} failed: {e.message}")
        return None, e.message
    except Exception as e:
        logger.error(f"Run {spec.slug()} failed: {str(e)}", exc_info=True)
        return None, f"{type(e).__name__}: {str(e)}"


def run_ablation(dataset: MultimodalDataset, config: TrainConfig, out_dir: Path,
                 variants: Optional[Sequence[str]] = None, sources: Optional[Sequence[str]] = None,
                 jobs: int = 1, split: str = "test") -> AblationOutcome:
    """
    Run every enumerated combination and write table.txt and table.json.

    Sessions are independent and seeded by the same config, so results do not
    depend on ``jobs``. A failing run is recorded and its table cells read
    "failed"; the remaining runs still execute.

    Raises:
        DatasetValidationException: If the dataset has fewer than 2 modalities
            or the reported split is empty
    """
    modalities = dataset.loaded_modalities
    if len(modalities) < 2:
        raise DatasetValidationException(
            "Ablation needs at least two modalities",
            details={"modalities": modalities}
        )
    if not dataset.split(split):
        raise DatasetValidationException(f"The {split} split is empty", details={"split": split})

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = enumerate_runs(modalities, variants, sources)
    outcome = AblationOutcome(specs)
    logger.info(f"Ablation: {len(specs)} runs on '{dataset.name}' with {jobs} job(s)")

    def task(spec: VariantSpec) -> Tuple[Optional[MetricsReport], Optional[str]]:
        return _run_one(spec, dataset, config, out_dir, split)

    progress = tqdm(total=len(specs), desc="ablation", disable=not settings.show_progress)
    with ThreadPoolExecutor(max_workers=max(1, jobs), thread_name_prefix="ablation") as pool:
        for spec, (report, error) in zip(specs, pool.map(task, specs)):
            outcome.reports[spec.slug()] = report
            if error is not None:
                outcome.errors[spec.slug()] = error
            progress.update(1)
    progress.close()

    rows = outcome.table_input()
    (out_dir / "table.txt").write_text(ablation_table(rows) + "\n", encoding="utf-8")
    (out_dir / "table.json").write_text(json.dumps({
        "split": split,
        "rows": table_records(rows),
        "errors": outcome.errors,
    }, indent=2), encoding="utf-8")
    if outcome.failed:
        logger.warning(f"{len(outcome.errors)} of {len(specs)} ablation runs failed: {sorted(outcome.errors)}")
    return outcome
