"""
Aligned multimodal datasets: on-disk format, loading and validation,
interval alignment, zero-padding, batching and a synthetic generator.

On disk a dataset is a ``manifest.json`` plus one headerless CSV per sample and
modality (rows are timesteps). Within a sample every modality shares one true
length (the sequences are word-aligned); sequences are zero-padded to the
longest sample in the manifest.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from scipy.stats import pearsonr

from app.core.cache import dataset_cache, dataset_cache_key
from app.core.config import settings
from app.core.exceptions import (
    AlignmentException,
    ConfigException,
    DatasetValidationException,
    UnknownModalityException,
)

logger = logging.getLogger(__name__)

Split = Literal["train", "valid", "test"]
Task = Literal["regression", "classification"]

SYNTH_MODALITY_NAMES = ("language", "visual", "acoustic")
CSV_FORMAT = "%.17g"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSequence:
    """
    One modality of one sample: an L_max x d matrix whose rows beyond
    ``true_length`` are exactly zero.
    """
    matrix: np.ndarray
    true_length: int

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise DatasetValidationException(
                "A feature sequence must be a 2-D matrix",
                details={"shape": list(self.matrix.shape)}
            )
        if not 1 <= self.true_length <= self.matrix.shape[0]:
            raise DatasetValidationException(
                f"true_length {self.true_length} outside [1, {self.matrix.shape[0]}]",
                details={"true_length": self.true_length, "max_length": self.matrix.shape[0]}
            )
        if np.any(self.matrix[self.true_length:] != 0):
            raise DatasetValidationException(
                "Rows beyond true_length must be zero",
                details={"true_length": self.true_length}
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def max_length(self) -> int:
        return self.matrix.shape[0]

    def frames(self) -> np.ndarray:
        """The unpadded L x d frames."""
        return self.matrix[: self.true_length]


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    dim: int


@dataclass(frozen=True)
class Sample:
    id: str
    features: Dict[str, FeatureSequence]
    label: float
    split: str

    @property
    def length(self) -> int:
        return next(iter(self.features.values())).true_length


@dataclass
class MultimodalDataset:
    """
    Samples in manifest order. ``loaded_modalities`` is the subset of declared
    modalities whose frames were read (all of them unless a partial load was
    requested).
    """
    name: str
    task: str
    modalities: List[ModalitySpec]
    samples: List[Sample]
    loaded_modalities: List[str] = field(default_factory=list)
    num_classes: Optional[int] = None
    readout_correlations: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.loaded_modalities:
            self.loaded_modalities = [m.name for m in self.modalities]

    @property
    def modality_names(self) -> List[str]:
        return [m.name for m in self.modalities]

    def dim(self, modality: str) -> int:
        for m in self.modalities:
            if m.name == modality:
                return m.dim
        raise UnknownModalityException(
            f"Modality '{modality}' is not declared by dataset '{self.name}'",
            details={"modality": modality, "declared": self.modality_names}
        )

    def dims(self) -> Dict[str, int]:
        return {m.name: m.dim for m in self.modalities}

    def split(self, name: str) -> List[Sample]:
        return [s for s in self.samples if s.split == name]

    @property
    def max_length(self) -> int:
        return max(s.features[self.loaded_modalities[0]].max_length for s in self.samples)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class IntervalTable:
    """Word utterance intervals of one sample, (start, end) seconds per row."""
    intervals: np.ndarray

    def __post_init__(self):
        arr = self.intervals
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise AlignmentException(
                "Interval table must have two columns (start, end)",
                details={"shape": list(arr.shape)}
            )
        if not np.isfinite(arr).all():
            raise AlignmentException("Interval table contains non-finite values")
        if np.any(arr[:, 1] < arr[:, 0]):
            raise AlignmentException("Interval end precedes its start")
        if np.any(np.diff(arr[:, 0]) < 0) or np.any(arr[1:, 0] < arr[:-1, 1]):
            raise AlignmentException("Intervals must be non-decreasing and non-overlapping")

    def __len__(self) -> int:
        return self.intervals.shape[0]


@dataclass
class Batch:
    """
    A padded batch: per modality a B x L x d array (L = longest sample in the
    batch), true lengths and labels.
    """
    ids: List[str]
    features: Dict[str, np.ndarray]
    lengths: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def steps(self) -> int:
        return int(self.lengths.max())

    def frame_mask(self, dim: int) -> np.ndarray:
        """B x L x dim boolean mask of unpadded frames."""
        valid = np.arange(self.steps)[None, :] < self.lengths[:, None]
        return np.repeat(valid[:, :, None], dim, axis=2)

    def select(self, modalities: Sequence[str]) -> "Batch":
        """A view carrying only the named modalities."""
        missing = [m for m in modalities if m not in self.features]
        if missing:
            raise UnknownModalityException(
                f"Batch has no frames for {missing}",
                details={"missing": missing, "available": sorted(self.features)}
            )
        return Batch(self.ids, {m: self.features[m] for m in modalities}, self.lengths, self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], modalities: Optional[Sequence[str]] = None) -> "Batch":
        if not samples:
            raise DatasetValidationException("Cannot batch an empty list of samples")
        names = list(modalities) if modalities is not None else list(samples[0].features)
        lengths = np.array([s.length for s in samples], dtype=np.int64)
        steps = int(lengths.max())
        features = {}
        for m in names:
            missing = [s.id for s in samples if m not in s.features]
            if missing:
                raise UnknownModalityException(
                    f"Modality '{m}' was not loaded for samples {missing[:5]}",
                    details={"modality": m, "sample_ids": missing[:5]}
                )
            features[m] = np.stack([s.features[m].matrix[:steps] for s in samples])
        labels = np.array([s.label for s in samples], dtype=np.float64)
        return cls([s.id for s in samples], features, lengths, labels)

    @classmethod
    def from_sequences(cls, sequences: Dict[str, FeatureSequence], label: float = 0.0, sample_id: str = "sample") -> "Batch":
        lengths = {seq.true_length for seq in sequences.values()}
        if len(lengths) != 1:
            raise DatasetValidationException(
                "Modalities of one sample disagree on true_length",
                details={"sample_id": sample_id, "lengths": sorted(lengths)}
            )
        length = lengths.pop()
        features = {m: seq.matrix[:length][None, :, :] for m, seq in sequences.items()}
        return cls([sample_id], features, np.array([length]), np.array([label], dtype=np.float64))


def iterate_batches(samples: Sequence[Sample], batch_size: int, modalities: Sequence[str],
                    rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
    """Mini-batches in sample order, or in a seeded random order when rng is given."""
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        yield Batch.from_samples(chunk, modalities)


# ---------------------------------------------------------------------------
# Padding and alignment
# ---------------------------------------------------------------------------

def zero_pad(seq: np.ndarray, max_length: int) -> FeatureSequence:
    """
    Pad an L x d matrix with zero rows up to max_length.

    Raises:
        DatasetValidationException: If L == 0 or L > max_length
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise DatasetValidationException("zero_pad expects an L x d matrix", details={"shape": list(seq.shape)})
    length = seq.shape[0]
    if length == 0:
        raise DatasetValidationException("Cannot pad an empty sequence", details={"length": 0})
    if length > max_length:
        raise DatasetValidationException(
            f"Sequence length {length} exceeds max_length {max_length}",
            details={"length": length, "max_length": max_length}
        )
    padded = np.zeros((max_length, seq.shape[1]))
    padded[:length] = seq
    return FeatureSequence(padded, length)


def _interval_members(num_frames: int, rate: float, table: IntervalTable) -> List[np.ndarray]:
    timestamps = np.arange(num_frames) / rate
    return [
        np.flatnonzero((timestamps >= start) & (timestamps < end))
        for start, end in table.intervals
    ]


def align_by_intervals(frames: np.ndarray, rate: float, intervals: Union[IntervalTable, np.ndarray]) -> np.ndarray:
    """
    Average fixed-rate frames over each word interval.

    Frame i has timestamp i / rate; row l of the result is the mean of the
    frames whose timestamps fall in [start_l, end_l). An interval that holds no
    frame yields a zero row and is counted in a warning.

    Args:
        frames: T x d features sampled at ``rate`` Hz
        rate: Sampling rate in Hz
        intervals: Word intervals in seconds

    Returns:
        L x d aligned features, L = number of intervals

    Raises:
        AlignmentException: If rate <= 0 or intervals fall outside [0, T / rate]
    """
    frames = np.asarray(frames, dtype=np.float64)
    table = intervals if isinstance(intervals, IntervalTable) else IntervalTable(np.asarray(intervals, dtype=np.float64))
    if rate <= 0:
        raise AlignmentException("Frame rate must be positive", details={"rate": rate})
    if frames.ndim != 2:
        raise AlignmentException("Frames must be a T x d matrix", details={"shape": list(frames.shape)})
    duration = frames.shape[0] / rate
    if len(table) and (table.intervals.min() < 0 or table.intervals.max() > duration):
        raise AlignmentException(
            f"Intervals exceed the stream duration of {duration:.3f}s",
            details={"duration": duration, "max_end": float(table.intervals.max())}
        )

    aligned = np.zeros((len(table), frames.shape[1]))
    empty = 0
    for row, members in enumerate(_interval_members(frames.shape[0], rate, table)):
        if members.size == 0:
            empty += 1
            continue
        aligned[row] = frames[members].mean(axis=0)
    if empty:
        logger.warning(f"{empty} of {len(table)} alignment intervals contained no frame; zero rows used")
    return aligned


def empty_interval_count(num_frames: int, rate: float, intervals: IntervalTable) -> int:
    return sum(1 for members in _interval_members(num_frames, rate, intervals) if members.size == 0)


def read_intervals_csv(path: Path) -> IntervalTable:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as e:
        raise AlignmentException(f"Cannot read intervals from {path}: {str(e)}", details={"path": str(path)})
    return IntervalTable(values.reshape(-1, 2) if values.size else np.zeros((0, 2)))


# ---------------------------------------------------------------------------
# Manifest schema and loading
# ---------------------------------------------------------------------------

class ModalityEntry(BaseModel):
    name: str = Field(..., min_length=1)
    dim: int = Field(..., gt=0)


class SampleEntry(BaseModel):
    id: str = Field(..., min_length=1)
    label: float
    split: Split
    length: int = Field(..., gt=0)
    files: Dict[str, str]


class DatasetManifest(BaseModel):
    name: str
    task: Task
    modalities: List[ModalityEntry] = Field(..., min_length=1)
    samples: List[SampleEntry]

    @model_validator(mode="after")
    def check_consistency(self) -> "DatasetManifest":
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate modality names in {names}")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids")
        for s in self.samples:
            missing = set(names) - set(s.files)
            if missing:
                raise ValueError(f"sample '{s.id}' has no file for modalities {sorted(missing)}")
            if self.task == "classification" and (s.label < 0 or s.label != int(s.label)):
                raise ValueError(f"sample '{s.id}' has a non-integer class label {s.label}")
        return self


def _read_frames(path: Path, sample_id: str, modality: str, dim: int, length: int) -> np.ndarray:
    if not path.exists():
        raise DatasetValidationException(
            f"Missing frame file for sample '{sample_id}' ({modality}): {path}",
            details={"sample_id": sample_id, "modality": modality, "path": str(path)}
        )
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise DatasetValidationException(
            f"Unparseable frame file for sample '{sample_id}' ({modality}): {str(e)}",
            details={"sample_id": sample_id, "modality": modality, "path": str(path)}
        )
    if values.shape[1] != dim:
        raise DatasetValidationException(
            f"Dimension mismatch for sample '{sample_id}' ({modality}): declared {dim}, found {values.shape[1]} columns",
            details={"sample_id": sample_id, "modality": modality, "declared_dim": dim, "found_dim": values.shape[1]}
        )
    if values.shape[0] != length:
        raise DatasetValidationException(
            f"Modalities of sample '{sample_id}' disagree on true length: {modality} has {values.shape[0]} rows, declared {length}",
            details={"sample_id": sample_id, "modality": modality, "declared_length": length, "found_length": values.shape[0]}
        )
    if not np.isfinite(values).all():
        raise DatasetValidationException(
            f"Non-finite value in sample '{sample_id}' ({modality})",
            details={"sample_id": sample_id, "modality": modality}
        )
    return values


def read_manifest(manifest_path: Path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetValidationException(
            f"Dataset manifest not found at {manifest_path}",
            details={"path": str(manifest_path)}
        )
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
        return DatasetManifest.model_validate(raw)
    except json.JSONDecodeError as e:
        raise DatasetValidationException(f"Manifest is not valid JSON: {str(e)}", details={"path": str(manifest_path)})
    except ValidationError as e:
        first = e.errors()[0]
        raise DatasetValidationException(
            f"Manifest schema violation at {'.'.join(str(p) for p in first['loc'])}: {first['msg']}",
            details={"path": str(manifest_path), "field": ".".join(str(p) for p in first["loc"]), "errors": len(e.errors())}
        )


def load_dataset(manifest_path: Path, modalities: Optional[Sequence[str]] = None, allow_missing: bool = False) -> MultimodalDataset:
    """
    Load and validate a dataset.

    Args:
        manifest_path: Path to manifest.json
        modalities: Load frames only for these modalities (all when None)
        allow_missing: Drop a requested modality from ``loaded_modalities`` when
            any of its files is missing instead of failing

    Returns:
        Dataset in manifest order with zero-padded sequences

    Raises:
        DatasetValidationException: Schema violation, dimension mismatch,
            length disagreement, missing file or non-finite value
        UnknownModalityException: If a requested modality is not declared
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    declared = {m.name: m.dim for m in manifest.modalities}
    wanted = list(modalities) if modalities is not None else list(declared)
    for m in wanted:
        if m not in declared:
            raise UnknownModalityException(
                f"Modality '{m}' is not declared by the manifest",
                details={"modality": m, "declared": list(declared)}
            )
    if allow_missing:
        present = []
        for m in wanted:
            if all((manifest_path.parent / s.files[m]).exists() for s in manifest.samples):
                present.append(m)
            else:
                logger.warning(f"Frames for modality '{m}' are missing; it will not be loaded")
        wanted = present
    if not wanted:
        raise DatasetValidationException("No modality could be loaded", details={"path": str(manifest_path)})

    max_length = max((s.length for s in manifest.samples), default=0)

    def load_sample(entry: SampleEntry) -> Sample:
        features = {}
        for m in wanted:
            frames = _read_frames(manifest_path.parent / entry.files[m], entry.id, m, declared[m], entry.length)
            features[m] = zero_pad(frames, max_length)
        label = int(entry.label) if manifest.task == "classification" else entry.label
        return Sample(entry.id, features, label, entry.split)

    with ThreadPoolExecutor(max_workers=max(1, settings.loader_workers), thread_name_prefix="dataset-loader") as pool:
        samples = list(pool.map(load_sample, manifest.samples))

    num_classes = None
    if manifest.task == "classification":
        num_classes = int(max((s.label for s in manifest.samples), default=0)) + 1
        num_classes = max(num_classes, 2)

    logger.info(f"Loaded dataset '{manifest.name}': {len(samples)} samples, modalities {wanted}, max length {max_length}")
    return MultimodalDataset(
        name=manifest.name,
        task=manifest.task,
        modalities=[ModalitySpec(m.name, m.dim) for m in manifest.modalities],
        samples=samples,
        loaded_modalities=wanted,
        num_classes=num_classes,
    )


def load_dataset_cached(manifest_path: Path, modalities: Optional[Sequence[str]] = None) -> MultimodalDataset:
    """load_dataset through the shared dataset cache (datasets are immutable after load)."""
    key = dataset_cache_key(Path(manifest_path), modalities)
    cached = dataset_cache.get(key)
    if cached is not None:
        return cached
    dataset = load_dataset(manifest_path, modalities)
    dataset_cache[key] = dataset
    return dataset


def attach_modalities(dataset: MultimodalDataset, manifest_path: Path, modalities: Sequence[str]) -> MultimodalDataset:
    """
    Copy of ``dataset`` with the frames of ``modalities`` added where they can be
    read. A modality whose files are absent or invalid is left unloaded and the
    original samples are kept as they are.
    """
    extra = [m for m in modalities if m not in dataset.loaded_modalities]
    if not extra:
        return dataset
    try:
        loaded = load_dataset(manifest_path, extra, allow_missing=True)
    except DatasetValidationException as e:
        logger.warning(f"Modalities {extra} not attached: {e.message}")
        return dataset
    by_id = {s.id: s for s in loaded.samples}
    samples = [
        Sample(s.id, {**s.features, **by_id[s.id].features}, s.label, s.split)
        for s in dataset.samples
    ]
    return MultimodalDataset(
        name=dataset.name,
        task=dataset.task,
        modalities=dataset.modalities,
        samples=samples,
        loaded_modalities=dataset.loaded_modalities + loaded.loaded_modalities,
        num_classes=dataset.num_classes,
        readout_correlations=dataset.readout_correlations,
    )


def save_dataset(dataset: MultimodalDataset, out_dir: Path) -> Path:
    """
    Write manifest.json and one CSV per sample and modality (unpadded rows).

    Returns:
        Path of the written manifest
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in dataset.samples:
        files = {}
        for m in dataset.loaded_modalities:
            rel = Path(m) / f"{sample.id}.csv"
            (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
            np.savetxt(out_dir / rel, sample.features[m].frames(), delimiter=",", fmt=CSV_FORMAT)
            files[m] = rel.as_posix()
        entries.append({
            "id": sample.id,
            "label": sample.label,
            "split": sample.split,
            "length": sample.length,
            "files": files,
        })
    manifest = {
        "name": dataset.name,
        "task": dataset.task,
        "modalities": [{"name": m.name, "dim": m.dim} for m in dataset.modalities if m.name in dataset.loaded_modalities],
        "samples": entries,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info(f"Dataset '{dataset.name}' written to {out_dir} ({len(entries)} samples)")
    return manifest_path


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

class SynthSpec(BaseModel):
    name: str = "synthetic"
    n: int = Field(500, gt=0)
    length: int = Field(10, gt=0, description="Maximum (padded) sequence length L")
    dims: List[int] = Field(default_factory=lambda: [8, 6], min_length=2, max_length=3)
    noise: float = Field(0.1, ge=0.0, description="Gaussian noise sigma added to every modality")
    seed: int = 0
    latent_dim: int = Field(4, gt=0)
    task: Task = "regression"
    shared_maps: bool = False
    variable_length: bool = True
    split_fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    check_samples: int = Field(500, gt=1, description="Monte-Carlo samples for the readout-correlation check")

    @property
    def arity(self) -> int:
        return len(self.dims)

    @field_validator("split_fractions")
    @classmethod
    def fractions_sum_to_one(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(f < 0 for f in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        return v

    @model_validator(mode="after")
    def shared_maps_need_equal_dims(self) -> "SynthSpec":
        if self.shared_maps and len(set(self.dims)) != 1:
            raise ValueError("shared_maps requires every modality to have the same dim")
        return self


def _latent_sequence(rng: np.random.Generator, length: int, latent_dim: int) -> np.ndarray:
    z = np.empty((length, latent_dim))
    z[0] = rng.normal(size=latent_dim)
    for t in range(1, length):
        z[t] = 0.8 * z[t - 1] + 0.6 * rng.normal(size=latent_dim)
    return z


def _label_value(z: np.ndarray, readout: np.ndarray, task: str) -> float:
    u = float(z.mean(axis=0) @ readout)
    if task == "classification":
        return int(u >= 0.0)
    return 3.0 * float(np.tanh(1.5 * u))


def _draw_sample(rng: np.random.Generator, spec: SynthSpec, maps: List[np.ndarray], readout: np.ndarray):
    length = int(rng.integers(max(1, spec.length // 2), spec.length + 1)) if spec.variable_length else spec.length
    z = _latent_sequence(rng, length, spec.latent_dim)
    frames = [z @ a + spec.noise * rng.normal(size=(length, a.shape[1])) for a in maps]
    return frames, _label_value(z, readout, spec.task)


def _readout_correlations(spec: SynthSpec, maps: List[np.ndarray], readout: np.ndarray, names: Sequence[str]) -> Dict[str, float]:
    """Correlation between labels and the best linear readout of each mean-pooled modality."""
    rng = np.random.default_rng([spec.seed, 1])
    pooled = [[] for _ in maps]
    labels = []
    for _ in range(spec.check_samples):
        frames, label = _draw_sample(rng, spec, maps, readout)
        for k, f in enumerate(frames):
            pooled[k].append(f.mean(axis=0))
        labels.append(label)
    y = np.asarray(labels, dtype=np.float64)
    out = {}
    for name, feats in zip(names, pooled):
        x = np.column_stack([np.asarray(feats), np.ones(len(feats))])
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        fitted = x @ coef
        if np.ptp(fitted) == 0 or np.ptp(y) == 0:
            out[name] = 0.0
        else:
            out[name] = float(pearsonr(fitted, y)[0])
    return out


def synth_generate(spec: SynthSpec) -> MultimodalDataset:
    """
    Desk-scale stand-in for an aligned sentiment corpus.

    Each sample has a latent AR(1) sequence z; modality m is z @ A_m plus
    Gaussian noise, with A_m a fixed random map; the label is a bounded
    nonlinear function of mean(z) (3 tanh(1.5 u) for regression, the sign
    class of u for classification). Splits are 70/10/20 of a seeded shuffle.
    """
    if spec.arity > len(SYNTH_MODALITY_NAMES):
        raise ConfigException("At most three synthetic modalities are supported", details={"dims": spec.dims})
    names = list(SYNTH_MODALITY_NAMES[: spec.arity])
    rng = np.random.default_rng(spec.seed)

    first = rng.normal(0.0, 1.0 / np.sqrt(spec.latent_dim), size=(spec.latent_dim, spec.dims[0]))
    maps = [first]
    for d in spec.dims[1:]:
        maps.append(first.copy() if spec.shared_maps else rng.normal(0.0, 1.0 / np.sqrt(spec.latent_dim), size=(spec.latent_dim, d)))
    readout = rng.normal(size=spec.latent_dim)
    readout /= np.linalg.norm(readout)

    drawn = [_draw_sample(rng, spec, maps, readout) for _ in range(spec.n)]

    order = rng.permutation(spec.n)
    n_train = int(round(spec.split_fractions[0] * spec.n))
    n_valid = int(round(spec.split_fractions[1] * spec.n))
    split_of = np.empty(spec.n, dtype=object)
    split_of[order[:n_train]] = "train"
    split_of[order[n_train:n_train + n_valid]] = "valid"
    split_of[order[n_train + n_valid:]] = "test"

    samples = []
    for i, (frames, label) in enumerate(drawn):
        features = {name: zero_pad(f, spec.length) for name, f in zip(names, frames)}
        samples.append(Sample(f"s{i:05d}", features, label, str(split_of[i])))

    correlations = _readout_correlations(spec, maps, readout, names)
    for name, r in correlations.items():
        if not 0.0 < r < 1.0:
            logger.warning(f"Synthetic modality '{name}' has readout correlation {r:.4f}, outside (0, 1)")

    logger.info(f"Generated synthetic dataset: n={spec.n}, L={spec.length}, dims={spec.dims}, noise={spec.noise}, seed={spec.seed}")
    return MultimodalDataset(
        name=spec.name,
        task=spec.task,
        modalities=[ModalitySpec(name, d) for name, d in zip(names, spec.dims)],
        samples=samples,
        num_classes=2 if spec.task == "classification" else None,
        readout_correlations=correlations,
    )


# ---------------------------------------------------------------------------
# Word-level alignment of raw streams
# ---------------------------------------------------------------------------

class AlignModality(BaseModel):
    name: str = Field(..., min_length=1)
    rate: Optional[float] = Field(None, gt=0.0, description="Frame rate in Hz; None for streams already one row per word")


class AlignSample(BaseModel):
    id: str = Field(..., min_length=1)
    label: float
    split: Split
    intervals: str = Field(..., description="CSV of (start, end) seconds per word")
    frames: Dict[str, str]


class AlignSpec(BaseModel):
    """Raw per-sample streams plus word intervals, the input of the ``align`` command."""
    name: str
    task: Task = "regression"
    modalities: List[AlignModality] = Field(..., min_length=1)
    samples: List[AlignSample] = Field(..., min_length=1)

    @model_validator(mode="after")
    def every_sample_has_every_stream(self) -> "AlignSpec":
        names = {m.name for m in self.modalities}
        for s in self.samples:
            missing = names - set(s.frames)
            if missing:
                raise ValueError(f"sample '{s.id}' has no stream for {sorted(missing)}")
        return self


def _read_stream(path: Path, sample_id: str, modality: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as e:
        raise AlignmentException(
            f"Cannot read stream for sample '{sample_id}' ({modality}): {str(e)}",
            details={"sample_id": sample_id, "modality": modality, "path": str(path)}
        )


def align_dataset(spec: AlignSpec, base_dir: Path) -> MultimodalDataset:
    """
    Average every fixed-rate stream over each sample's word intervals and
    zero-pad all samples to the longest one. Streams without a rate must
    already hold one row per interval.

    Raises:
        AlignmentException: Unreadable streams, bad intervals, or a word-level
            stream whose row count differs from the interval count
        DatasetValidationException: If a modality's dim differs between samples
    """
    base_dir = Path(base_dir)
    aligned: List[Dict[str, np.ndarray]] = []
    dims: Dict[str, int] = {}
    for entry in spec.samples:
        table = read_intervals_csv(base_dir / entry.intervals)
        if len(table) == 0:
            raise AlignmentException(f"Sample '{entry.id}' has no word intervals", details={"sample_id": entry.id})
        rows = {}
        for m in spec.modalities:
            raw = _read_stream(base_dir / entry.frames[m.name], entry.id, m.name)
            if m.rate is None:
                if raw.shape[0] != len(table):
                    raise AlignmentException(
                        f"Word-level stream of sample '{entry.id}' ({m.name}) has {raw.shape[0]} rows for {len(table)} intervals",
                        details={"sample_id": entry.id, "modality": m.name}
                    )
                rows[m.name] = raw
            else:
                rows[m.name] = align_by_intervals(raw, m.rate, table)
            if dims.setdefault(m.name, raw.shape[1]) != raw.shape[1]:
                raise DatasetValidationException(
                    f"Dimension mismatch for sample '{entry.id}' ({m.name}): expected {dims[m.name]}, found {raw.shape[1]}",
                    details={"sample_id": entry.id, "modality": m.name, "declared_dim": dims[m.name], "found_dim": raw.shape[1]}
                )
        aligned.append(rows)

    max_length = max(next(iter(rows.values())).shape[0] for rows in aligned)
    samples = [
        Sample(entry.id, {m: zero_pad(x, max_length) for m, x in rows.items()}, entry.label, entry.split)
        for entry, rows in zip(spec.samples, aligned)
    ]
    logger.info(f"Aligned {len(samples)} samples of '{spec.name}' to at most {max_length} words")
    return MultimodalDataset(
        name=spec.name,
        task=spec.task,
        modalities=[ModalitySpec(m.name, dims[m.name]) for m in spec.modalities],
        samples=samples,
    )
