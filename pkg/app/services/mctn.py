"""
Multimodal cyclic translation models.

A ModelBundle wires one or more Seq2SeqModels and a recurrent prediction head
into one of nine topologies:

    a  MCTN Bimodal       S⇄T with one shared model (translation + cycle)
    b  Simple Bimodal     S→T only
    c  No-Cycle Bimodal   one shared model run S→T and T→S independently
    d  Double Bimodal     two models; both directions' embeddings concatenated
    e  MCTN Trimodal      level 1 S⇄T1 cyclic, level 2 joint→T2
    f  Simple Trimodal    level 1 S→T1 (or S→T1, T1→S), level 2 joint→T2
    g  Double Trimodal    variant-d level 1 feeding one level-2 translator
    h  Concat Trimodal    concatenated modalities translated to concatenated modalities
    i  Paired Trimodal    one encoder, two decoders (S→T1 and S→T2)

Prediction always runs from the source modality alone: the representation a
bundle predicts from is built without reading any target modality.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.core.autodiff import Tensor, concat, reshape, slice_, softmax, where
from app.core.checkpoint import load_checkpoint, save_checkpoint
from app.core.config import settings
from app.core.exceptions import (
    ShapeMismatchException,
    TopologyMismatchException,
    UnknownModalityException,
    VariantSpecException,
)
from app.services.datasets import Batch, MultimodalDataset
from app.services.losses import cycle_loss, translation_loss
from app.services.seq2seq import (
    EncodedSequence,
    Frames,
    GruParams,
    Linear,
    ParameterGroup,
    Seq2SeqModel,
    as_batch,
    decode_sequence,
    encode,
    gru_step,
)
from app.utils.notation import VARIANT_TITLES, direction

logger = logging.getLogger(__name__)

JOINT = "joint"
TOPOLOGY_FORMAT = "mctn-bundle"

VariantId = Literal["a", "b", "c", "d", "e", "f", "g", "h", "i"]
Task = Literal["regression", "classification"]

VARIANT_FLAGS: Dict[str, Dict[str, bool]] = {
    "a": {"cyclic": True, "shared_model": True, "concat_input": False, "paired_decoders": False},
    "b": {"cyclic": False, "shared_model": True, "concat_input": False, "paired_decoders": False},
    "c": {"cyclic": False, "shared_model": True, "concat_input": False, "paired_decoders": False},
    "d": {"cyclic": False, "shared_model": False, "concat_input": False, "paired_decoders": False},
    "e": {"cyclic": True, "shared_model": True, "concat_input": False, "paired_decoders": False},
    "f": {"cyclic": False, "shared_model": True, "concat_input": False, "paired_decoders": False},
    "g": {"cyclic": False, "shared_model": False, "concat_input": False, "paired_decoders": False},
    "h": {"cyclic": False, "shared_model": True, "concat_input": True, "paired_decoders": False},
    "i": {"cyclic": False, "shared_model": True, "concat_input": False, "paired_decoders": True},
}

BIMODAL_VARIANTS = ("a", "b", "c", "d")
TRIMODAL_VARIANTS = ("e", "f", "g", "h", "i")


# ---------------------------------------------------------------------------
# Variant specification
# ---------------------------------------------------------------------------

class VariantSpec(BaseModel):
    """
    Topology id, modality roles and structural flags. Flags left unset are
    filled from the id; flags that contradict the id are rejected.
    """
    id: VariantId
    source: str
    target1: str
    target2: Optional[str] = None
    cyclic: Optional[bool] = None
    shared_model: Optional[bool] = None
    concat_input: Optional[bool] = None
    paired_decoders: Optional[bool] = None
    level1: Literal["b", "c"] = Field("b", description="Level-1 mode of variant f")
    inputs: Optional[List[str]] = Field(None, description="Concatenated input modalities of variant h")
    outputs: Optional[List[str]] = Field(None, description="Concatenated output modalities of variant h")

    @model_validator(mode="before")
    @classmethod
    def resolve_flags(cls, data: Any) -> Any:
        if not isinstance(data, dict) or data.get("id") not in VARIANT_FLAGS:
            return data
        data = dict(data)
        for flag, expected in VARIANT_FLAGS[data["id"]].items():
            given = data.get(flag)
            if given is None:
                data[flag] = expected
            elif bool(given) != expected:
                raise ValueError(f"variant {data['id']} requires {flag}={expected}")
        return data

    @model_validator(mode="after")
    def check_roles(self) -> "VariantSpec":
        roles = [self.source, self.target1] + ([self.target2] if self.target2 else [])
        if len(set(roles)) != len(roles):
            raise ValueError(f"modality roles must be distinct, got {roles}")
        if self.id in TRIMODAL_VARIANTS and not self.target2:
            raise ValueError(f"variant {self.id} needs a second target modality")
        if self.id in BIMODAL_VARIANTS and self.target2:
            raise ValueError(f"variant {self.id} takes no second target modality")
        if self.level1 != "b" and self.id != "f":
            raise ValueError("level1 applies to variant f only")
        if self.id == "h":
            self.inputs = self.inputs or [self.source, self.target1]
            self.outputs = self.outputs or [self.target2]
            for name, group in (("inputs", self.inputs), ("outputs", self.outputs)):
                if len(set(group)) != len(group):
                    raise ValueError(f"variant h {name} repeat a modality: {group}")
                unknown = set(group) - set(roles)
                if unknown:
                    raise ValueError(f"variant h {name} name modalities outside the roles: {sorted(unknown)}")
            if set(self.inputs) == set(self.outputs):
                raise ValueError("variant h inputs and outputs must differ")
        elif self.inputs or self.outputs:
            raise ValueError("inputs/outputs apply to variant h only")
        return self

    @classmethod
    def parse(cls, **fields: Any) -> "VariantSpec":
        """Validate and raise VariantSpecException instead of a pydantic error."""
        try:
            return cls(**fields)
        except ValidationError as e:
            first = e.errors()[0]
            raise VariantSpecException(
                f"Invalid variant spec: {first['msg']}",
                details={"fields": {k: v for k, v in fields.items() if v is not None}}
            )

    @property
    def arity(self) -> str:
        return "trimodal" if self.id in TRIMODAL_VARIANTS else "bimodal"

    @property
    def roles(self) -> List[str]:
        return [self.source, self.target1] + ([self.target2] if self.target2 else [])

    @property
    def title(self) -> str:
        return VARIANT_TITLES[self.id]

    @property
    def direction(self) -> str:
        return direction(self.id, self.source, self.target1, self.target2, self.inputs, self.outputs, self.level1)

    def input_modalities(self) -> List[str]:
        """Modalities read at inference time."""
        return list(self.inputs) if self.id == "h" else [self.source]

    def slug(self) -> str:
        parts = [self.id] + (["+".join(self.inputs), "to", "+".join(self.outputs)] if self.id == "h" else self.roles)
        if self.id == "f" and self.level1 == "c":
            parts.append("rev")
        return "_".join(parts)


class ModelConfig(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model_dim: int = Field(default_factory=lambda: settings.model_dim, gt=0)
    hidden_dim: int = Field(default_factory=lambda: settings.hidden_dim, gt=0)
    attention_dim: int = Field(default_factory=lambda: settings.attention_dim, gt=0)
    init_scale: float = Field(default_factory=lambda: settings.init_scale, gt=0.0)
    seed: int = Field(default_factory=lambda: settings.seed)
    task: Task = "regression"
    num_classes: Optional[int] = Field(None, ge=2)

    def architecture(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in ModelConfig.model_fields}


# ---------------------------------------------------------------------------
# Representations and the prediction head
# ---------------------------------------------------------------------------

@dataclass
class JointRepresentation:
    """
    States a prediction is made from: B x L x h with per-sample true lengths.
    provenance is "bimodal" (E_{S⇄T}), "trimodal" (E_{(S⇄T1)→T2}) or
    "variant:<id>".
    """
    states: Tensor
    lengths: np.ndarray
    provenance: str = "bimodal"

    def rows(self, index: int = 0) -> np.ndarray:
        return self.states.data[index, : int(self.lengths[index])]

    def pooled(self) -> np.ndarray:
        """Mean over each sample's true length, B x h."""
        return np.stack([self.rows(b).mean(axis=0) for b in range(self.states.shape[0])])


def joint_representation(enc: EncodedSequence, provenance: str = "bimodal") -> JointRepresentation:
    """The forward encoder output, unchanged, tagged with its provenance."""
    return JointRepresentation(enc.states, enc.lengths, provenance)


class PredictionHead(ParameterGroup):
    """GRU over the representation rows; its last state feeds a linear map to 1 value or K logits."""

    def __init__(self, input_dim: int, hidden_dim: int, task: str, num_classes: Optional[int],
                 rng: np.random.Generator, scale: float):
        self.task = task
        self.input_dim = input_dim
        self.num_classes = num_classes if task == "classification" else None
        if task == "classification" and (num_classes is None or num_classes < 2):
            raise VariantSpecException("A classification head needs num_classes >= 2", details={"num_classes": num_classes})
        self.gru = GruParams(input_dim, hidden_dim, rng, scale)
        self.output = Linear(hidden_dim, 1 if task == "regression" else num_classes, rng, scale)


def predict(head: PredictionHead, rep: JointRepresentation) -> Tensor:
    """
    Regression: B values. Classification: B x K probability rows.

    Raises:
        ShapeMismatchException: If the representation is empty or has the wrong width
    """
    batch, steps, width = rep.states.shape
    if steps == 0 or batch == 0:
        raise ShapeMismatchException("predict: empty representation", details={"op": "predict", "shapes": [list(rep.states.shape)]})
    if width != head.input_dim:
        raise ShapeMismatchException(
            f"predict: representation width {width} does not match head input {head.input_dim}",
            details={"op": "predict", "shapes": [list(rep.states.shape)]}
        )
    hidden = head.gru.hidden_dim
    h = Tensor(np.zeros((batch, hidden)))
    for t in range(steps):
        h_new = gru_step(head.gru, h, slice_(rep.states, (slice(None), t, slice(None))))
        active = t < rep.lengths
        h = h_new if active.all() else where(np.repeat(active[:, None], hidden, axis=1), h_new, h)
    out = head.output(h)
    if head.task == "regression":
        return reshape(out, (batch,))
    return softmax(out, axis=-1)


# ---------------------------------------------------------------------------
# Translation compositions
# ---------------------------------------------------------------------------

def _back_translate(m: Seq2SeqModel, x_t_hat: Tensor, s: str, t: str, lengths: np.ndarray) -> Tensor:
    steps = x_t_hat.shape[1]
    return decode_sequence(m, encode(m, x_t_hat, t, lengths), steps, s)


def cyclic_translate(m: Seq2SeqModel, x_s: Frames, s: str, t: str, lengths: Optional[Sequence[int]] = None,
                     teacher: Optional[Frames] = None, cycle: bool = True
                     ) -> Tuple[JointRepresentation, Tensor, Optional[Tensor]]:
    """
    Forward translation S→T and, with ``cycle``, back-translation of the
    predicted T into S with the same model (free-running, gradients flow).

    Returns:
        (E_fwd, x_t_hat, x_s_hat); x_s_hat is None without the cycle

    Raises:
        UnknownModalityException: If s or t is not registered on m
    """
    for name in (s, t):
        if name not in m.output_proj:
            raise UnknownModalityException(f"Modality '{name}' is not registered on this model", details={"modality": name})
    frames, lengths = as_batch(x_s, lengths)
    enc = encode(m, frames, s, lengths)
    steps = enc.states.shape[1]
    x_t_hat = decode_sequence(m, enc, steps, t, teacher)
    x_s_hat = _back_translate(m, x_t_hat, s, t, lengths) if cycle else None
    return joint_representation(enc, "bimodal"), x_t_hat, x_s_hat


def _check_level2(m1_hidden: int, m2: Seq2SeqModel) -> None:
    if JOINT not in m2.input_proj:
        raise UnknownModalityException("Level-2 model has no joint-representation projection", details={"modality": JOINT})
    if m2.input_proj[JOINT].in_dim != m1_hidden:
        raise ShapeMismatchException(
            f"Level-1 hidden size {m1_hidden} does not match the level-2 input projection ({m2.input_proj[JOINT].in_dim})",
            details={"op": "hierarchical_forward", "shapes": [[m1_hidden], [m2.input_proj[JOINT].in_dim]]}
        )


def hierarchical_forward(m1: Seq2SeqModel, m2: Seq2SeqModel, x_s: Frames, s: str, t1: str, t2: str,
                         lengths: Optional[Sequence[int]] = None, teacher_t1: Optional[Frames] = None,
                         teacher_t2: Optional[Frames] = None, cycle: bool = True
                         ) -> Tuple[JointRepresentation, Tensor, Optional[Tensor], Tensor]:
    """
    Level 1 is cyclic_translate(m1, x_s); level 2 encodes the level-1
    representation with m2 and decodes T2. Level 2 has no cycle.

    Returns:
        (E2, x_t1_hat, x_s_hat, x_t2_hat)
    """
    _check_level2(m1.hidden_dim, m2)
    e1, x_t1_hat, x_s_hat = cyclic_translate(m1, x_s, s, t1, lengths, teacher_t1, cycle)
    e2 = encode(m2, e1.states, JOINT, e1.lengths)
    x_t2_hat = decode_sequence(m2, e2, e2.states.shape[1], t2, teacher_t2)
    return joint_representation(e2, "trimodal"), x_t1_hat, x_s_hat, x_t2_hat


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    losses: Dict[str, Tensor]
    prediction: Tensor
    representation: JointRepresentation
    outputs: Dict[str, Tensor] = field(default_factory=dict)


class ModelBundle(ParameterGroup):
    """Translators, prediction head and the wiring for one VariantSpec."""

    def __init__(self, spec: VariantSpec, dims: Dict[str, int], config: ModelConfig,
                 translators: Dict[str, Seq2SeqModel], head: PredictionHead):
        self.spec = spec
        self.dims = dict(dims)
        self.config = config
        self.translators = translators
        self.head = head

    @property
    def arity(self) -> str:
        return self.spec.arity

    @property
    def task(self) -> str:
        return self.config.task

    @property
    def input_modalities(self) -> List[str]:
        return self.spec.input_modalities()

    def loss_plan(self, use_cycle: bool = True) -> Tuple[str, ...]:
        """Loss components this topology produces, in summation order."""
        v = self.spec.id
        plans = {
            "a": ("l_t", "l_c", "l_p") if use_cycle else ("l_t", "l_p"),
            "b": ("l_t", "l_p"),
            "c": ("l_t", "l_t_rev", "l_p"),
            "d": ("l_t", "l_t_rev", "l_p"),
            "e": ("l_t1", "l_c1", "l_t2", "l_p") if use_cycle else ("l_t1", "l_t2", "l_p"),
            "f": ("l_t1", "l_t1_rev", "l_t2", "l_p") if self.spec.level1 == "c" else ("l_t1", "l_t2", "l_p"),
            "g": ("l_t1", "l_t1_rev", "l_t2", "l_p"),
            "h": ("l_t", "l_p"),
            "i": ("l_t1", "l_t2", "l_p"),
        }
        return plans[v]

    def encoder_count(self) -> int:
        return len({id(m.encoder) for m in self.translators.values()})

    def decoder_count(self) -> int:
        return len({id(m.decoder) for m in self.translators.values()})

    def translator_parameter_count(self) -> int:
        seen = set()
        total = 0
        for m in self.translators.values():
            for p in m.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    total += p.size
        return total

    @property
    def head_input_dim(self) -> int:
        return self.head.input_dim

    # -- representation -----------------------------------------------------

    def _source_frames(self, batch: Batch) -> Tensor:
        names = self.input_modalities
        if len(names) == 1:
            return Tensor(batch.features[names[0]])
        return Tensor(np.concatenate([batch.features[m] for m in names], axis=-1))

    def _double(self, batch: Batch, x_s: Tensor) -> Tuple[EncodedSequence, EncodedSequence]:
        s, t1 = self.spec.source, self.spec.target1
        forward, backward = self.translators["forward"], self.translators["backward"]
        ef = encode(forward, x_s, s, batch.lengths)
        translated = decode_sequence(forward, ef, ef.states.shape[1], t1)
        eb = encode(backward, translated, t1, batch.lengths)
        return ef, eb

    def encode_source(self, batch: Batch) -> Tuple[JointRepresentation, Dict[str, EncodedSequence]]:
        """
        The representation used for prediction, computed from the input
        modalities only, plus the intermediate encodings.
        """
        v = self.spec.id
        x_s = self._source_frames(batch.select(self.input_modalities))
        lengths = batch.lengths
        if v in ("a", "b", "c", "i"):
            enc = encode(self.translators["level1"], x_s, self.spec.source, lengths)
            return joint_representation(enc, "bimodal" if v == "a" else f"variant:{v}"), {"source": enc}
        if v == "h":
            enc = encode(self.translators["level1"], x_s, "+".join(self.spec.inputs), lengths)
            return joint_representation(enc, "variant:h"), {"source": enc}
        if v == "d":
            ef, eb = self._double(batch, x_s)
            states = concat([ef.states, eb.states], axis=-1)
            return JointRepresentation(states, lengths, "variant:d"), {"forward": ef, "backward": eb}
        if v in ("e", "f"):
            e1 = encode(self.translators["level1"], x_s, self.spec.source, lengths)
            e2 = encode(self.translators["level2"], e1.states, JOINT, lengths)
            return joint_representation(e2, "trimodal" if v == "e" else "variant:f"), {"source": e1, "joint": e2}
        ef, eb = self._double(batch, x_s)
        joint = concat([ef.states, eb.states], axis=-1)
        e2 = encode(self.translators["level2"], joint, JOINT, lengths)
        return joint_representation(e2, "variant:g"), {"forward": ef, "backward": eb, "joint": e2}

    def infer(self, batch: Batch) -> Tensor:
        rep, _ = self.encode_source(batch)
        return predict(self.head, rep)

    # -- training forward ---------------------------------------------------

    def forward(self, batch: Batch, teacher_forcing: bool = True, use_cycle: bool = True) -> ForwardResult:
        """
        Prediction plus every translation/cycle loss of the topology.

        Target modalities are read here (as translation targets and teacher
        frames) but never enter the representation the prediction is made from.
        """
        spec = self.spec
        v, s, t1, t2 = spec.id, spec.source, spec.target1, spec.target2
        steps, lengths = batch.steps, batch.lengths
        rep, enc = self.encode_source(batch)

        def frames(name: str) -> Tensor:
            if name not in batch.features:
                raise UnknownModalityException(f"Training batch has no frames for '{name}'", details={"modality": name})
            return Tensor(batch.features[name])

        def teacher(name: str) -> Optional[np.ndarray]:
            return batch.features[name] if teacher_forcing else None

        losses: Dict[str, Tensor] = {}
        outputs: Dict[str, Tensor] = {}

        if v in ("a", "b", "c", "e", "f"):
            level = "l_t" if v in ("a", "b", "c") else "l_t1"
            m = self.translators["level1"]
            x_t_hat = decode_sequence(m, enc["source"], steps, t1, teacher(t1))
            losses[level] = translation_loss(x_t_hat, frames(t1), lengths)
            outputs["x_hat_t1"] = x_t_hat
            if spec.cyclic and use_cycle:
                x_s_hat = _back_translate(m, x_t_hat, s, t1, lengths)
                losses["l_c" if v == "a" else "l_c1"] = cycle_loss(x_s_hat, frames(s), lengths)
                outputs["x_hat_s"] = x_s_hat
            if v == "c" or (v == "f" and spec.level1 == "c"):
                reverse = encode(m, frames(t1), t1, lengths)
                x_s_rev = decode_sequence(m, reverse, steps, s, teacher(s))
                losses["l_t_rev" if v == "c" else "l_t1_rev"] = translation_loss(x_s_rev, frames(s), lengths)
        elif v in ("d", "g"):
            forward, backward = self.translators["forward"], self.translators["backward"]
            x_t_hat = decode_sequence(forward, enc["forward"], steps, t1, teacher(t1))
            reverse = encode(backward, frames(t1), t1, lengths)
            x_s_rev = decode_sequence(backward, reverse, steps, s, teacher(s))
            losses["l_t" if v == "d" else "l_t1"] = translation_loss(x_t_hat, frames(t1), lengths)
            losses["l_t_rev" if v == "d" else "l_t1_rev"] = translation_loss(x_s_rev, frames(s), lengths)
            outputs["x_hat_t1"] = x_t_hat
        elif v == "h":
            out_name = "+".join(spec.outputs)
            target = np.concatenate([batch.features[m] for m in spec.outputs], axis=-1)
            x_hat = decode_sequence(self.translators["level1"], enc["source"], steps, out_name,
                                    target if teacher_forcing else None)
            losses["l_t"] = translation_loss(x_hat, target, lengths)
            outputs["x_hat_out"] = x_hat
        elif v == "i":
            first, paired = self.translators["level1"], self.translators["paired"]
            x_t1_hat = decode_sequence(first, enc["source"], steps, t1, teacher(t1))
            x_t2_hat = decode_sequence(paired, enc["source"], steps, t2, teacher(t2))
            losses["l_t1"] = translation_loss(x_t1_hat, frames(t1), lengths)
            losses["l_t2"] = translation_loss(x_t2_hat, frames(t2), lengths)
            outputs["x_hat_t1"], outputs["x_hat_t2"] = x_t1_hat, x_t2_hat

        if v in ("e", "f", "g"):
            x_t2_hat = decode_sequence(self.translators["level2"], enc["joint"], steps, t2, teacher(t2))
            losses["l_t2"] = translation_loss(x_t2_hat, frames(t2), lengths)
            outputs["x_hat_t2"] = x_t2_hat

        return ForwardResult(losses, predict(self.head, rep), rep, outputs)

    # -- persistence --------------------------------------------------------

    def topology(self) -> Dict[str, Any]:
        return {
            "format": TOPOLOGY_FORMAT,
            "spec": self.spec.model_dump(),
            "dims": self.dims,
            "model": self.config.architecture(),
            "head_input_dim": self.head_input_dim,
            "parameters": {name: list(p.shape) for name, p in self.named_parameters().items()},
        }

    def check_dataset(self, dataset: MultimodalDataset) -> None:
        """
        Raises:
            TopologyMismatchException: If a role modality is missing or has another dim
        """
        declared = dataset.dims()
        offending = {}
        for m in self.spec.roles:
            if m not in declared:
                offending[m] = {"expected": self.dims.get(m), "found": None}
            elif declared[m] != self.dims.get(m):
                offending[m] = {"expected": self.dims.get(m), "found": declared[m]}
        if offending:
            raise TopologyMismatchException(
                f"Checkpoint topology does not match dataset dims: {offending}",
                details={"offending": offending}
            )


def build_variant(spec: VariantSpec, dims: Dict[str, int], config: Optional[ModelConfig] = None) -> ModelBundle:
    """
    Construct a freshly initialised bundle (seeded by config.seed). The loss
    plan is available as ``bundle.loss_plan()``.

    Raises:
        UnknownModalityException: If a role has no entry in dims
        VariantSpecException: If the task settings are inconsistent
    """
    config = config or ModelConfig()
    for m in spec.roles:
        if m not in dims:
            raise UnknownModalityException(f"No feature dim for modality '{m}'", details={"modality": m, "dims": dims})

    rng = np.random.default_rng(config.seed)
    md, hd, ad, scale = config.model_dim, config.hidden_dim, config.attention_dim, config.init_scale

    def translator(modality_dims: Dict[str, int], shared: Optional[Seq2SeqModel] = None,
                   decoded: Optional[Sequence[str]] = None) -> Seq2SeqModel:
        return Seq2SeqModel(modality_dims, md, hd, ad, rng, scale, shared_encoder=shared, decoded=decoded)

    v, s, t1, t2 = spec.id, spec.source, spec.target1, spec.target2
    pair = {s: dims[s], t1: dims[t1]}
    if v in ("a", "b", "c"):
        translators = {"level1": translator(pair)}
        head_in = hd
    elif v == "d":
        translators = {"forward": translator(pair), "backward": translator(pair)}
        head_in = 2 * hd
    elif v in ("e", "f"):
        translators = {"level1": translator(pair), "level2": translator({JOINT: hd, t2: dims[t2]})}
        head_in = hd
    elif v == "g":
        translators = {
            "forward": translator(pair),
            "backward": translator(pair),
            "level2": translator({JOINT: 2 * hd, t2: dims[t2]}),
        }
        head_in = hd
    elif v == "h":
        in_name, out_name = "+".join(spec.inputs), "+".join(spec.outputs)
        translators = {"level1": translator({
            in_name: sum(dims[m] for m in spec.inputs),
            out_name: sum(dims[m] for m in spec.outputs),
        })}
        head_in = hd
    else:
        # The paired decoder feeds T2 frames through the shared input projections.
        first = translator({s: dims[s], t1: dims[t1], t2: dims[t2]}, decoded=[t1])
        translators = {"level1": first, "paired": translator({t2: dims[t2]}, shared=first)}
        head_in = hd

    head = PredictionHead(head_in, hd, config.task, config.num_classes, rng, scale)
    bundle = ModelBundle(spec, {m: dims[m] for m in spec.roles}, config, translators, head)
    logger.info(
        f"Built variant ({v}) {spec.title} {spec.direction}: {bundle.encoder_count()} encoder(s), "
        f"{bundle.decoder_count()} decoder(s), {bundle.parameter_count()} parameters"
    )
    return bundle


def infer(bundle: ModelBundle, sources: Dict[str, Frames], lengths: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Predict from the input modalities alone.

    Args:
        bundle: Trained or initialised bundle
        sources: Frames keyed by modality; only ``bundle.input_modalities`` are read
        lengths: True lengths when frames are batched and padded

    Returns:
        B predictions (regression) or B x K probabilities (classification)
    """
    features = {}
    batch_lengths = None
    for m in bundle.input_modalities:
        if m not in sources:
            raise UnknownModalityException(f"Source modality '{m}' is required", details={"modality": m})
        frames, batch_lengths = as_batch(sources[m], lengths)
        features[m] = frames.data
    batch = Batch([str(i) for i in range(len(batch_lengths))], features, batch_lengths, np.zeros(len(batch_lengths)))
    return bundle.infer(batch).data


def save_bundle(bundle: ModelBundle, manifest_path: Path) -> None:
    tensors = {name: p.data for name, p in bundle.named_parameters().items()}
    save_checkpoint(manifest_path, tensors, bundle.topology())


def load_bundle(manifest_path: Path) -> ModelBundle:
    """
    Rebuild a bundle from its checkpoint.

    Raises:
        CheckpointIntegrityException: On a corrupt or missing checkpoint
        TopologyMismatchException: If the stored tensors do not fit the recorded topology
    """
    tensors, topology = load_checkpoint(manifest_path)
    if topology.get("format") != TOPOLOGY_FORMAT:
        raise TopologyMismatchException("Checkpoint does not describe a model bundle", details={"path": str(manifest_path)})
    spec = VariantSpec.model_validate(topology["spec"])
    config = ModelConfig.model_validate(topology["model"])
    bundle = build_variant(spec, topology["dims"], config)
    params = bundle.named_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        raise TopologyMismatchException(
            "Checkpoint tensors do not match the rebuilt topology",
            details={"missing": missing[:10], "unexpected": extra[:10]}
        )
    for name, p in params.items():
        if tuple(tensors[name].shape) != p.shape:
            raise TopologyMismatchException(
                f"Tensor '{name}' has shape {list(tensors[name].shape)}, topology expects {list(p.shape)}",
                details={"tensor": name, "expected": list(p.shape), "found": list(tensors[name].shape)}
            )
        p.assign(tensors[name])
    return bundle
