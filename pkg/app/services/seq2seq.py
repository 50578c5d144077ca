"""
GRU encoder/decoder with additive attention over continuous feature frames.

Every model keeps one linear projection into and one out of the shared model
dimension per registered modality, so a single recurrent core can translate
between modalities of different feature sizes. All computation is batched:
frames are B x L x d tensors with per-sample true lengths; a sample never runs
past its true length (its hidden state is frozen there and masked out of
attention).

An optional discrete-token head turns the same decoder into a token generator
for beam search.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax

from app.core.autodiff import (
    Tensor,
    add,
    concat,
    expand,
    matmul,
    mul,
    reshape,
    sigmoid,
    slice_,
    softmax,
    stack,
    sub,
    tanh,
    where,
)
from app.core.exceptions import ConfigException, ShapeMismatchException, UnknownModalityException
from app.services.datasets import FeatureSequence

logger = logging.getLogger(__name__)

MASK_FILL = -1e30

Frames = Union[Tensor, np.ndarray, FeatureSequence]


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


class ParameterGroup:
    """
    Base for anything that owns trainable tensors. Parameters are discovered
    from instance attributes in definition order: Tensors, nested groups and
    dicts of nested groups.
    """

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        seen = set()

        def visit(name: str, value) -> None:
            if isinstance(value, Tensor) and value.requires_grad:
                if id(value) not in seen:
                    seen.add(id(value))
                    params[name] = value
            elif isinstance(value, ParameterGroup):
                for key, attr in vars(value).items():
                    visit(f"{name}.{key}" if name else key, attr)
            elif isinstance(value, dict):
                for key, attr in value.items():
                    visit(f"{name}.{key}", attr)

        for key, attr in vars(self).items():
            visit(f"{prefix}{key}", attr)
        return params

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_(self) -> None:
        """Set every parameter to zero."""
        for p in self.parameters():
            p.assign(np.zeros(p.shape))


class Linear(ParameterGroup):
    """y = x @ weight + bias, weight stored in_dim x out_dim."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, scale: float):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor.parameter(_uniform(rng, (in_dim, out_dim), scale))
        self.bias = Tensor.parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatchException(
                f"Linear expects last dim {self.in_dim}, got {x.shape[-1]}",
                details={"op": "linear", "shapes": [list(x.shape), list(self.weight.shape)]}
            )
        if x.ndim == 3:
            b, steps, _ = x.shape
            flat = reshape(x, (b * steps, self.in_dim))
            return reshape(add(matmul(flat, self.weight), self.bias), (b, steps, self.out_dim))
        return add(matmul(x, self.weight), self.bias)


class GruParams(ParameterGroup):
    """
    GRU gate parameters. Each gate matrix is stored as the transpose of its
    hidden x (hidden + input) form, i.e. (hidden + input) x hidden, and is
    applied to [h_prev, x].
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator, scale: float):
        if input_dim <= 0 or hidden_dim <= 0:
            raise ConfigException("GRU dims must be positive", details={"input_dim": input_dim, "hidden_dim": hidden_dim})
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        joint = input_dim + hidden_dim
        self.w_update = Tensor.parameter(_uniform(rng, (joint, hidden_dim), scale))
        self.b_update = Tensor.parameter(np.zeros(hidden_dim))
        self.w_reset = Tensor.parameter(_uniform(rng, (joint, hidden_dim), scale))
        self.b_reset = Tensor.parameter(np.zeros(hidden_dim))
        self.w_candidate = Tensor.parameter(_uniform(rng, (joint, hidden_dim), scale))
        self.b_candidate = Tensor.parameter(np.zeros(hidden_dim))


def gru_step(p: GruParams, h_prev: Union[Tensor, np.ndarray], x: Union[Tensor, np.ndarray]) -> Tensor:
    """
    One GRU step on a vector or a B-row batch.

    z = sigmoid([h, x] W_z + b_z), r = sigmoid([h, x] W_r + b_r),
    c = tanh([r * h, x] W_c + b_c), h' = (1 - z) * h + z * c

    Raises:
        ShapeMismatchException: If h_prev or x do not match the parameter dims
    """
    h_prev = h_prev if isinstance(h_prev, Tensor) else Tensor(h_prev)
    x = x if isinstance(x, Tensor) else Tensor(x)
    if h_prev.shape[-1] != p.hidden_dim or x.shape[-1] != p.input_dim or h_prev.shape[:-1] != x.shape[:-1]:
        raise ShapeMismatchException(
            f"gru_step: expected hidden {p.hidden_dim} and input {p.input_dim}",
            details={"op": "gru_step", "shapes": [list(h_prev.shape), list(x.shape)]}
        )
    hx = concat([h_prev, x], axis=-1)
    z = sigmoid(add(matmul(hx, p.w_update), p.b_update))
    r = sigmoid(add(matmul(hx, p.w_reset), p.b_reset))
    rhx = concat([mul(r, h_prev), x], axis=-1)
    candidate = tanh(add(matmul(rhx, p.w_candidate), p.b_candidate))
    ones = Tensor(np.ones(h_prev.shape))
    return add(mul(sub(ones, z), h_prev), mul(z, candidate))


class AdditiveAttention(ParameterGroup):
    """score_i = v . tanh(h_i W_keys + s W_query)"""

    def __init__(self, hidden_dim: int, attention_dim: int, rng: np.random.Generator, scale: float):
        self.w_keys = Tensor.parameter(_uniform(rng, (hidden_dim, attention_dim), scale))
        self.w_query = Tensor.parameter(_uniform(rng, (hidden_dim, attention_dim), scale))
        self.score = Tensor.parameter(_uniform(rng, (attention_dim,), scale))


class TokenHead(ParameterGroup):
    """Discrete-token mode: an input embedding table and a logit map over the vocabulary."""

    def __init__(self, vocab_size: int, model_dim: int, hidden_dim: int, rng: np.random.Generator, scale: float):
        if vocab_size < 1:
            raise ConfigException("vocab_size must be at least 1", details={"vocab_size": vocab_size})
        self.vocab_size = vocab_size
        self.embedding = Tensor.parameter(_uniform(rng, (vocab_size, model_dim), scale))
        self.logits = Linear(hidden_dim, vocab_size, rng, scale)


class Seq2SeqModel(ParameterGroup):
    """
    Encoder GRU, decoder GRU, additive attention and per-modality projections.

    The decoder consumes [projected previous frame, attention context], so its
    input size is model_dim + hidden_dim. Its initial state is the encoder's
    final state. Output projections exist only for the ``decoded`` modalities
    (all of them by default).
    """

    def __init__(
        self,
        modality_dims: Dict[str, int],
        model_dim: int,
        hidden_dim: int,
        attention_dim: int,
        rng: np.random.Generator,
        init_scale: float = 0.2,
        shared_encoder: Optional["Seq2SeqModel"] = None,
        decoded: Optional[Sequence[str]] = None,
    ):
        self.model_dim = model_dim
        self.hidden_dim = hidden_dim
        self.attention_dim = attention_dim
        if shared_encoder is None:
            self.input_proj = {m: Linear(d, model_dim, rng, init_scale) for m, d in modality_dims.items()}
            self.encoder = GruParams(model_dim, hidden_dim, rng, init_scale)
        else:
            if shared_encoder.model_dim != model_dim or shared_encoder.hidden_dim != hidden_dim:
                raise ShapeMismatchException(
                    "A shared encoder must use the same model and hidden dims",
                    details={"op": "shared_encoder", "shapes": [[shared_encoder.model_dim, shared_encoder.hidden_dim], [model_dim, hidden_dim]]}
                )
            self.input_proj = shared_encoder.input_proj
            self.encoder = shared_encoder.encoder
        decoded = list(modality_dims) if decoded is None else list(decoded)
        self.output_proj = {m: Linear(hidden_dim, modality_dims[m], rng, init_scale) for m in decoded}
        self.decoder = GruParams(model_dim + hidden_dim, hidden_dim, rng, init_scale)
        self.attention = AdditiveAttention(hidden_dim, attention_dim, rng, init_scale)
        self.token_head: Optional[TokenHead] = None

    @property
    def modalities(self) -> List[str]:
        return list(self.output_proj)

    def modality_dim(self, modality: str) -> int:
        self._require(modality)
        return self.output_proj[modality].out_dim

    def _require(self, modality: str) -> None:
        if modality not in self.input_proj or modality not in self.output_proj:
            raise UnknownModalityException(
                f"Modality '{modality}' has no projection on this model",
                details={"modality": modality, "registered": self.modalities}
            )

    def attach_token_head(self, vocab_size: int, rng: np.random.Generator, init_scale: float = 0.2) -> TokenHead:
        self.token_head = TokenHead(vocab_size, self.model_dim, self.hidden_dim, rng, init_scale)
        return self.token_head


@dataclass
class EncodedSequence:
    """
    Encoder output for a batch: ``states`` is B x L x h with L the longest true
    length in the batch; rows past a sample's own length repeat its final state
    and are excluded from attention.
    """
    states: Tensor
    lengths: np.ndarray
    final: Tensor

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]

    @property
    def source_length(self) -> int:
        return int(self.lengths.max())

    def rows(self, index: int = 0) -> np.ndarray:
        """The true_length x h hidden states of one sample."""
        return self.states.data[index, : int(self.lengths[index])]

    def valid_mask(self) -> np.ndarray:
        return np.arange(self.states.shape[1])[None, :] < self.lengths[:, None]


def as_batch(x: Frames, lengths: Optional[Sequence[int]] = None) -> Tuple[Tensor, np.ndarray]:
    """Normalise a FeatureSequence, an L x d matrix or a B x L x d tensor to (frames, lengths)."""
    if isinstance(x, FeatureSequence):
        return Tensor(x.frames()[None, :, :]), np.array([x.true_length])
    frames = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if frames.ndim == 2:
        frames = reshape(frames, (1,) + frames.shape)
    if frames.ndim != 3:
        raise ShapeMismatchException("Frames must be L x d or B x L x d", details={"op": "encode", "shapes": [list(frames.shape)]})
    if lengths is None:
        lengths = np.full(frames.shape[0], frames.shape[1])
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (frames.shape[0],):
        raise ShapeMismatchException(
            "One length per batch row is required",
            details={"op": "encode", "shapes": [list(frames.shape), list(lengths.shape)]}
        )
    return frames, lengths


def _time_step(frames: Union[Tensor, np.ndarray], t: int) -> Tensor:
    if isinstance(frames, Tensor):
        return slice_(frames, (slice(None), t, slice(None)))
    return Tensor(frames[:, t, :])


def encode(m: Seq2SeqModel, x: Frames, modality: str, lengths: Optional[Sequence[int]] = None) -> EncodedSequence:
    """
    Project each frame into the model dimension and run the encoder GRU over
    the true length of every sample.

    Raises:
        UnknownModalityException: If the modality has no input projection
        ShapeMismatchException: On a zero-length sequence or a dim mismatch
    """
    if modality not in m.input_proj:
        raise UnknownModalityException(
            f"Modality '{modality}' has no input projection on this model",
            details={"modality": modality, "registered": list(m.input_proj)}
        )
    frames, lengths = as_batch(x, lengths)
    if lengths.size == 0 or lengths.min() < 1:
        raise ShapeMismatchException("encode: zero-length sequence", details={"op": "encode", "shapes": [list(frames.shape)]})
    steps = int(lengths.max())
    if steps > frames.shape[1]:
        raise ShapeMismatchException(
            f"encode: true length {steps} exceeds {frames.shape[1]} frames",
            details={"op": "encode", "shapes": [list(frames.shape)]}
        )
    if frames.shape[1] > steps:
        frames = slice_(frames, (slice(None), slice(0, steps), slice(None)))

    projected = m.input_proj[modality](frames)
    batch = frames.shape[0]
    h = Tensor(np.zeros((batch, m.hidden_dim)))
    states = []
    for t in range(steps):
        h_new = gru_step(m.encoder, h, _time_step(projected, t))
        active = t < lengths
        if active.all():
            h = h_new
        else:
            h = where(np.repeat(active[:, None], m.hidden_dim, axis=1), h_new, h)
        states.append(h)
    return EncodedSequence(stack(states, axis=1), lengths, h)


def attention_keys(m: Seq2SeqModel, enc: EncodedSequence) -> Tensor:
    """Encoder states projected by W_keys, B x L x attention_dim (reused across decode steps)."""
    batch, steps, hidden = enc.states.shape
    flat = reshape(enc.states, (batch * steps, hidden))
    return reshape(matmul(flat, m.attention.w_keys), (batch, steps, m.attention_dim))


def attend(m: Seq2SeqModel, dec_state: Union[Tensor, np.ndarray], enc: EncodedSequence,
           keys: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
    """
    Additive attention of a decoder state over the encoder states.

    Args:
        m: Model holding the attention parameters
        dec_state: h-vector or B x h decoder state
        enc: Encoder output
        keys: Precomputed attention_keys(m, enc)

    Returns:
        (context, weights): context has dec_state's shape; weights are L or
        B x L, non-negative and summing to 1 over each sample's true length

    Raises:
        ShapeMismatchException: If enc has no states
    """
    if enc.states.shape[1] == 0:
        raise ShapeMismatchException("attend: empty encoded sequence", details={"op": "attend", "shapes": [list(enc.states.shape)]})
    query = dec_state if isinstance(dec_state, Tensor) else Tensor(dec_state)
    vector = query.ndim == 1
    if vector:
        query = reshape(query, (1, query.shape[0]))
    batch, steps, hidden = enc.states.shape
    if query.shape != (batch, hidden):
        raise ShapeMismatchException(
            "attend: decoder state does not match encoder batch/hidden size",
            details={"op": "attend", "shapes": [list(query.shape), list(enc.states.shape)]}
        )
    keys = attention_keys(m, enc) if keys is None else keys

    projected_query = expand(matmul(query, m.attention.w_query), axis=1, repeats=steps)
    energy = tanh(add(keys, projected_query))
    scores = reshape(matmul(reshape(energy, (batch * steps, m.attention_dim)), m.attention.score), (batch, steps))
    valid = enc.valid_mask()
    if not valid.all():
        scores = where(valid, scores, Tensor(np.full((batch, steps), MASK_FILL)))
    weights = softmax(scores, axis=-1)
    context = reshape(matmul(reshape(weights, (batch, 1, steps)), enc.states), (batch, hidden))
    if vector:
        return reshape(context, (hidden,)), reshape(weights, (steps,))
    return context, weights


def decode_sequence(m: Seq2SeqModel, enc: EncodedSequence, target_len: int, target_modality: str,
                    teacher: Optional[Frames] = None) -> Tensor:
    """
    Autoregressive continuous decoding into ``target_modality``.

    Step 0 is fed a zero frame. Afterwards the decoder is fed the teacher frame
    t-1 when a teacher is given (teacher forcing) or its own previous output
    (free-running, gradients flow through).

    Returns:
        B x target_len x d_target tensor

    Raises:
        ShapeMismatchException: If target_len < 1 or the teacher length differs
        UnknownModalityException: If target_modality has no projections
    """
    m._require(target_modality)
    if target_len < 1:
        raise ShapeMismatchException("decode_sequence: target_len must be at least 1", details={"op": "decode", "target_len": target_len})
    dim = m.modality_dim(target_modality)
    batch = enc.batch_size

    teacher_frames: Union[Tensor, np.ndarray, None] = None
    if teacher is not None:
        if isinstance(teacher, FeatureSequence):
            teacher_frames = teacher.frames()[None, :, :]
        elif isinstance(teacher, Tensor):
            teacher_frames = teacher if teacher.ndim == 3 else reshape(teacher, (1,) + teacher.shape)
        else:
            arr = np.asarray(teacher, dtype=np.float64)
            teacher_frames = arr if arr.ndim == 3 else arr[None, :, :]
        if teacher_frames.shape[1] != target_len or teacher_frames.shape[0] != batch or teacher_frames.shape[2] != dim:
            raise ShapeMismatchException(
                f"decode_sequence: teacher of length {teacher_frames.shape[1]} for target_len {target_len}",
                details={"op": "decode", "shapes": [list(teacher_frames.shape), [batch, target_len, dim]]}
            )

    in_proj = m.input_proj[target_modality]
    out_proj = m.output_proj[target_modality]
    keys = attention_keys(m, enc)
    state = enc.final
    previous = Tensor(np.zeros((batch, dim)))
    outputs = []
    for t in range(target_len):
        context, _ = attend(m, state, enc, keys)
        state = gru_step(m.decoder, state, concat([in_proj(previous), context], axis=-1))
        frame = out_proj(state)
        outputs.append(frame)
        previous = _time_step(teacher_frames, t) if teacher_frames is not None else frame
    return stack(outputs, axis=1)


# ---------------------------------------------------------------------------
# Discrete-token decoding
# ---------------------------------------------------------------------------

def _require_token_head(m: Seq2SeqModel, vocab: Optional[int] = None) -> TokenHead:
    if m.token_head is None:
        raise ConfigException("No discrete-token head is configured on this model")
    if vocab is not None and vocab != m.token_head.vocab_size:
        raise ConfigException(
            f"Vocabulary size {vocab} does not match the token head ({m.token_head.vocab_size})",
            details={"vocab": vocab, "head_vocab": m.token_head.vocab_size}
        )
    return m.token_head


def _single(enc: EncodedSequence) -> None:
    if enc.batch_size != 1:
        raise ShapeMismatchException("Token decoding runs on one sequence at a time", details={"op": "beam_search", "shapes": [list(enc.states.shape)]})


def _token_step(m: Seq2SeqModel, enc: EncodedSequence, keys: Tensor, state: Tensor,
                token: Optional[int]) -> Tuple[Tensor, np.ndarray]:
    head = m.token_head
    if token is None:
        embedded = Tensor(np.zeros((1, m.model_dim)))
    else:
        embedded = Tensor(head.embedding.data[token][None, :])
    context, _ = attend(m, state, enc, keys)
    state = gru_step(m.decoder, state, concat([embedded, context], axis=-1))
    logits = head.logits(state).data[0]
    return state, log_softmax(logits)


def greedy_decode(m: Seq2SeqModel, enc: EncodedSequence, max_len: int) -> Tuple[List[int], float]:
    """Argmax token at every step; returns (tokens, summed log-probability)."""
    _require_token_head(m)
    _single(enc)
    keys = attention_keys(m, enc)
    state = enc.final
    tokens: List[int] = []
    score = 0.0
    for _ in range(max_len):
        state, log_probs = _token_step(m, enc, keys, state, tokens[-1] if tokens else None)
        token = int(np.argmax(log_probs))
        score = score + float(log_probs[token])
        tokens.append(token)
    return tokens, score


def sequence_log_prob(m: Seq2SeqModel, enc: EncodedSequence, tokens: Sequence[int]) -> float:
    """Summed log-probability of a fixed token sequence."""
    _require_token_head(m)
    _single(enc)
    keys = attention_keys(m, enc)
    state = enc.final
    score = 0.0
    previous: Optional[int] = None
    for token in tokens:
        state, log_probs = _token_step(m, enc, keys, state, previous)
        score = score + float(log_probs[token])
        previous = int(token)
    return score


def _expand_hypotheses(m, enc, keys, hypotheses) -> Iterator[Tuple[float, List[int], Tensor]]:
    for score, tokens, state in hypotheses:
        new_state, log_probs = _token_step(m, enc, keys, state, tokens[-1] if tokens else None)
        for token in range(log_probs.shape[0]):
            yield score + float(log_probs[token]), tokens + [token], new_state


def beam_search(m: Seq2SeqModel, enc: EncodedSequence, vocab: int, beam: int, max_len: int) -> Tuple[List[int], float]:
    """
    Fixed-length beam search under summed log-probabilities.

    At each step every kept hypothesis is extended by every token and the
    ``beam`` best candidates survive (ties keep the earlier hypothesis and the
    lower token id). For beam > 1 the greedy rollout is also scored and wins
    if it beats the beam's best, so a wider beam never scores below beam 1.
    With beam >= vocab ** (max_len - 1) nothing is pruned before the last step
    and the result is the exhaustive optimum.

    Returns:
        (tokens, score)

    Raises:
        ConfigException: If beam < 1 or no token head is configured
    """
    if beam < 1:
        raise ConfigException("beam width must be at least 1", details={"beam": beam})
    _require_token_head(m, vocab)
    _single(enc)
    if max_len < 1:
        return [], 0.0

    keys = attention_keys(m, enc)
    hypotheses = [(0.0, [], enc.final)]
    for _ in range(max_len):
        candidates = sorted(_expand_hypotheses(m, enc, keys, hypotheses), key=lambda c: -c[0])
        hypotheses = candidates[:beam]
    best_score, best_tokens, _ = hypotheses[0]

    if beam > 1:
        greedy_tokens, greedy_score = greedy_decode(m, enc, max_len)
        if greedy_score > best_score:
            logger.debug("Greedy rollout outscored the beam")
            return greedy_tokens, greedy_score
    return best_tokens, best_score
