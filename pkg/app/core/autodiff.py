"""
Dense tensors with tape-based reverse-mode automatic differentiation.

Operations only record onto a tape while one is active (``with Tape():``);
outside a tape they compute plain values, which is how inference runs. Every
primitive checks its operand shapes and refuses non-finite inputs. The only
implicit broadcast is a bias vector added to every row of a matrix.
"""
import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from app.core.exceptions import (
    DetachedLossException,
    NonFiniteException,
    ShapeMismatchException,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[float], float]
GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

CE_CLAMP = 1e-12

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)


class Tensor:
    """
    Dense float64 array that can take part in a differentiation tape.

    ``data`` is read-only; optimizers rebind it through ``assign``. ``node_id``
    is set for values produced on a tape and points at their TapeNode.
    """

    __slots__ = ("data", "requires_grad", "node_id", "name", "_tape")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.name = name
        self._tape: Optional["Tape"] = None

    @classmethod
    def parameter(cls, data: ArrayLike, name: Optional[str] = None) -> "Tensor":
        return cls(data, requires_grad=True, name=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchException(
                "item() needs a single-element tensor",
                details={"op": "item", "shape": list(self.shape)}
            )
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def assign(self, data: ArrayLike) -> None:
        """Rebind the value of a leaf tensor (used by optimizers and checkpoints)."""
        arr = np.array(data, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ShapeMismatchException(
                "assign() cannot change a tensor's shape",
                details={"op": "assign", "shapes": [list(self.shape), list(arr.shape)]}
            )
        arr.flags.writeable = False
        self.data = arr

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"<Tensor shape={self.shape}{label} requires_grad={self.requires_grad}>"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other: float) -> "Tensor":
        return scale(self, float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


@dataclass
class TapeNode:
    node_id: int
    kind: str
    parents: Tuple[Optional[int], ...]
    shape: Tuple[int, ...]
    grad_fn: Optional[GradFn] = None


class Tape:
    """
    Append-only record of the operations of one forward pass.

    Nodes are appended in execution order, so every parent precedes its
    children. Leaves (trainable tensors first used on this tape) get a node
    without a grad_fn.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self.grads: Dict[int, np.ndarray] = {}
        self._leaf_ids: Dict[int, int] = {}
        self._leaves: List[Tensor] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, tensor: Tensor) -> int:
        key = id(tensor)
        if key not in self._leaf_ids:
            node_id = len(self.nodes)
            self.nodes.append(TapeNode(node_id, "leaf", (), tensor.shape))
            self._leaf_ids[key] = node_id
            # keep a reference so id() stays unique for the tape's lifetime
            self._leaves.append(tensor)
        return self._leaf_ids[key]

    def node_of(self, tensor: Tensor) -> Optional[int]:
        if tensor._tape is self and tensor.node_id is not None:
            return tensor.node_id
        if tensor.requires_grad:
            return self.leaf(tensor)
        return None

    def record(self, kind: str, parents: Tuple[Optional[int], ...], shape: Tuple[int, ...], grad_fn: GradFn) -> int:
        node_id = len(self.nodes)
        self.nodes.append(TapeNode(node_id, kind, parents, shape, grad_fn))
        return node_id

    def grad(self, tensor: Tensor) -> Optional[np.ndarray]:
        """Gradient buffer of a tensor after backward(), or None if unreached."""
        if tensor._tape is self and tensor.node_id is not None:
            return self.grads.get(tensor.node_id)
        node_id = self._leaf_ids.get(id(tensor))
        if node_id is None:
            return None
        return self.grads.get(node_id)


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_finite(kind: str, inputs: Sequence[Tensor]) -> None:
    for position, t in enumerate(inputs):
        if not np.isfinite(t.data).all():
            raise NonFiniteException(
                f"{kind}: input {position} contains NaN or Inf",
                details={"op": kind, "input": position, "shape": list(t.shape)}
            )


def _shape_error(kind: str, message: str, *shapes: Tuple[int, ...]) -> ShapeMismatchException:
    return ShapeMismatchException(
        f"{kind}: {message} (shapes {', '.join(str(tuple(s)) for s in shapes)})",
        details={"op": kind, "shapes": [list(s) for s in shapes]}
    )


def _emit(kind: str, inputs: Sequence[Tensor], value: np.ndarray, grad_fn: GradFn) -> Tensor:
    out = Tensor(value)
    tape = _active_tape.get()
    if tape is None:
        return out
    parents = tuple(tape.node_of(t) for t in inputs)
    if all(p is None for p in parents):
        return out
    out.node_id = tape.record(kind, parents, out.shape, grad_fn)
    out.requires_grad = True
    out._tape = tape
    return out


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------

def _matmul(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.data, b.data
    if x.ndim == 0 or y.ndim == 0 or x.ndim > 3 or y.ndim > 3:
        raise _shape_error("matmul", "operands must be 1-D, 2-D or 3-D", x.shape, y.shape)
    if x.ndim == 3 or y.ndim == 3:
        if x.ndim != 3 or y.ndim != 3 or x.shape[0] != y.shape[0]:
            raise _shape_error("matmul", "batched operands need equal batch sizes", x.shape, y.shape)
    inner_b = y.shape[0] if y.ndim == 1 else y.shape[-2]
    if x.shape[-1] != inner_b:
        raise _shape_error("matmul", "inner dimensions differ", x.shape, y.shape)

    value = x @ y

    def grad_fn(g: np.ndarray):
        if x.ndim == 1:
            return y @ g, np.outer(x, g)
        if y.ndim == 1:
            return np.outer(g, y), x.T @ g
        return g @ np.swapaxes(y, -1, -2), np.swapaxes(x, -1, -2) @ g

    return _emit("matmul", (a, b), value, grad_fn)


def _add(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.data, b.data
    if x.shape == y.shape:
        def grad_fn(g: np.ndarray):
            return g, g
    elif x.ndim == 2 and y.ndim == 1 and x.shape[1] == y.shape[0]:
        def grad_fn(g: np.ndarray):
            return g, g.sum(axis=0)
    else:
        raise _shape_error("add", "shapes must match or be matrix plus row bias", x.shape, y.shape)
    return _emit("add", (a, b), x + y, grad_fn)


def _sub(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.data, b.data
    if x.shape != y.shape:
        raise _shape_error("sub", "shapes must match", x.shape, y.shape)

    def grad_fn(g: np.ndarray):
        return g, -g

    return _emit("sub", (a, b), x - y, grad_fn)


def _mul(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.data, b.data
    if x.shape != y.shape:
        raise _shape_error("mul", "shapes must match", x.shape, y.shape)

    def grad_fn(g: np.ndarray):
        return g * y, g * x

    return _emit("mul", (a, b), x * y, grad_fn)


def _scale(a: Tensor, factor: float) -> Tensor:
    def grad_fn(g: np.ndarray):
        return (g * factor,)

    return _emit("scale", (a,), a.data * factor, grad_fn)


def _tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)

    def grad_fn(g: np.ndarray):
        return (g * (1.0 - value * value),)

    return _emit("tanh", (a,), value, grad_fn)


def _sigmoid(a: Tensor) -> Tensor:
    value = expit(a.data)

    def grad_fn(g: np.ndarray):
        return (g * value * (1.0 - value),)

    return _emit("sigmoid", (a,), value, grad_fn)


def _softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    value = exp / exp.sum(axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray):
        return (value * (g - (g * value).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", (a,), value, grad_fn)


def _concat(*tensors: Tensor, axis: int = -1) -> Tensor:
    arrays = [t.data for t in tensors]
    ndim = arrays[0].ndim
    ax = axis % ndim if ndim else 0
    for arr in arrays[1:]:
        if arr.ndim != ndim or any(arr.shape[i] != arrays[0].shape[i] for i in range(ndim) if i != ax):
            raise _shape_error("concat", f"shapes disagree off axis {axis}", *(x.shape for x in arrays))
    value = np.concatenate(arrays, axis=ax)
    bounds = np.cumsum([arr.shape[ax] for arr in arrays])[:-1]

    def grad_fn(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit("concat", tensors, value, grad_fn)


def _stack(*tensors: Tensor, axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    if any(arr.shape != arrays[0].shape for arr in arrays):
        raise _shape_error("stack", "all operands need the same shape", *(x.shape for x in arrays))
    value = np.stack(arrays, axis=axis)

    def grad_fn(g: np.ndarray):
        return tuple(np.take(g, i, axis=axis) for i in range(len(arrays)))

    return _emit("stack", tensors, value, grad_fn)


def _slice(a: Tensor, index) -> Tensor:
    try:
        value = a.data[index]
    except IndexError as e:
        raise _shape_error("slice", f"index {index!r} out of range", a.shape) from e

    def grad_fn(g: np.ndarray):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _emit("slice", (a,), np.array(value), grad_fn)


def _reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        value = a.data.reshape(shape)
    except ValueError as e:
        raise _shape_error("reshape", f"cannot reshape into {tuple(shape)}", a.shape) from e

    def grad_fn(g: np.ndarray):
        return (g.reshape(a.shape),)

    return _emit("reshape", (a,), value, grad_fn)


def _expand(a: Tensor, axis: int, repeats: int) -> Tensor:
    if repeats < 1:
        raise _shape_error("expand", "repeats must be positive", a.shape)
    value = np.repeat(np.expand_dims(a.data, axis), repeats, axis=axis)

    def grad_fn(g: np.ndarray):
        return (g.sum(axis=axis),)

    return _emit("expand", (a,), value, grad_fn)


def _where(a: Tensor, b: Tensor, mask: np.ndarray) -> Tensor:
    keep = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or keep.shape != a.shape:
        raise _shape_error("where", "mask and operands need one shape", keep.shape, a.shape, b.shape)
    value = np.where(keep, a.data, b.data)

    def grad_fn(g: np.ndarray):
        return np.where(keep, g, 0.0), np.where(keep, 0.0, g)

    return _emit("where", (a, b), value, grad_fn)


def _sum(a: Tensor) -> Tensor:
    def grad_fn(g: np.ndarray):
        return (np.full(a.shape, float(g)),)

    return _emit("sum", (a,), np.array(a.data.sum()), grad_fn)


def _mean(a: Tensor) -> Tensor:
    n = a.size

    def grad_fn(g: np.ndarray):
        return (np.full(a.shape, float(g) / n),)

    return _emit("mean", (a,), np.array(a.data.mean()), grad_fn)


def _reduction_mask(kind: str, a: Tensor, b: Tensor, mask: Optional[np.ndarray]) -> Tuple[np.ndarray, float]:
    if a.shape != b.shape:
        raise _shape_error(kind, "shapes must match", a.shape, b.shape)
    if mask is None:
        weights = np.ones(a.shape)
    else:
        weights = np.asarray(mask, dtype=np.float64)
        if weights.shape != a.shape:
            raise _shape_error(kind, "mask must match operand shape", a.shape, weights.shape)
    count = float(weights.sum())
    if count <= 0:
        raise _shape_error(kind, "nothing to reduce over (empty mask)", a.shape)
    return weights, count


def _mse(a: Tensor, b: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    weights, count = _reduction_mask("mse", a, b, mask)
    diff = (a.data - b.data) * weights
    value = np.array((diff * diff).sum() / count)

    def grad_fn(g: np.ndarray):
        ga = 2.0 * diff / count * float(g)
        return ga, -ga

    return _emit("mse", (a, b), value, grad_fn)


def _mae(a: Tensor, b: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    weights, count = _reduction_mask("mae", a, b, mask)
    diff = (a.data - b.data) * weights
    value = np.array(np.abs(diff).sum() / count)

    def grad_fn(g: np.ndarray):
        ga = np.sign(diff) / count * float(g)
        return ga, -ga

    return _emit("mae", (a, b), value, grad_fn)


def _cross_entropy(probs: Tensor, targets: Tensor) -> Tensor:
    """Mean over rows of -sum_k t_k log p_k, probabilities clamped at CE_CLAMP."""
    p, t = probs.data, targets.data
    if p.shape != t.shape:
        raise _shape_error("cross_entropy", "probabilities and targets need one shape", p.shape, t.shape)
    rows = max(1, int(np.prod(p.shape[:-1])))
    clamped = np.maximum(p, CE_CLAMP)
    value = np.array(-(t * np.log(clamped)).sum() / rows)

    def grad_fn(g: np.ndarray):
        gp = np.where(p > CE_CLAMP, -t / clamped, 0.0) / rows * float(g)
        gt = -np.log(clamped) / rows * float(g)
        return gp, gt

    return _emit("cross_entropy", (probs, targets), value, grad_fn)


_OPS: Dict[str, Callable[..., Tensor]] = {
    "matmul": _matmul,
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "scale": _scale,
    "tanh": _tanh,
    "sigmoid": _sigmoid,
    "softmax": _softmax,
    "concat": _concat,
    "stack": _stack,
    "slice": _slice,
    "reshape": _reshape,
    "expand": _expand,
    "where": _where,
    "sum": _sum,
    "mean": _mean,
    "mse": _mse,
    "mae": _mae,
    "cross_entropy": _cross_entropy,
}

PRIMITIVES = tuple(_OPS)


def forward_op(kind: str, inputs: Sequence[Union[Tensor, ArrayLike]], **attrs) -> Tensor:
    """
    Run one primitive and record it on the active tape when any input is
    trainable.

    Args:
        kind: Primitive name (see PRIMITIVES)
        inputs: Operand tensors (arrays are wrapped as constants)
        **attrs: Non-tensor attributes (axis, index, shape, mask, factor, ...)

    Returns:
        Result tensor

    Raises:
        ShapeMismatchException: If operand shapes do not conform to the op
        NonFiniteException: If any operand holds NaN or Inf
    """
    op = _OPS.get(kind)
    if op is None:
        raise ShapeMismatchException(f"Unknown primitive '{kind}'", details={"op": kind})
    tensors = [_as_tensor(x) for x in inputs]
    _check_finite(kind, tensors)
    return op(*tensors, **attrs)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return forward_op("matmul", (a, b))


def add(a: Tensor, b: Tensor) -> Tensor:
    return forward_op("add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return forward_op("sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return forward_op("mul", (a, b))


def scale(a: Tensor, factor: float) -> Tensor:
    return forward_op("scale", (a,), factor=factor)


def tanh(a: Tensor) -> Tensor:
    return forward_op("tanh", (a,))


def sigmoid(a: Tensor) -> Tensor:
    return forward_op("sigmoid", (a,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return forward_op("softmax", (a,), axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    return forward_op("concat", tuple(tensors), axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return forward_op("stack", tuple(tensors), axis=axis)


def slice_(a: Tensor, index) -> Tensor:
    return forward_op("slice", (a,), index=index)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return forward_op("reshape", (a,), shape=tuple(shape))


def expand(a: Tensor, axis: int, repeats: int) -> Tensor:
    return forward_op("expand", (a,), axis=axis, repeats=repeats)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    return forward_op("where", (a, b), mask=mask)


def sum_(a: Tensor) -> Tensor:
    return forward_op("sum", (a,))


def mean(a: Tensor) -> Tensor:
    return forward_op("mean", (a,))


def mse(a: Tensor, b: Union[Tensor, ArrayLike], mask: Optional[np.ndarray] = None) -> Tensor:
    return forward_op("mse", (a, b), mask=mask)


def mae(a: Tensor, b: Union[Tensor, ArrayLike], mask: Optional[np.ndarray] = None) -> Tensor:
    return forward_op("mae", (a, b), mask=mask)


def cross_entropy(probs: Tensor, targets: Union[Tensor, ArrayLike]) -> Tensor:
    return forward_op("cross_entropy", (probs, targets))


def backward(loss: Tensor) -> Dict[int, Tensor]:
    """
    Reverse-mode sweep from a scalar loss over its tape.

    Gradients of nodes with several consumers accumulate additively. The
    gradient buffers are also stored on the tape (``tape.grad(tensor)``).

    Args:
        loss: Single-element tensor produced on an active tape

    Returns:
        Map from node id to gradient tensor for every node reached

    Raises:
        ShapeMismatchException: If the loss is not a scalar
        DetachedLossException: If the loss has no tape (e.g. a constant)
    """
    if loss.size != 1:
        raise ShapeMismatchException(
            "backward() needs a scalar loss",
            details={"op": "backward", "shapes": [list(loss.shape)]}
        )
    tape = loss._tape
    if tape is None or loss.node_id is None:
        raise DetachedLossException(
            "Loss is not on a tape or has no trainable ancestry",
            details={"shape": list(loss.shape)}
        )

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        g = grads.get(node.node_id)
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if parent is None or pg is None:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg

    tape.grads = grads
    logger.debug(f"backward: {len(grads)} gradient buffers over {len(tape)} nodes")
    return {node_id: Tensor(g) for node_id, g in grads.items()}


def gradients(tape: Tape, params: Sequence[Tensor]) -> List[np.ndarray]:
    """Gradient of each parameter on the tape; zeros for parameters the loss never reached."""
    out = []
    for p in params:
        g = tape.grad(p)
        out.append(np.zeros(p.shape) if g is None else g)
    return out
