"""Dense tensor with a define-by-run reverse-mode tape.

Every differentiable operation appends one record to the thread-local
:class:`Graph`. :func:`backward` walks the records in reverse, exactly once
each, and then resets the graph.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_DTYPES = {"f64": np.float64, "f32": np.float32}
_default_dtype = np.float64
_ids = itertools.count()
_check_finite = False


def set_default_dtype(dtype) -> None:
    """Switch the width used for newly created tensors ("f64"/"f32" or a numpy dtype)."""
    global _default_dtype
    if isinstance(dtype, str):
        dtype = _DTYPES[dtype]
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def set_debug_checks(enabled: bool) -> None:
    """Raise FloatingPointError whenever an op produces NaN/Inf."""
    global _check_finite
    _check_finite = bool(enabled)


class Tensor:
    """N-d array of floats that optionally participates in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.id = next(_ids)
        self.name = name

    # construction helpers
    @classmethod
    def zeros(cls, *shape, requires_grad=False, dtype=None):
        return cls(np.zeros(shape, dtype=dtype or _default_dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, *shape, requires_grad=False, dtype=None):
        return cls(np.ones(shape, dtype=dtype or _default_dtype), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __deepcopy__(self, memo):
        dup = Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name, dtype=self.data.dtype)
        memo[id(self)] = dup
        return dup

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar; the real implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scalar_mul(self, other)
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scalar_mul(self, -1.0)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        return ops.permute(self, axes)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def _not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

    @property
    def input_ids(self) -> tuple:
        return tuple(t.id for t in self.inputs)

    @property
    def output_id(self) -> int:
        return self.output.id


@dataclass
class Graph:
    """Ordered operation records for one forward pass."""

    records: list = field(default_factory=list)
    enabled: bool = True

    def reset(self) -> None:
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)


class _State(threading.local):
    def __init__(self):
        self.graph = Graph()


_state = _State()


def current_graph() -> Graph:
    return _state.graph


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    g = _state.graph
    prev = g.enabled
    g.enabled = False
    try:
        yield
    finally:
        g.enabled = prev


def is_grad_enabled() -> bool:
    return _state.graph.enabled


def make_result(op: str, out: np.ndarray, inputs: Sequence[Tensor],
                backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap an op's forward output and record it if any input needs a gradient."""
    if _check_finite and not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op} produced non-finite values")
    g = _state.graph
    needs = g.enabled and any(t.requires_grad for t in inputs)
    res = Tensor.__new__(Tensor)
    res.data = out
    res.requires_grad = needs
    res.grad = None
    res.id = next(_ids)
    res.name = None
    if needs:
        g.records.append(Record(op, tuple(inputs), res, backward))
    return res


def backward(loss: Tensor) -> dict:
    """Populate ``.grad`` on every grad-flagged leaf reachable from ``loss``.

    Returns the map ``tensor id -> gradient`` for leaves. The graph is reset
    afterwards, so a second call needs a fresh forward pass.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    g = _state.graph
    if not loss.requires_grad:
        g.reset()
        return {}
    grads = {loss.id: np.ones_like(loss.data)}
    leaves = {}
    produced = set()
    for rec in reversed(g.records):
        gout = grads.pop(rec.output.id, None)
        produced.add(rec.output.id)
        if gout is None:
            continue
        gins = rec.backward(gout)
        for t, gi in zip(rec.inputs, gins):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise RuntimeError(f"{rec.op}: gradient shape {gi.shape} != input shape {t.shape}")
            prev = grads.get(t.id)
            grads[t.id] = gi if prev is None else prev + gi
            leaves[t.id] = t
    g.reset()
    out = {}
    for tid, t in leaves.items():
        if tid in produced or tid not in grads:
            continue
        gr = grads[tid].astype(t.data.dtype, copy=False)
        t.grad = gr if t.grad is None else t.grad + gr
        out[tid] = t.grad
    return out
