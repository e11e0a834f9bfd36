"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Each operation links its output to its inputs with a backward closure; calling
`backward` on a scalar loss walks the recorded graph in reverse topological
order and accumulates gradients on every tracked tensor.  The module also
provides the parameter store, a two-layer SiLU MLP, the Adam update, and a
versioned JSON checkpoint format.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class UnknownParam(KeyError):
    """A named parameter does not exist in the store."""


class NotScalarLoss(ValueError):
    """backward() requires a single-element loss tensor."""


class MissingGradients(RuntimeError):
    """adam_step() was called before gradients were populated."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (used by the sampling loop)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A float64 array plus an optional link into the recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, copy=True)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple["Tensor", ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def _tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, tracked={self._tracked()})"

    # Operator sugar; every op routes through the module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t._tracked():
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p._tracked() for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), bw)


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            expanded = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(expanded, a.data.shape).copy())

    return _make(out_data, (a,), bw)


def mean_(a: Tensor) -> Tensor:
    a = as_tensor(a)
    count = max(a.data.size, 1)
    return mul(sum_(a), 1.0 / count)


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), bw)


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bw(g):
        _accumulate(a, g / a.data)

    return _make(out_data, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; the derivative is clamped at zero input."""
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g * 0.5 / np.maximum(out_data, 1e-150))

    return _make(out_data, (a,), bw)


def silu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    # Branchless stable sigmoid: exp never sees a positive argument.
    x = a.data
    ex = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    out_data = x * sig

    def bw(g):
        _accumulate(a, g * (sig * (1.0 + x * (1.0 - sig))))

    return _make(out_data, (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def bw(g):
        offset = 0
        for p, size in zip(parts, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            _accumulate(p, g[tuple(index)])
            offset += size

    return _make(out_data, tuple(parts), bw)


def gather(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows; the gradient scatter-adds back into the source."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(f"gather index outside [0, {a.data.shape[0]})")
    out_data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(out_data, (a,), bw)


def segment_sum(a: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of `a` into `num_segments` buckets keyed by `segment_ids`."""
    a = as_tensor(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    out_data = np.zeros((num_segments,) + a.data.shape[1:], dtype=np.float64)
    np.add.at(out_data, seg, a.data)

    def bw(g):
        _accumulate(a, g[seg])

    return _make(out_data, (a,), bw)


def repeat_rows(a: Tensor, count: int) -> Tensor:
    """Tile a [1, d] row into [count, d]; the gradient sums back over rows."""
    a = as_tensor(a)
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise ShapeMismatch(f"repeat_rows expects [1, d], got {a.data.shape}")
    out_data = np.repeat(a.data, count, axis=0)

    def bw(g):
        _accumulate(a, g.sum(axis=0, keepdims=True))

    return _make(out_data, (a,), bw)


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log-softmax via the max-shifted logsumexp composite."""
    a = as_tensor(a)
    shift = Tensor(np.max(a.data, axis=1, keepdims=True))  # constant, no gradient
    shifted = sub(a, shift)
    lse = log(sum_(exp(shifted), axis=1, keepdims=True))
    return sub(shifted, lse)


def backward(loss: Tensor) -> None:
    """Populate gradients of every tracked tensor reachable from a scalar loss."""
    if not isinstance(loss, Tensor):
        raise NotScalarLoss("loss must be a Tensor")
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss has {loss.data.size} elements, expected 1")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


class ParamStore:
    """Named learnable tensors plus per-parameter Adam moment state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self.adam_steps = 0

    def add(self, name: str, value) -> Tensor:
        tensor = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self._params[name] = tensor
        self._adam_m[name] = np.zeros_like(tensor.data)
        self._adam_v[name] = np.zeros_like(tensor.data)
        return tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise UnknownParam(name) from None

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def zero_grad(self) -> None:
        # Zero arrays, not None: parameters that a given loss never touches
        # (e.g. the last layer's coordinate MLP) legitimately have zero gradient.
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    @property
    def gradients(self) -> dict[str, np.ndarray | None]:
        return {name: self._params[name].grad for name in self.names()}

    def flatten(self) -> np.ndarray:
        return np.concatenate([self._params[n].data.reshape(-1) for n in self.names()])

    def assign_flat(self, values: np.ndarray) -> None:
        offset = 0
        for name in self.names():
            t = self._params[name]
            size = t.data.size
            t.data = values[offset : offset + size].reshape(t.data.shape).astype(np.float64)
            offset += size


def linear(params: ParamStore, name: str, x: Tensor) -> Tensor:
    """Affine map x @ w + b using parameters `{name}.w` / `{name}.b`."""
    w = params[f"{name}.w"]
    b = params[f"{name}.b"]
    x = as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatch(f"linear {name!r}: input {x.data.shape} vs weight {w.data.shape}")
    return add(matmul(x, w), b)


def mlp_forward(params: ParamStore, name: str, x: Tensor) -> Tensor:
    """Two-layer MLP: affine, SiLU, affine, using `{name}.w1/b1/w2/b2`."""
    for suffix in ("w1", "b1", "w2", "b2"):
        if f"{name}.{suffix}" not in params:
            raise UnknownParam(f"{name}.{suffix}")
    x = as_tensor(x)
    w1 = params[f"{name}.w1"]
    if x.data.ndim != 2 or x.data.shape[1] != w1.data.shape[0]:
        raise ShapeMismatch(f"mlp {name!r}: input {x.data.shape} vs weight {w1.data.shape}")
    hidden = silu(add(matmul(x, w1), params[f"{name}.b1"]))
    return add(matmul(hidden, params[f"{name}.w2"]), params[f"{name}.b2"])


def init_affine(params: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
    params.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)))
    params.add(f"{name}.b", np.zeros(n_out))


def init_mlp(params: ParamStore, name: str, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator) -> None:
    params.add(f"{name}.w1", rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_hidden)))
    params.add(f"{name}.b1", np.zeros(n_hidden))
    params.add(f"{name}.w2", rng.normal(0.0, 1.0 / np.sqrt(n_hidden), size=(n_hidden, n_out)))
    params.add(f"{name}.b2", np.zeros(n_out))


def adam_step(
    params: ParamStore,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over every parameter in the store."""
    missing = [n for n in params.names() if params[n].grad is None]
    if missing:
        raise MissingGradients(f"no gradients for {missing}")
    beta1, beta2 = betas
    params.adam_steps += 1
    t = params.adam_steps
    for name in params.names():
        tensor = params[name]
        g = tensor.grad
        m = params._adam_m[name]
        v = params._adam_v[name]
        m[:] = beta1 * m + (1.0 - beta1) * g
        v[:] = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)


CHECKPOINT_VERSION = 1


def save_checkpoint(params: ParamStore, path: str, meta: dict | None = None) -> None:
    """Write parameters, Adam state, and metadata as deterministic JSON."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "adam": {
            "steps": params.adam_steps,
            "m": {n: params._adam_m[n].reshape(-1).tolist() for n in params.names()},
            "v": {n: params._adam_v[n].reshape(-1).tolist() for n in params.names()},
        },
        "params": {
            n: {"shape": list(params[n].data.shape), "data": params[n].data.reshape(-1).tolist()}
            for n in params.names()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path: str) -> tuple[ParamStore, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    params = ParamStore()
    for name, entry in payload["params"].items():
        shape = tuple(entry["shape"])
        params.add(name, np.asarray(entry["data"], dtype=np.float64).reshape(shape))
    adam = payload.get("adam", {})
    params.adam_steps = int(adam.get("steps", 0))
    for name in params.names():
        if name in adam.get("m", {}):
            params._adam_m[name] = np.asarray(adam["m"][name], dtype=np.float64).reshape(
                params[name].data.shape
            )
            params._adam_v[name] = np.asarray(adam["v"][name], dtype=np.float64).reshape(
                params[name].data.shape
            )
    return params, payload.get("meta", {})
