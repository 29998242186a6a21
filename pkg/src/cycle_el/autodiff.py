"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every trainable operation carries an analytic backward rule; ``grad_check``
verifies each rule against central finite differences.  The engine is
deliberately small: 2-D matmul, broadcasting elementwise ops, reductions,
row gathering, and two fused graph ops backed by the kernels module.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import kernels


class AutodiffError(RuntimeError):
    pass


class Tensor:
    """A node in the computation graph.  ``values`` is a float64 ndarray."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad=False, parents=(), backward=None, name=""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(values, name="const") -> Tensor:
    return Tensor(values, requires_grad=False, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


# ---------------------------------------------------------------------------
# elementwise and linear algebra ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.values + b.values, parents=(a, b), name="add")

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.values, parents=(a,), name="neg")
    out._backward = lambda g: _accum(a, -g) if a.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.values * b.values, parents=(a, b), name="mul")

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.values, b.shape))

    out._backward = bwd
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise AutodiffError("matmul expects 2-D operands")
    out = Tensor(a.values @ b.values, parents=(a, b), name="matmul")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.values.T)
        if b.requires_grad:
            _accum(b, a.values.T @ g)

    out._backward = bwd
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.values.T, parents=(a,), name="transpose")
    out._backward = lambda g: _accum(a, g.T) if a.requires_grad else None
    return out


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    out = Tensor(a.values.reshape(shape), parents=(a,), name="reshape")
    out._backward = lambda g: _accum(a, g.reshape(old)) if a.requires_grad else None
    return out


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.values.sum(axis=axis, keepdims=keepdims), parents=(a,), name="sum")

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.full(a.shape, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.shape).copy())

    out._backward = bwd
    return out


def mean_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.values.size if axis is None else a.values.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def exp(a: Tensor) -> Tensor:
    v = np.exp(a.values)
    out = Tensor(v, parents=(a,), name="exp")
    out._backward = lambda g: _accum(a, g * v) if a.requires_grad else None
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.values), parents=(a,), name="log")
    out._backward = lambda g: _accum(a, g / a.values) if a.requires_grad else None
    return out


def tanh(a: Tensor) -> Tensor:
    v = np.tanh(a.values)
    out = Tensor(v, parents=(a,), name="tanh")
    out._backward = lambda g: _accum(a, g * (1.0 - v * v)) if a.requires_grad else None
    return out


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.values
    v = np.where(x > 0, x, alpha * np.expm1(x))
    out = Tensor(v, parents=(a,), name="elu")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * np.where(x > 0, 1.0, v + alpha))

    out._backward = bwd
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    x = a.values
    out = Tensor(np.where(x > 0, x, slope * x), parents=(a,), name="leaky_relu")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * np.where(x > 0, 1.0, slope))

    out._backward = bwd
    return out


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a 2-D (or elements of a 1-D) tensor by integer index."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.values[idx], parents=(a,), name="gather_rows")

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.values)
            np.add.at(acc, idx, g)
            _accum(a, acc)

    out._backward = bwd
    return out


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.values[start:stop], parents=(a,), name="slice1d")

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.values)
            acc[start:stop] = g
            _accum(a, acc)

    out._backward = bwd
    return out


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([p.values for p in parts], axis=axis), parents=tuple(parts), name="concat")
    sizes = [p.values.shape[axis] for p in parts]

    def bwd(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                _accum(p, g[tuple(sl)])
            offset += size

    out._backward = bwd
    return out


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Row-wise x/|x|; zero rows map to zero rows (and get zero gradient)."""
    x = a.values
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    v = x / safe[:, None]
    out = Tensor(v, parents=(a,), name="l2_normalize_rows")

    def bwd(g):
        if a.requires_grad:
            dot = np.sum(v * g, axis=1, keepdims=True)
            grad = (g - v * dot) / safe[:, None]
            grad[zero] = 0.0
            _accum(a, grad)

    out._backward = bwd
    return out


def neighbor_weighted_sum(weights: Tensor, feats: Tensor, idx: np.ndarray) -> Tensor:
    """out[b] = sum_s weights[b, s] * feats[idx[b, s]]; idx entries < 0 are padding."""
    idx = np.asarray(idx, dtype=np.int64)
    v = kernels.seg_weighted_sum(weights.values, feats.values, idx)
    out = Tensor(v, parents=(weights, feats), name="neighbor_weighted_sum")

    def bwd(g):
        d_w, d_f = kernels.seg_weighted_sum_bwd(
            g, weights.values, feats.values, idx, feats.requires_grad
        )
        if weights.requires_grad:
            _accum(weights, d_w)
        if feats.requires_grad:
            _accum(feats, d_f)

    out._backward = bwd
    return out


def logsumexp_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise log-sum-exp with a max shift; masked-out entries are ignored.

    Rows whose mask is entirely zero yield -inf from the pure formula; callers
    must exclude such rows beforehand.
    """
    x = a.values
    if mask is not None:
        shifted_in = np.where(mask > 0, x, -np.inf)
    else:
        shifted_in = x
    row_max = np.max(shifted_in, axis=1)
    masked = a if mask is None else mul(a, Tensor(mask))
    # exp of masked-out entries contributes exp(-row_max)*0 after re-masking
    expo = exp(sub(masked, Tensor(row_max[:, None])))
    if mask is not None:
        expo = mul(expo, Tensor(mask))
    return add(log(sum_(expo, axis=1)), Tensor(row_max))


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

def backward(loss: Tensor):
    """Reverse-accumulate gradients from a scalar loss."""
    if loss.values.size != 1:
        raise AutodiffError("backward expects a scalar loss")
    if not np.isfinite(loss.values):
        bad = _find_nonfinite(loss)
        raise AutodiffError(f"non-finite loss (first offending op: {bad})")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.values)
    for node in reversed(topo):
        if node._backward is not None and node.requires_grad:
            node._backward(node.grad if node.grad is not None else np.zeros_like(node.values))


def _find_nonfinite(root: Tensor) -> str:
    stack, seen = [root], set()
    first = root.name or "<loss>"
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if not np.all(np.isfinite(node.values)):
            first = node.name or "<unnamed>"
        stack.extend(node._parents)
    return first


def zero_grads(tensors: Iterable[Tensor]):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class ParameterStore:
    """Named trainable tensors with fixed shapes."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple, rng: np.random.Generator, init: str = "glorot") -> Tensor:
        if name in self._params:
            raise AutodiffError(f"duplicate parameter name {name!r}")
        if init == "zeros":
            values = np.zeros(shape)
        elif init == "glorot":
            fan_in = shape[0] if len(shape) > 0 else 1
            fan_out = shape[1] if len(shape) > 1 else shape[0] if shape else 1
            s = np.sqrt(6.0 / (fan_in + fan_out))
            values = rng.uniform(-s, s, size=shape)
        else:
            raise AutodiffError(f"unknown init {init!r}")
        t = Tensor(values, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def grads(self) -> dict[str, np.ndarray]:
        return {
            n: (t.grad if t.grad is not None else np.zeros_like(t.values))
            for n, t in self._params.items()
        }

    def zero_grads(self):
        zero_grads(self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.values.copy() for n, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for n, t in self._params.items():
            if n not in state:
                raise AutodiffError(f"missing parameter {n!r} in state")
            if state[n].shape != t.values.shape:
                raise AutodiffError(f"shape mismatch for {n!r}")
            t.values = state[n].astype(np.float64).copy()


def forward_backward(fn: Callable[[], Tensor], params: ParameterStore):
    """Evaluate a scalar loss closure and return (loss_value, grads-by-name)."""
    params.zero_grads()
    loss = fn()
    backward(loss)
    return float(loss.values), params.grads()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    tolerance: float
    passed: bool


def grad_check(fn: Callable[[], Tensor], tensors: list[Tensor], tolerance: float = 1e-4,
               h: float = 1e-4, op_name: str = "") -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central finite differences."""
    zero_grads_all = list(tensors)
    zero_grads(zero_grads_all)
    loss = fn()
    backward(loss)
    analytic = [
        (t.grad.copy() if t.grad is not None else np.zeros_like(t.values)) for t in tensors
    ]
    max_rel = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.values.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().values)
            flat[i] = orig - h
            f_minus = float(fn().values)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = grad.ravel()[i]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            max_rel = max(max_rel, rel)
    return GradCheckReport(op_name, max_rel, tolerance, max_rel < tolerance)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int

    @classmethod
    def fresh(cls, store: ParameterStore) -> "AdamState":
        return cls(
            m={n: np.zeros_like(t.values) for n, t in store.items()},
            v={n: np.zeros_like(t.values) for n, t in store.items()},
            step=0,
        )


def adam_step(store: ParameterStore, grads: dict, lr: float, state: AdamState,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    state.step += 1
    t = state.step
    for name, param in store.items():
        g = grads[name]
        if g.shape != param.values.shape:
            raise AutodiffError(f"gradient shape mismatch for {name!r}")
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** t)
        v_hat = state.v[name] / (1 - beta2 ** t)
        param.values = param.values - lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(store: ParameterStore, grads: dict, lr: float):
    for name, param in store.items():
        g = grads[name]
        if g.shape != param.values.shape:
            raise AutodiffError(f"gradient shape mismatch for {name!r}")
        param.values = param.values - lr * g


# ---------------------------------------------------------------------------
# named-tensor binary container
# ---------------------------------------------------------------------------

CONTAINER_VERSION = 1


def write_tensors(fh, tensors: dict[str, np.ndarray]):
    fh.write(struct.pack("<B", CONTAINER_VERSION))
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        arr = np.asarray(arr, dtype="<f8")
        fh.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(arr.tobytes())


def read_tensors(fh) -> dict[str, np.ndarray]:
    version = struct.unpack("<B", _read_exact(fh, 1))[0]
    if version != CONTAINER_VERSION:
        raise AutodiffError(f"unsupported tensor container version {version}")
    count = struct.unpack("<I", _read_exact(fh, 4))[0]
    out = {}
    for _ in range(count):
        name_len = struct.unpack("<H", _read_exact(fh, 2))[0]
        name = _read_exact(fh, name_len).decode("utf-8")
        ndim = struct.unpack("<B", _read_exact(fh, 1))[0]
        shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(_read_exact(fh, size * 8), dtype="<f8").reshape(shape)
        out[name] = data.astype(np.float64)
    return out


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise AutodiffError("truncated tensor container")
    return data
