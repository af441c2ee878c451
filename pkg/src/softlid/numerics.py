"""Minimal dense-tensor reverse-mode autodiff, optimizer, and LR schedule.

Tensors are float64 numpy arrays of rank <= 2. Graphs are built eagerly by
the op functions below; calling ``backward()`` on a scalar output fills the
``grad`` slot of every tensor that requires a gradient. The op set is
closed on purpose: matmul, add (broadcasting), scale, tanh, relu,
log_softmax, gather_rows, lse, concat_rows. Anything else must be added
here explicitly (fused ops may attach a custom backward via
``graph_node``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "NumericsError",
    "Tensor",
    "ParamSet",
    "NoamSchedule",
    "Adam",
    "matmul",
    "add",
    "scale",
    "tanh",
    "relu",
    "log_softmax",
    "gather_rows",
    "concat_rows",
    "lse",
    "logsumexp",
    "graph_node",
    "accumulate_grad",
    "grad_check",
]


class NumericsError(RuntimeError):
    """Graph misuse or a non-finite value met during a forward/backward pass."""


class Tensor:
    """A float64 array of rank <= 2 with an optional gradient slot.

    ``requires_grad`` marks leaves that should receive gradients; interior
    nodes inherit it from their parents. ``grad``, when present, always has
    the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise NumericsError(f"rank-{arr.ndim} tensor not supported (max rank 2)")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def backward(self) -> None:
        """Reverse-mode pass from this scalar output.

        Populates ``grad`` on every reachable tensor with requires_grad set;
        tensors without the flag receive none. Aborts on any non-finite
        gradient, naming the offending op.
        """
        if self.data.size != 1:
            raise NumericsError(
                f"backward() needs a scalar graph output, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None:
                continue
            g = node.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient flowing into op '{node.op}'")
            node._backward_fn(g)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``, allocating the slot on first use."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def graph_node(
    data: np.ndarray,
    op: str,
    parents: tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], None] | None,
    allow_neg_inf: bool = False,
) -> Tensor:
    """Create an interior graph node; fused ops use this to attach a custom backward."""
    out = Tensor(data)
    out.op = op
    out._parents = parents
    out.requires_grad = any(p.requires_grad for p in parents)
    out._backward_fn = backward_fn if out.requires_grad else None
    d = out.data
    if allow_neg_inf:
        if np.any(np.isnan(d)) or np.any(d == np.inf):
            raise NumericsError(f"NaN or +inf produced by op '{op}'")
    elif not np.all(np.isfinite(d)):
        raise NumericsError(f"non-finite value produced by op '{op}'")
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def matmul(a, b, transpose_b: bool = False) -> Tensor:
    """Rank-2 matrix product ``a @ b`` (or ``a @ b.T`` with transpose_b)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise NumericsError("matmul expects rank-2 operands")
    out_data = a.data @ (b.data.T if transpose_b else b.data)

    def bw(g: np.ndarray) -> None:
        if transpose_b:
            accumulate_grad(a, g @ b.data)
            accumulate_grad(b, g.T @ a.data)
        else:
            accumulate_grad(a, g @ b.data.T)
            accumulate_grad(b, a.data.T @ g)

    return graph_node(out_data, "matmul", (a, b), bw)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (bias rows, scalars)."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data
    if out_data.ndim > 2:
        raise NumericsError("add result exceeds rank 2")

    def bw(g: np.ndarray) -> None:
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(g, b.data.shape))

    return graph_node(out_data, "add", (a, b), bw)


def scale(a, factor: float) -> Tensor:
    """Multiply by a python scalar constant."""
    a = _as_tensor(a)
    factor = float(factor)

    def bw(g: np.ndarray) -> None:
        accumulate_grad(a, g * factor)

    return graph_node(a.data * factor, "scale", (a,), bw)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bw(g: np.ndarray) -> None:
        accumulate_grad(a, g * (1.0 - out_data * out_data))

    return graph_node(out_data, "tanh", (a,), bw)


def relu(a) -> Tensor:
    """Elementwise max with zero."""
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bw(g: np.ndarray) -> None:
        accumulate_grad(a, g * (a.data > 0.0))

    return graph_node(out_data, "relu", (a,), bw)


def log_softmax(a) -> Tensor:
    """Log-softmax over the last dimension."""
    a = _as_tensor(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    out_data = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def bw(g: np.ndarray) -> None:
        accumulate_grad(a, g - np.exp(out_data) * g.sum(axis=-1, keepdims=True))

    return graph_node(out_data, "log_softmax", (a,), bw)


def gather_rows(a, indices) -> Tensor:
    """Row gather from a rank-2 tensor; indices may repeat (embedding lookup)."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise NumericsError("gather_rows expects a rank-2 tensor")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise NumericsError("gather_rows expects a flat index list")
    n = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise NumericsError(f"gather_rows index out of range for {n} rows")
    out_data = a.data[idx]

    def bw(g: np.ndarray) -> None:
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return graph_node(out_data, "gather_rows", (a,), bw)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-2 tensors along axis 0."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise NumericsError("concat_rows of empty sequence")
    if any(t.data.ndim != 2 for t in ts):
        raise NumericsError("concat_rows expects rank-2 tensors")
    out_data = np.concatenate([t.data for t in ts], axis=0)
    row_counts = [t.data.shape[0] for t in ts]

    def bw(g: np.ndarray) -> None:
        offset = 0
        for t, rows in zip(ts, row_counts):
            accumulate_grad(t, g[offset : offset + rows])
            offset += rows

    return graph_node(out_data, "concat_rows", tuple(ts), bw)


def lse(a) -> Tensor:
    """log(sum(exp(entries))) over the whole tensor, as a scalar graph node.

    Tolerates -inf entries; an all--inf input yields -inf with zero gradient.
    """
    a = _as_tensor(a)
    value = logsumexp(a.data)

    def bw(g: np.ndarray) -> None:
        if value == -math.inf:
            return
        accumulate_grad(a, np.exp(a.data - value) * g)

    return graph_node(np.asarray(value), "lse", (a,), bw, allow_neg_inf=True)


def logsumexp(values) -> float:
    """Stable log(sum(exp(values))) on plain arrays; -inf for all--inf input."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise NumericsError("logsumexp of empty input")
    m = float(arr.max())
    if m == -math.inf:
        return -math.inf
    if math.isinf(m) or math.isnan(m):
        raise NumericsError("logsumexp input must be < +inf and not NaN")
    return m + math.log(float(np.exp(arr - m).sum()))


# ---------------------------------------------------------------------------
# Parameters, schedule, optimizer
# ---------------------------------------------------------------------------


class ParamSet:
    """Insertion-ordered name -> Tensor map with per-entry trainable flags.

    The flag is fixed when the entry is added; frozen entries never receive
    gradients and are never touched by the optimizer.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, tensor: Tensor, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise NumericsError(f"duplicate parameter name '{name}'")
        tensor.requires_grad = bool(trainable)
        self._tensors[name] = tensor
        self._trainable[name] = bool(trainable)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def trainable_items(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._tensors.items() if self._trainable[n])

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values, in insertion order."""
        return {n: t.data.copy() for n, t in self._tensors.items()}


@dataclass(frozen=True)
class NoamSchedule:
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then inverse-sqrt decay."""

    peak_lr: float
    warmup_steps: int

    def __post_init__(self):
        if self.peak_lr <= 0.0:
            raise NumericsError("peak_lr must be positive")
        if self.warmup_steps < 1:
            raise NumericsError("warmup_steps must be a positive integer")

    def lr(self, step: int) -> float:
        if step < 1:
            raise NumericsError("schedule step must be >= 1")
        return self.peak_lr * min(step / self.warmup_steps, math.sqrt(self.warmup_steps / step))


class Adam:
    """Adam over the trainable entries of a ParamSet."""

    def __init__(self, params: ParamSet, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {n: np.zeros_like(t.data) for n, t in params.trainable_items()}
        self._v = {n: np.zeros_like(t.data) for n, t in params.trainable_items()}
        self._steps = 0

    def step(self, lr: float) -> None:
        """Apply one update from the gradients currently held by the params."""
        self._steps += 1
        bc1 = 1.0 - self.beta1**self._steps
        bc2 = 1.0 - self.beta2**self._steps
        for name, p in self.params.trainable_items():
            g = p.grad
            if g is None:
                raise NumericsError(f"missing gradient on trainable parameter '{name}'")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# Validation harness
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: ParamSet,
    eps: float = 1e-6,
    samples_per_tensor: int = 20,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` must rebuild the loss graph from the current parameter values
    and be deterministic; that is verified with a repeated baseline
    evaluation before any probing.
    """
    if not (1e-8 <= eps <= 1e-3):
        raise NumericsError("grad_check eps must lie in [1e-8, 1e-3]")
    base_a = loss_fn().data.item()
    base_b = loss_fn().data.item()
    if base_a != base_b:
        raise NumericsError("loss_fn is not deterministic across repeated evaluation")

    params.zero_grad()
    loss_fn().backward()
    analytic = {
        n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for n, t in params.trainable_items()
    }

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in params.trainable_items():
        flat = t.data.reshape(-1)
        count = min(samples_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        ref = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().data.item()
            flat[i] = orig - eps
            down = loss_fn().data.item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(ref[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
