"""Minimal reverse-mode autodiff on dense float64 numpy arrays.

Every op records a backward closure on the output node; calling
``grad``/``per_example_grads`` walks the graph in reverse topological
order. Reductions use numpy's fixed left-to-right summation, so repeated
runs on the same inputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# When True (default) every op validates that its output is finite.
CHECK_FINITE = True


class ShapeError(ValueError):
    pass


class TensorError(ValueError):
    pass


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """A node in the computation graph: float64 data plus backward hook."""

    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), name: str = ""):
        self.data = _as_array(data)
        if self.data.ndim > 2:
            raise ShapeError(f"only scalars, vectors and matrices supported, got shape {self.data.shape}")
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = None
        self.name = name
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise TensorError(f"non-finite values in tensor {name or '<anon>'}")

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(self, other)

    def __neg__(self):
        return multiply(self, -1.0)

    def __sub__(self, other):
        return add(self, multiply(_wrap(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo(root: Tensor) -> list[Tensor]:
    """Iterative post-order topological sort (graphs can be deep)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Grads of all nodes reachable from ``loss`` are reset first, so the same
    recorded graph can be differentiated repeatedly (one pass per scalar).
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar, got shape {loss.data.shape}")
    order = _topo(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- primitive ops ----------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(out_data, (a, b), "add")

    def bwd(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(g, b.data.shape))

    out._backward = bwd
    return out


def multiply(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeError(f"multiply: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(out_data, (a, b), "multiply")

    def bwd(g):
        a._accum(_unbroadcast(g * b.data, a.data.shape))
        b._accum(_unbroadcast(g * a.data, b.data.shape))

    out._backward = bwd
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError("matmul needs vectors or matrices")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, (a, b), "matmul")

    def bwd(g):
        if a.data.ndim == 1 and b.data.ndim == 2:
            a._accum(g @ b.data.T)
            b._accum(np.outer(a.data, g))
        elif a.data.ndim == 2 and b.data.ndim == 1:
            a._accum(np.outer(g, b.data))
            b._accum(a.data.T @ g)
        elif a.data.ndim == 1 and b.data.ndim == 1:
            a._accum(g * b.data)
            b._accum(g * a.data)
        else:
            a._accum(g @ b.data.T)
            b._accum(a.data.T @ g)

    out._backward = bwd
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    out = Tensor(a.data.T, (a,), "transpose")

    def bwd(g):
        a._accum(g.T)

    out._backward = bwd
    return out


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of an embedding table selected by integer id, shape (len(ids), d)."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("embedding_gather expects a flat id list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(f"ids out of range for table with {table.data.shape[0]} rows")
    out = Tensor(table.data[idx], (table,), "gather")

    def bwd(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, idx, g)
        table._accum(acc)

    out._backward = bwd
    return out


def mean_pool(a: Tensor, axis: int = 0) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"mean_pool needs a matrix, got shape {a.shape}")
    n = a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis), (a,), "mean_pool")

    def bwd(g):
        a._accum(np.repeat(np.expand_dims(g / n, axis=axis), n, axis=axis))

    out._backward = bwd
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, (a,), "tanh")

    def bwd(g):
        a._accum(g * (1.0 - y * y))

    out._backward = bwd
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,), "relu")

    def bwd(g):
        a._accum(g * (a.data > 0.0))

    out._backward = bwd
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, (a,), "exp")

    def bwd(g):
        a._accum(g * y)

    out._backward = bwd
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Numerically stable log-softmax over the last axis."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    s = x - m
    lse = np.log(np.sum(np.exp(s), axis=-1, keepdims=True)) + m
    y = x - lse
    out = Tensor(y, (a,), "log_softmax")

    def bwd(g):
        soft = np.exp(y)
        a._accum(g - soft * g.sum(axis=-1, keepdims=True))

    out._backward = bwd
    return out


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale a vector (or each matrix row) to unit Euclidean norm."""
    norm = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = a.data / norm
    out = Tensor(y, (a,), "l2_normalize")

    def bwd(g):
        a._accum((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm)

    out._backward = bwd
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")
    out = Tensor(np.dot(a.data, b.data), (a, b), "dot")

    def bwd(g):
        a._accum(g * b.data)
        b._accum(g * a.data)

    out._backward = bwd
    return out


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), (a,), "sum")

    def bwd(g):
        a._accum(np.full_like(a.data, g))

    out._backward = bwd
    return out


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean(), (a,), "mean")

    def bwd(g):
        a._accum(np.full_like(a.data, g / n))

    out._backward = bwd
    return out


def masked_select(a: Tensor, mask) -> Tensor:
    """Entries of ``a`` where the boolean mask is true, as a flat vector."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.data.shape:
        raise ShapeError(f"mask shape {m.shape} does not match tensor shape {a.shape}")
    out = Tensor(a.data[m], (a,), "masked_select")

    def bwd(g):
        acc = np.zeros_like(a.data)
        acc[m] = g
        a._accum(acc)

    out._backward = bwd
    return out


def gather_pairs(a: Tensor, rows, cols) -> Tensor:
    """Matrix entries a[rows[i], cols[i]] as a flat vector."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    if a.data.ndim != 2 or r.shape != c.shape or r.ndim != 1:
        raise ShapeError("gather_pairs needs a matrix and matching index vectors")
    out = Tensor(a.data[r, c], (a,), "gather_pairs")

    def bwd(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, (r, c), g)
        a._accum(acc)

    out._backward = bwd
    return out


def concat_rows(parts: list[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a matrix, one row each."""
    if not parts:
        raise ShapeError("concat_rows needs at least one tensor")
    for p in parts:
        if p.data.ndim != 1 or p.data.shape != parts[0].data.shape:
            raise ShapeError("concat_rows needs equal-length vectors")
    out = Tensor(np.stack([p.data for p in parts]), tuple(parts), "concat_rows")

    def bwd(g):
        for i, p in enumerate(parts):
            p._accum(g[i])

    out._backward = bwd
    return out


# -- parameters and gradients ------------------------------------------------


class ParamSet:
    """Named, ordered collection of parameter tensors.

    Flattening concatenates values in insertion order, so the layout is
    stable for checkpointing and for coordinate-level gradient checks.
    """

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        if params:
            for k, v in params.items():
                self.add(k, v)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise TensorError(f"duplicate parameter name {name!r}")
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._params.values()]) if self._params else np.zeros(0)

    def n_coords(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy(self) -> "ParamSet":
        return ParamSet({k: Tensor(v.data.copy()) for k, v in self._params.items()})


@dataclass
class Gradient:
    """Per-parameter gradient arrays mirroring a ParamSet's structure."""

    values: dict[str, np.ndarray]
    privatized: bool = field(default=False, compare=False)

    @property
    def l2_norm(self) -> float:
        total = 0.0
        for v in self.values.values():
            total += float(np.sum(v * v))
        return float(np.sqrt(total))

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values.values()]) if self.values else np.zeros(0)

    def scaled(self, s: float) -> "Gradient":
        return Gradient({k: v * s for k, v in self.values.items()})

    @staticmethod
    def zeros_like(params: ParamSet) -> "Gradient":
        return Gradient({k: np.zeros_like(t.data) for k, t in params.items()})


def grad(loss: Tensor, params: ParamSet) -> Gradient:
    """Exact reverse-mode derivative of a recorded scalar loss."""
    backward(loss)
    values = {}
    for name, t in params.items():
        values[name] = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
    return Gradient(values)


def per_example_grads(loss_fn, batch, params: ParamSet) -> list[Gradient]:
    """One gradient per example: element i differentiates only example i's loss.

    ``loss_fn(batch)`` must return one scalar Tensor per example. Losses may
    couple examples (each scalar can read every batch input); each returned
    gradient still differentiates exactly its own scalar.
    """
    losses = loss_fn(batch)
    if len(losses) != len(batch):
        raise TensorError(f"loss_fn returned {len(losses)} scalars for batch of {len(batch)}")
    grads = []
    for loss in losses:
        grads.append(grad(loss, params))
    return grads


def gradient_check(loss_fn, params: ParamSet, step: float, n_coords: int = 120, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must recompute the scalar loss from the current parameter
    values. A seeded random subset of at least ``n_coords`` coordinates is
    probed with central differences of half-width ``step``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = grad(loss_fn(), params)
    rng = np.random.default_rng(seed)
    coords = []
    for name, t in params.items():
        for flat_idx in range(t.data.size):
            coords.append((name, flat_idx))
    if len(coords) > n_coords:
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in picked]
    max_rel = 0.0
    for name, flat_idx in coords:
        t = params[name]
        flat = t.data.ravel()
        orig = flat[flat_idx]
        flat[flat_idx] = orig + step
        f_plus = float(loss_fn().data)
        flat[flat_idx] = orig - step
        f_minus = float(loss_fn().data)
        flat[flat_idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(analytic.values[name].ravel()[flat_idx])
        denom = max(abs(a), abs(numeric), 1e-6)
        max_rel = max(max_rel, abs(a - numeric) / denom)
    return max_rel
