"""Minimal dense tensors with tape-based reverse-mode differentiation.

Every primitive below computes its forward value with numpy and, when a
``Tape`` is active and one of its inputs requires a gradient, appends a record
with the closure that maps the output gradient to the input gradients.
``Tape.backward`` replays the records in reverse execution order, so each
primitive is visited exactly once.

Layout is row-major and shapes are checked at every op boundary. Broadcasting is
limited to what the model needs (bias vectors and scalar-like constants).
"""

import threading
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from maskint.errors import DimensionError, GeometryError, TokenIndexError
from maskint.rng import derive_rng

DEFAULT_DTYPE = np.float32

_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float array plus an optional gradient buffer of identical shape."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        values = np.asarray(values, dtype=dtype)
        if values.dtype.kind != "f":
            values = values.astype(DEFAULT_DTYPE)
        self.values = values
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class _Record:
    __slots__ = ("name", "output", "inputs", "backward")

    def __init__(self, name, output, inputs, backward):
        self.name = name
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed primitives, confined to the thread that opened it.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded when any of their inputs requires a gradient.
    """

    def __init__(self):
        self.records: List[_Record] = []
        self.visited: List[str] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, name, output, inputs, backward) -> None:
        self.records.append(_Record(name, output, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into the ``grad`` of every tensor requiring it."""
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.values)
        self.visited = []
        for record in reversed(self.records):
            self.visited.append(record.name)
            out_grad = record.output.grad
            if out_grad is None:
                continue
            for tensor, grad in zip(record.inputs, record.backward(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def _result(name: str, values, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = active_tape()
    requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=requires_grad)
    if requires_grad:
        tape.record(name, out, tuple(inputs), backward)
    return out


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants; plain numbers and arrays take the dtype of ``like``."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# --------------------------------------------------------------------------------------
# Elementwise
# --------------------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.values + b.values, (a, b), backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.values - b.values, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        )

    return _result("mul", a.values * b.values, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.dtype.type(factor)

    def backward(g):
        return (g * factor,)

    return _result("scale", a.values * factor, (a,), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.values
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner),)

    return _result("gelu", 0.5 * v * (1.0 + t), (x,), backward)


# --------------------------------------------------------------------------------------
# Shape manipulation
# --------------------------------------------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        values = a.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")

    def backward(g):
        return (g.reshape(a.shape),)

    return _result("reshape", values, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _result("transpose", np.ascontiguousarray(a.values.transpose(axes)), (a,), backward)


def getitem(a: Tensor, index) -> Tensor:
    """Basic indexing (ints and slices) only."""
    if not isinstance(index, tuple):
        index = (index,)
    for item in index:
        if not isinstance(item, (int, np.integer, slice, type(Ellipsis))):
            raise DimensionError("getitem supports basic indexing only; use gather_rows")

    def backward(g):
        full = np.zeros_like(a.values)
        full[index] += g
        return (full,)

    return _result("getitem", a.values[index], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
        )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result("concat", values, tensors, backward)


# --------------------------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------------------------
def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", a.values.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# --------------------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a plain matrix or has
    exactly the same batch axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch extents differ, {a.shape} @ {b.shape}")

    def backward(g):
        grad_a = g @ np.swapaxes(b.values, -1, -2)
        if b.ndim == 2:
            k, n = b.shape
            grad_b = a.values.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            grad_b = np.swapaxes(a.values, -1, -2) @ g
        return grad_a, grad_b

    return _result("matmul", a.values @ b.values, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# --------------------------------------------------------------------------------------
# Normalisations and probabilities
# --------------------------------------------------------------------------------------
def _softmax_values(v: np.ndarray, axis: int) -> np.ndarray:
    shifted = np.exp(v - v.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def _log_softmax_values(v: np.ndarray, axis: int) -> np.ndarray:
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    s = _softmax_values(x.values, axis)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result("softmax", s, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ls = _log_softmax_values(x.values, axis)

    def backward(g):
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    return _result("log_softmax", ls, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(
            f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} vs features {x.shape[-1]}"
        )
    centred = x.values - x.values.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centred * inv_std
    lead_axes = tuple(range(x.ndim - 1))

    def backward(g):
        g_hat = g * gamma.values
        grad_x = inv_std * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return grad_x, (g * x_hat).sum(axis=lead_axes), g.sum(axis=lead_axes)

    return _result("layer_norm", x_hat * gamma.values + beta.values, (x, gamma, beta), backward)


# --------------------------------------------------------------------------------------
# Lookups and losses
# --------------------------------------------------------------------------------------
def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]``; the output gains a trailing feature axis."""
    indices = np.asarray(indices)
    if indices.dtype.kind not in "iu":
        raise TokenIndexError(f"embedding indices must be integers, got {indices.dtype}")
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise TokenIndexError(
            f"embedding index out of range [0, {table.shape[0]}): "
            f"min {indices.min()}, max {indices.max()}"
        )

    def backward(g):
        grad = np.zeros_like(table.values)
        np.add.at(grad, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _result("embedding", table.values[indices], (table,), backward)


def gather_rows(x: Tensor, rows) -> Tensor:
    """Select rows of a 2D tensor; unselected rows get exactly zero gradient."""
    rows = np.asarray(rows, dtype=np.int64)
    if x.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2D tensor, got {x.shape}")

    def backward(g):
        grad = np.zeros_like(x.values)
        np.add.at(grad, rows, g)
        return (grad,)

    return _result("gather_rows", x.values[rows], (x,), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over rows.

    ``logits`` is ``(M,)`` for a single position or ``(P, M)`` for P positions.
    """
    targets = np.atleast_1d(np.asarray(targets))
    values = logits.values.reshape(-1, logits.shape[-1])
    n_rows, vocab = values.shape
    if targets.shape != (n_rows,):
        raise DimensionError(f"cross_entropy: {n_rows} rows but targets {targets.shape}")
    if targets.dtype.kind not in "iu" or targets.min() < 0 or targets.max() >= vocab:
        raise TokenIndexError(f"cross_entropy targets must lie in [0, {vocab})")
    log_probs = _log_softmax_values(values, axis=-1)
    rows = np.arange(n_rows)
    loss = -log_probs[rows, targets].sum() / n_rows

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return ((grad * (g / n_rows)).reshape(logits.shape),)

    return _result("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# --------------------------------------------------------------------------------------
# Convolutions (channel-last: batch x rows x cols x channels)
# --------------------------------------------------------------------------------------
def _conv_extent(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def _im2col(padded: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int):
    batch, _, _, channels = padded.shape
    cols = np.empty((batch, out_h, out_w, kernel, kernel, channels), dtype=padded.dtype)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, :, i, j, :] = padded[
                :, i : i + stride * (out_h - 1) + 1 : stride, j : j + stride * (out_w - 1) + 1 : stride, :
            ]
    return cols


def _col2im(cols: np.ndarray, padded_shape, kernel: int, stride: int) -> np.ndarray:
    out_h, out_w = cols.shape[1:3]
    padded = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            padded[
                :, i : i + stride * (out_h - 1) + 1 : stride, j : j + stride * (out_w - 1) + 1 : stride, :
            ] += cols[:, :, :, i, j, :]
    return padded


def conv2d(
    x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Strided 2D convolution; ``kernel`` is (k, k, C_in, C_out)."""
    batch, height, width, c_in = x.shape
    k, k2, kernel_in, c_out = kernel.shape
    if k != k2 or kernel_in != c_in:
        raise DimensionError(f"conv2d: kernel {kernel.shape} vs input channels {c_in}")
    out_h = _conv_extent(height, k, stride, padding)
    out_w = _conv_extent(width, k, stride, padding)
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"conv2d: input {height}x{width} smaller than kernel {k}")
    padded = np.pad(x.values, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = _im2col(padded, k, stride, out_h, out_w).reshape(-1, k * k * c_in)
    weight = kernel.values.reshape(k * k * c_in, c_out)
    out = (cols @ weight).reshape(batch, out_h, out_w, c_out)
    inputs = (x, kernel)
    if bias is not None:
        out = out + bias.values
        inputs = (x, kernel, bias)

    def backward(g):
        g2 = g.reshape(-1, c_out)
        grad_cols = (g2 @ weight.T).reshape(batch, out_h, out_w, k, k, c_in)
        grad_padded = _col2im(grad_cols, padded.shape, k, stride)
        grad_x = grad_padded[:, padding : padding + height, padding : padding + width, :]
        grads = (np.ascontiguousarray(grad_x), (cols.T @ g2).reshape(kernel.shape))
        if bias is not None:
            grads = grads + (g2.sum(axis=0),)
        return grads

    return _result("conv2d", out, inputs, backward)


def conv_transpose2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Adjoint of ``conv2d``; ``kernel`` is (k, k, C_in, C_out)."""
    batch, height, width, c_in = x.shape
    k, k2, kernel_in, c_out = kernel.shape
    if k != k2 or kernel_in != c_in:
        raise DimensionError(f"conv_transpose2d: kernel {kernel.shape} vs channels {c_in}")
    if output_padding > padding or output_padding >= max(stride, 1):
        raise GeometryError(
            f"conv_transpose2d: output_padding {output_padding} must be < stride and <= padding"
        )
    full_h = (height - 1) * stride + k + output_padding
    full_w = (width - 1) * stride + k + output_padding
    out_h = (height - 1) * stride - 2 * padding + k + output_padding
    out_w = (width - 1) * stride - 2 * padding + k + output_padding
    # (C_in, k*k*C_out) view of the kernel:
    weight = kernel.values.transpose(2, 0, 1, 3).reshape(c_in, k * k * c_out)
    x2 = x.values.reshape(-1, c_in)
    cols = (x2 @ weight).reshape(batch, height, width, k, k, c_out)
    full = _col2im(cols, (batch, full_h, full_w, c_out), k, stride)
    out = full[:, padding : padding + out_h, padding : padding + out_w, :]
    inputs = (x, kernel)
    if bias is not None:
        out = out + bias.values
        inputs = (x, kernel, bias)

    def backward(g):
        grad_full = np.zeros((batch, full_h, full_w, c_out), dtype=g.dtype)
        grad_full[:, padding : padding + out_h, padding : padding + out_w, :] = g
        grad_cols = _im2col(grad_full, k, stride, height, width).reshape(-1, k * k * c_out)
        grad_x = (grad_cols @ weight.T).reshape(x.shape)
        grad_weight = (x2.T @ grad_cols).reshape(c_in, k, k, c_out).transpose(1, 2, 0, 3)
        grads = (grad_x, np.ascontiguousarray(grad_weight))
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 1, 2)),)
        return grads

    return _result("conv_transpose2d", np.ascontiguousarray(out), inputs, backward)


# --------------------------------------------------------------------------------------
# Gradient utilities
# --------------------------------------------------------------------------------------
def merge_gradients(per_sample: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """Sum per-tape gradients in list order (fixed reduction topology)."""
    merged: Dict[str, np.ndarray] = {}
    for grads in per_sample:
        for name, grad in grads.items():
            merged[name] = grad.copy() if name not in merged else merged[name] + grad
    return merged


def _evaluate(function: Callable, arrays: List[np.ndarray], single: bool) -> float:
    tensors = [Tensor(a) for a in arrays]
    out = function(tensors[0] if single else tensors)
    return float(np.asarray(out.values).reshape(-1)[0])


def grad_check(
    function: Callable,
    point: Union[np.ndarray, Sequence[np.ndarray]],
    epsilon: float = 1e-5,
    atol: float = 1e-6,
    n_probes: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Largest relative error between tape gradients and central differences.

    ``function`` maps a Tensor (or a list of Tensors, when ``point`` is a list)
    to a scalar Tensor. The precision is the dtype of ``point``. The per
    component error is ``|a - n| / max(|a|, |n|, atol)``; with ``n_probes``
    only that many randomly chosen components are compared.
    """
    single = isinstance(point, np.ndarray)
    arrays = [np.array(p, copy=True) for p in ([point] if single else point)]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = function(leaves[0] if single else leaves)
        if out.size != 1:
            raise DimensionError(f"grad_check needs a scalar function, got {out.shape}")
    if len(tape):
        tape.backward(out)
    analytic = [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.values) for leaf in leaves
    ]

    probes = [(i, j) for i, a in enumerate(arrays) for j in range(a.size)]
    if n_probes is not None and n_probes < len(probes):
        picked = derive_rng(seed, "grad_check").choice(len(probes), n_probes, replace=False)
        probes = [probes[p] for p in sorted(picked)]

    worst = 0.0
    for i, j in probes:
        flat = arrays[i].reshape(-1)
        original = flat[j]
        flat[j] = original + epsilon
        f_plus = _evaluate(function, arrays, single)
        flat[j] = original - epsilon
        f_minus = _evaluate(function, arrays, single)
        flat[j] = original
        numeric = (f_plus - f_minus) / (2 * epsilon)
        exact = float(analytic[i].reshape(-1)[j])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), atol)
        worst = max(worst, error)
    return worst
