"""Dense float64 tensors with taped reverse-mode differentiation, plus Adam.

The graph is define-by-run: opening a :class:`Tape` makes it the active graph
for the current thread, and every primitive whose operands require gradients
appends one operation record. ``Tape.backward`` replays the records in
reverse, which is a valid reverse-topological order because operands always
exist before the outputs built from them, so each node is visited exactly
once and two identical runs produce bit-identical gradients.

With no tape open the same primitives run as plain numpy compute (inference
mode, nothing is recorded). A tape and the tensors recorded on it belong to a
single thread; independent tapes may live on independent threads.
"""

from __future__ import annotations

import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes incompatible with a primitive's contract."""


class DomainError(ValueError):
    """Input outside a primitive's mathematical domain (sqrt/log of negatives)."""


_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def active_tape():
    """The innermost open Tape on the current thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Topologically ordered record of operations for one backward pass.

    Intended pattern: build the forward graph inside ``with Tape() as tape:``,
    then call ``tape.backward(loss)``. Gradients accumulate into ``.grad``
    buffers (``+=``), so clear parameter grads before reusing parameters on a
    fresh tape. Calling ``backward`` twice on the same tape accumulates twice.
    """

    def __init__(self):
        self.records = []  # (output, inputs, backward_rule)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def backward(self, loss: "Tensor") -> None:
        """Propagate d(loss)/d(node) through the recorded graph.

        ``loss`` must be a scalar produced on this tape. Leaf tensors with
        ``requires_grad`` end up with fully populated ``.grad`` arrays.
        """
        if not isinstance(loss, Tensor):
            raise TypeError(f"backward: expected Tensor, got {type(loss).__name__}")
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        if not any(rec[0] is loss for rec in self.records):
            raise ValueError("backward: loss was not produced on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, rule in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            for t, gi in zip(inputs, rule(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gi


class Tensor:
    """A dense float64 array, optionally participating in the active tape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values as a fresh leaf that does not require gradients."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    # shape ops -------------------------------------------------------------

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    # reductions / elementwise ----------------------------------------------

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def sqrt(self):
        return sqrt(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def softmax(self, axis=-1):
        return softmax(self, axis)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple[Tensor, ...], rule) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, inputs, rule))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise binary ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def subtract(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("subtract", a, b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def multiply(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("multiply", a, b)
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast per numpy matmul rules."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = Tensor(a.data @ b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), rule)


# convolution ----------------------------------------------------------------


def conv1d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` (B, C_in, L) with kernels ``w`` (C_out, C_in, K).

    Output length is ``(L + 2 * padding - K) // stride + 1``.
    """
    x, w = _lift(x), _lift(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: need 3-d input and kernel, got {x.shape} and {w.shape}")
    bsz, cin, length = x.shape
    cout, cin_w, ksz = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d: channel mismatch between input {x.shape} and kernel {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv1d: bad stride/padding ({stride}, {padding})")
    lpad = length + 2 * padding
    lout = (lpad - ksz) // stride + 1
    if lpad < ksz or lout < 1:
        raise ShapeError(
            f"conv1d: kernel {w.shape} does not fit input {x.shape} with padding {padding}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, ksz, axis=2)[:, :, ::stride, :]  # (B, Cin, Lout, K)
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(bsz * lout, cin * ksz)
    wmat = w.data.reshape(cout, cin * ksz)
    out = Tensor((cols @ wmat.T).reshape(bsz, lout, cout).transpose(0, 2, 1))

    def rule(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(bsz * lout, cout)
        gw = (g2.T @ cols).reshape(cout, cin, ksz)
        gwin = (g2 @ wmat).reshape(bsz, lout, cin, ksz).transpose(0, 2, 1, 3)
        gxp = np.zeros((bsz, cin, lpad))
        for k in range(ksz):
            gxp[:, :, k : k + stride * lout : stride] += gwin[:, :, :, k]
        gx = gxp[:, :, padding : padding + length] if padding else gxp
        return gx, gw

    return _record(out, (x, w), rule)


# shape ops ------------------------------------------------------------------


def transpose(x, axes=None) -> Tensor:
    x = _lift(x)
    if axes is not None and sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} is not a permutation for shape {x.shape}")
    out = Tensor(np.transpose(x.data, axes))
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _record(out, (x,), lambda g: (np.transpose(g, inv),))


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def slice_(x, key) -> Tensor:
    """Basic indexing (ints, slices, Ellipsis); each element taken at most once."""
    x = _lift(x)
    try:
        out = Tensor(x.data[key])
    except IndexError:
        raise ShapeError(f"slice: index {key!r} out of range for shape {x.shape}") from None

    def rule(g):
        gx = np.zeros_like(x.data)
        gx[key] += g
        return (gx,)

    return _record(out, (x,), rule)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[t.shape for t in tensors]} do not align on axis {axis}"
        ) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record(out, tuple(tensors), rule)


# reductions -----------------------------------------------------------------


def _norm_axis(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None) -> Tensor:
    x = _lift(x)
    axes = _norm_axis(axis, x.ndim)
    out = Tensor(x.data.sum(axis=axes))

    def rule(g):
        gg = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gg, x.shape),)

    return _record(out, (x,), rule)


def mean(x, axis=None) -> Tensor:
    x = _lift(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = Tensor(x.data.mean(axis=axes))

    def rule(g):
        gg = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gg / count, x.shape),)

    return _record(out, (x,), rule)


# elementwise unary ----------------------------------------------------------


def sqrt(x) -> Tensor:
    """Elementwise square root; the derivative at exactly 0 is taken as 0."""
    x = _lift(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: negative input")
    y = np.sqrt(x.data)
    out = Tensor(y)

    def rule(g):
        return (np.where(x.data > 0, 0.5 * g / np.where(y > 0, y, 1.0), 0.0),)

    return _record(out, (x,), rule)


def exp(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.exp(x.data))
    return _record(out, (x,), lambda g: (g * out.data,))


def log(x) -> Tensor:
    x = _lift(x)
    if np.any(x.data <= 0):
        raise DomainError("log: non-positive input")
    out = Tensor(np.log(x.data))
    return _record(out, (x,), lambda g: (g / x.data,))


def sigmoid(x) -> Tensor:
    x = _lift(x)
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * out.data * (1.0 - out.data),))


def tanh(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.tanh(x.data))
    return _record(out, (x,), lambda g: (g * (1.0 - out.data * out.data),))


def relu(x) -> Tensor:
    x = _lift(x)
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, (x,), lambda g: (g * (x.data > 0),))


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; rows sum to 1."""
    x = _lift(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def rule(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), rule)


# optimizer ------------------------------------------------------------------


class AdamState:
    """Bias-corrected Adam over a fixed parameter list.

    Moment buffers are allocated lazily on the first step and must keep
    matching the parameter shapes on every later step.
    """

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None


def adam_step(state: AdamState, params: list[Tensor]) -> None:
    """One in-place Adam update; parameter grads are cleared afterward."""
    if state.m is None:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(params) != len(state.m):
        raise ValueError(f"adam_step: expected {len(state.m)} parameters, got {len(params)}")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient")
        if p.grad.shape != state.m[i].shape:
            raise ShapeError(
                f"adam_step: parameter {i} shape {p.grad.shape} does not match "
                f"moment buffer {state.m[i].shape}"
            )
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.grad = None
