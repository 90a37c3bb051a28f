"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Big enough for small MLPs, a GRU cell and softmax cross-entropy; nothing more.
Operations executed inside a ``with Tape():`` block are recorded in execution
order, which is already a topological order, so the backward pass is a single
reversed sweep over the record. Outside a tape, the same functions run
forward-only (used for evaluation and target networks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operands do not conform."""


class Tensor:
    """A float64 ndarray that participates in tape recording.

    Tensors hash by identity; gradient accumulators are keyed on the Tensor
    object itself.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Execution-ordered record of primitive operations.

    Each entry is ``(out, inputs, backward)`` where ``backward`` maps the
    output gradient to one gradient (or None) per input. ``gradients`` starts
    a fresh accumulator dict on every call; nothing carries over between
    backward passes.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._ops)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        self._ops.append((out, inputs, backward))

    def gradients(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        """Backward sweep from a scalar root; returns accumulators by tensor."""
        if root.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        grads: dict[Tensor, np.ndarray] = {root: np.ones_like(root.data)}
        for out, inputs, backward in reversed(self._ops):
            gout = grads.get(out)
            if gout is None:
                continue  # not on a path to the root
            for tensor, gin in zip(inputs, backward(gout)):
                if gin is None:
                    continue
                acc = grads.get(tensor)
                grads[tensor] = gin if acc is None else acc + gin
        return grads


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward) -> Tensor:
    if _TAPE_STACK:
        _TAPE_STACK[-1].record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product, or batched product of stacks with equal batch dims."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), backward)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` as a single fused record."""
    if x.data.ndim != 2 or weights.data.ndim != 2:
        raise ShapeError(f"dense expects 2-D input/weights, got {x.shape}, {weights.shape}")
    if x.data.shape[1] != weights.data.shape[0] or bias.data.shape != (weights.data.shape[1],):
        raise ShapeError(
            f"dense mismatch: x{x.shape} @ W{weights.shape} + b{bias.shape}"
        )
    out = Tensor(x.data @ weights.data + bias.data)

    def backward(g):
        return g @ weights.data.T, x.data.T @ g, g.sum(axis=0)

    return _record(out, (x, weights, bias), backward)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    return _record(out, (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def elu(a: Tensor) -> Tensor:
    y = np.where(a.data > 0.0, a.data, np.expm1(a.data))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * np.where(a.data > 0.0, 1.0, y + 1.0),))


def absval(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    return _record(out, (a,), lambda g: (g * np.sign(a.data),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())
    return _record(out, (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def take_per_row(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select ``a[i, indices[i]]`` for each row; backward scatters into place."""
    idx = np.asarray(indices)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ShapeError(f"take_per_row: a{a.shape}, indices{idx.shape}")
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, idx])

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[rows, idx] = g
        return (ga,)

    return _record(out, (a,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood with log-sum-exp stabilization.

    Gradient is ``(softmax - one_hot) / batch``.
    """
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.shape}")
    batch, classes = logits.data.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    logsumexp = np.log(exp.sum(axis=1))
    rows = np.arange(batch)
    out = Tensor(np.mean(logsumexp - shifted[rows, labels]))

    def backward(g):
        glogits = probs.copy()
        glogits[rows, labels] -= 1.0
        return (g * glogits / batch,)

    return _record(out, (logits,), backward)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Forward-only stabilized softmax for plain arrays."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# GRU cell
# ---------------------------------------------------------------------------

@dataclass
class GruCellParams:
    """Update/reset/candidate weights of one GRU cell.

    ``w_*`` are input-to-hidden, ``u_*`` hidden-to-hidden, one bias per gate.
    """

    w_update: Tensor
    u_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor

    def tensors(self) -> list[Tensor]:
        return [
            self.w_update, self.u_update, self.b_update,
            self.w_reset, self.u_reset, self.b_reset,
            self.w_cand, self.u_cand, self.b_cand,
        ]

    @property
    def hidden_size(self) -> int:
        return self.u_update.shape[0]

    @staticmethod
    def create(rng: np.random.Generator, input_size: int, hidden_size: int) -> "GruCellParams":
        def w(fan_in, fan_out):
            return Tensor(glorot(rng, fan_in, fan_out))

        zeros = lambda: Tensor(np.zeros(hidden_size))
        return GruCellParams(
            w_update=w(input_size, hidden_size), u_update=w(hidden_size, hidden_size), b_update=zeros(),
            w_reset=w(input_size, hidden_size), u_reset=w(hidden_size, hidden_size), b_reset=zeros(),
            w_cand=w(input_size, hidden_size), u_cand=w(hidden_size, hidden_size), b_cand=zeros(),
        )


def gru_step(x: Tensor, h_prev: Tensor, params: GruCellParams) -> Tensor:
    """One GRU update; components stay in (-1, 1) when ``h_prev`` does."""
    hid = params.hidden_size
    if x.data.ndim != 2 or h_prev.data.shape != (x.data.shape[0], hid):
        raise ShapeError(f"gru_step: x{x.shape}, h_prev{h_prev.shape}, hidden={hid}")
    z = sigmoid(dense(x, params.w_update, params.b_update) + matmul(h_prev, params.u_update))
    r = sigmoid(dense(x, params.w_reset, params.b_reset) + matmul(h_prev, params.u_reset))
    cand = tanh(dense(x, params.w_cand, params.b_cand) + matmul(mul(r, h_prev), params.u_cand))
    one_minus_z = 1.0 - z
    return add(mul(one_minus_z, cand), mul(z, h_prev))


# ---------------------------------------------------------------------------
# initialization and optimizers
# ---------------------------------------------------------------------------

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def sgd_step(params: list[Tensor], grads: dict[Tensor, np.ndarray], lr: float) -> None:
    """In-place ``p <- p - lr * g``; parameters with no gradient stay put."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for p in params:
        g = grads.get(p)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        p.data -= lr * g


class Sgd:
    """Stateless gradient descent wrapped in the optimizer interface."""

    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        sgd_step(self.params, grads, self.lr)


class Adam:
    """Adam with bias correction; per-parameter moment arrays."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {p: np.zeros_like(p.data) for p in params}
        self._v = {p: np.zeros_like(p.data) for p in params}

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m = self._m[p]
            v = self._v[p]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(grads: dict[Tensor, np.ndarray], params: list[Tensor], max_norm: float) -> float:
    """Scale the listed gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    present = [p for p in params if p in grads]
    for p in present:
        g = grads[p]
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in present:
            grads[p] = grads[p] * scale
    return norm
