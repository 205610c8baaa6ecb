"""Reverse-mode automatic differentiation over dense numpy tensors.

A Tensor wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar walks the tape in reverse topological order
and accumulates gradients into every ``requires_grad`` leaf.  Only the
operations the two model families need are implemented; broadcasting is
supported for elementwise ops and bias adds, with gradients summed back
down to the operand shape.
"""

from __future__ import annotations

import numpy as np

from . import simplex
from .exceptions import EmptyPoolError, PoisonedGradientError, ShapeError
from .simplex import MappingKind


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense n-d value with an optional gradient tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(np.asarray(g, dtype=self.data.dtype), self.data.shape)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # -- elementwise arithmetic -----------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data + other.data, _parents=(self, other))
        if out.requires_grad:
            def bw():
                if self.requires_grad:
                    self._accum(out.grad)
                if other.requires_grad:
                    other._accum(out.grad)
            out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data * other.data, _parents=(self, other))
        if out.requires_grad:
            def bw():
                if self.requires_grad:
                    self._accum(out.grad * other.data)
                if other.requires_grad:
                    other._accum(out.grad * self.data)
            out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (_as_tensor(other, self.dtype) ** -1.0)

    def __rtruediv__(self, other):
        return _as_tensor(other, self.dtype) * (self ** -1.0)

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, _parents=(self,))
        if out.requires_grad:
            def bw():
                self._accum(out.grad * exponent * self.data ** (exponent - 1.0))
            out._backward = bw
        return out

    # -- shape ops ------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,))
        if out.requires_grad:
            def bw():
                self._accum(out.grad.reshape(self.data.shape))
            out._backward = bw
        return out

    def swapaxes(self, a: int, b: int):
        out = Tensor(np.swapaxes(self.data, a, b), _parents=(self,))
        if out.requires_grad:
            def bw():
                self._accum(np.swapaxes(out.grad, a, b))
            out._backward = bw
        return out

    # -- reductions -----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))
        if out.requires_grad:
            def bw():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.data.shape))
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- nonlinearities -------------------------------------------------

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,))
        if out.requires_grad:
            def bw():
                self._accum(out.grad * (self.data > 0.0))
            out._backward = bw
        return out

    # -- linear algebra -------------------------------------------------

    def __matmul__(self, other):
        other = _as_tensor(other, self.dtype)
        try:
            data = self.data @ other.data
        except ValueError as e:
            raise ShapeError(
                f"matmul mismatch: {self.shape} @ {other.shape}"
            ) from e
        out = Tensor(data, _parents=(self, other))
        if out.requires_grad:
            def bw():
                if self.requires_grad:
                    self._accum(out.grad @ np.swapaxes(other.data, -1, -2))
                if other.requires_grad:
                    other._accum(np.swapaxes(self.data, -1, -2) @ out.grad)
            out._backward = bw
        return out

    def masked_fill(self, keep_mask: np.ndarray, value: float):
        """Replace entries where keep_mask is False by `value` (no gradient there)."""
        keep = np.broadcast_to(np.asarray(keep_mask, dtype=bool), self.shape)
        out = Tensor(np.where(keep, self.data, value), _parents=(self,))
        if out.requires_grad:
            def bw():
                self._accum(out.grad * keep)
            out._backward = bw
        return out


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# layers / functional ops

def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W + b on the last axis."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input {x.shape} vs weight {W.shape}")
    y = x @ W
    if b is not None:
        y = y + b
    return y


def embedding_lookup(ids: np.ndarray, table: Tensor) -> Tensor:
    """Gather rows; row 0 is the frozen all-zero padding row."""
    ids = np.asarray(ids)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for table with {vocab} rows")
    out = Tensor(table.data[ids], _parents=(table,))
    if out.requires_grad:
        def bw():
            g = np.zeros_like(table.data)
            np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.shape[1]))
            g[0] = 0.0  # padding row stays frozen
            table._accum(g)
        out._backward = bw
    return out


def masked_mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of x[..., n, d] over the n axis, restricted to mask[..., n]."""
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise EmptyPoolError("masked mean over a fully masked axis")
    w = (mask / counts[..., None]).astype(x.dtype)
    return (x * Tensor(w[..., None])).sum(axis=-2)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * ((var + eps) ** -0.5) * gain + bias


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep.astype(x.dtype))


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-element binary cross entropy in the stable log-sum-exp form."""
    y = np.asarray(labels, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"labels {y.shape} vs logits {logits.shape}")
    s = logits.data
    loss = np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))
    out = Tensor(loss, _parents=(logits,))
    if out.requires_grad:
        def bw():
            sig = 1.0 / (1.0 + np.exp(-s))
            logits._accum(out.grad * (sig - y))
        out._backward = bw
    return out


def attention_weights(scores: Tensor, kind: MappingKind) -> Tensor:
    """Apply a simplex mapping along the last axis, inside the tape.

    Forward and backward both run in float64 and cast back to the
    score dtype.
    """
    p64 = simplex.apply_mapping_nd(scores.data.astype(np.float64), kind)
    out = Tensor(p64.astype(scores.dtype), _parents=(scores,))
    if out.requires_grad:
        def bw():
            dz = simplex.mapping_backward_nd(p64, out.grad.astype(np.float64), kind)
            scores._accum(dz.astype(scores.dtype))
        out._backward = bw
    return out


def sigmoid_np(s: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid on raw arrays."""
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Bias-corrected Adam over a dict of named parameter Tensors."""

    def __init__(self, params: dict[str, Tensor], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        for name, p in self.params.items():
            g = p.grad
            if g is not None and np.any(np.isnan(g)):
                raise PoisonedGradientError(f"NaN gradient in parameter {name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f, tensors: dict[str, Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `f` is a zero-argument callable returning a scalar Tensor built from
    the given tensors (which should be float64 for a sharp comparison).
    """
    for p in tensors.values():
        p.zero_grad()
    out = f()
    out.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in tensors.items()}
    worst = 0.0
    for name, p in tensors.items():
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            num[i] = (hi - lo) / (2.0 * eps)
        a = analytic[name].reshape(-1)
        err = np.abs(a - num) / (1.0 + np.abs(a) + np.abs(num))
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
