"""Minimal dense-tensor reverse-mode differentiation kernels.

Float64 numpy arrays wrapped in `Tensor` nodes; each operation records a
backward closure and its parents, and `backward()` runs the reverse
topological sweep. Gradients accumulate across backward passes until
`zero_grad` — callers that reuse parameters between steps must zero them.

Only the primitives the score networks need are provided: broadcasting
add/mul, matmul, transpose/reshape, concat/split, tanh/silu, layer-norm,
softmax, dropout, and reductions, plus an adaptive-moment optimizer.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "add", "sub", "mul", "scale", "neg", "matmul", "transpose", "reshape",
    "concat", "split", "tanh", "silu", "layer_norm", "softmax", "dropout",
    "tsum", "tmean", "square", "mse", "attention",
    "Adam",
]


class Tensor:
    """A dense array with an optional gradient and a recorded backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None) -> None:
        """Reverse sweep from this node; gradients accumulate into leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()

        def visit(node: Tensor):
            stack = [(node, iter(node._parents))]
            seen.add(id(node))
            while stack:
                cur, it = stack[-1]
                advanced = False
                for p in it:
                    if id(p) not in seen:
                        seen.add(id(p))
                        stack.append((p, iter(p._parents)))
                        advanced = True
                        break
                if not advanced:
                    order.append(cur)
                    stack.pop()

        visit(self)
        self._accumulate(np.asarray(grad, dtype=float))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
        out.requires_grad = True
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return _make(c * a.data, (a,), lambda g: a._accumulate(c * g))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accumulate(_unbroadcast(ga, a.shape))
        b._accumulate(_unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return _make(
        np.transpose(a.data, axes), (a,),
        lambda g: a._accumulate(np.transpose(g, inv)),
    )


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _make(
        a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(old))
    )


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            p._accumulate(gp)

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def split(a, sizes, axis: int = -1) -> list[Tensor]:
    a = _as_tensor(a)
    splits = np.cumsum(sizes)[:-1]
    pieces = np.split(a.data, splits, axis=axis)
    outs = []
    for i, piece in enumerate(pieces):
        lo = 0 if i == 0 else int(splits[i - 1])

        def backward(g, lo=lo, w=piece.shape[axis]):
            full = np.zeros_like(a.data)
            idx = [slice(None)] * full.ndim
            idx[axis] = slice(lo, lo + w)
            full[tuple(idx)] = g
            a._accumulate(full)

        outs.append(_make(piece, (a,), backward))
    return outs


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: a._accumulate(g * (1.0 - y**2)))


def silu(a) -> Tensor:
    a = _as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    y = a.data * sig

    def backward(g):
        a._accumulate(g * (sig * (1.0 + a.data * (1.0 - sig))))

    return _make(y, (a,), backward)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        bias._accumulate(_unbroadcast(g, bias.shape))
        gx = g * gain.data
        term = gx - gx.mean(axis=-1, keepdims=True) \
            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        a._accumulate(term * inv)

    return _make(xhat * gain.data + bias.data, (a, gain, bias), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accumulate(y * (g - dot))

    return _make(y, (a,), backward)


def dropout(a, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rng is None (inference mode)."""
    a = _as_tensor(a)
    if rng is None or p <= 0.0:
        return a
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * mask, (a,), lambda g: a._accumulate(g * mask))


def tsum(a) -> Tensor:
    a = _as_tensor(a)
    return _make(
        np.array(a.data.sum()), (a,),
        lambda g: a._accumulate(np.broadcast_to(g, a.shape).copy()),
    )


def tmean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    return _make(
        np.array(a.data.mean()), (a,),
        lambda g: a._accumulate(np.broadcast_to(g / n, a.shape).copy()),
    )


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data**2, (a,), lambda g: a._accumulate(2.0 * g * a.data))


def mse(pred, target) -> Tensor:
    """Mean over leading axes of the summed squared last-axis error."""
    diff = sub(pred, target)
    n_rows = max(diff.data.size // diff.shape[-1], 1)
    return scale(tsum(square(diff)), 1.0 / n_rows)


def attention(q, k, v, num_heads: int, rng=None, dropout_p: float = 0.0) -> Tensor:
    """Multi-head scaled dot-product attention over (..., tokens, hidden)."""
    T, H = q.shape[-2], q.shape[-1]
    if H % num_heads:
        raise ValueError("hidden dim must divide evenly into heads")
    hd = H // num_heads
    lead = q.shape[:-2]

    def heads(x):
        x = reshape(x, (*lead, T, num_heads, hd))
        return transpose(x, (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2))

    qh, kh, vh = heads(q), heads(k), heads(v)
    logits = scale(matmul(qh, transpose(kh, (*range(len(lead)), len(lead), len(lead) + 2, len(lead) + 1))), 1.0 / np.sqrt(hd))
    w = softmax(logits, axis=-1)
    w = dropout(w, dropout_p, rng)
    out = matmul(w, vh)
    out = transpose(out, (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2))
    return reshape(out, (*lead, T, H))


class Adam:
    """Adaptive-moment first-order optimizer over a list of parameter Tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
