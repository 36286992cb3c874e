"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Each operation records vector-Jacobian closures on its output tensor;
``Tensor.backward`` walks the graph in reverse topological order and
accumulates exact gradients into every tensor created with
``requires_grad=True``.  Only the operations the policy network needs are
implemented: dense algebra, the usual nonlinearities, strided 2D and circular
1D convolution, gather/scatter for embeddings, and a masked log-softmax whose
masked entries carry exactly zero probability.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

_GRAD_ENABLED = True


class no_grad:
    """Context manager dropping graph construction (inference-only forwards)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "parents", "vjps", "requires_grad")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        vjps: tuple[Callable[[Array], Array], ...] = (),
        requires_grad: bool = False,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        if not _GRAD_ENABLED:
            # Graph construction is off; explicit leaf flags are preserved.
            parents = ()
            vjps = ()
        self.parents = parents
        self.vjps = vjps
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                if not parent.requires_grad:
                    continue
                g = vjp(node.grad)
                # Accumulation always rebinds, so sharing g's memory is safe.
                parent.grad = g if parent.grad is None else parent.grad + g

    # Operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __truediv__(self, scalar: float):
        return mul(self, _const(1.0 / float(scalar)))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _const(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (reversing numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(
        a.data + b.data,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(g, b.data.shape),
        ),
    )
    return out


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, parents=(a,), vjps=(lambda g: -g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.data * b.data,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g * b.data, a.data.shape),
            lambda g: _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.data @ b.data,
        parents=(a, b),
        vjps=(
            lambda g: g @ b.data.T,
            lambda g: a.data.T @ g,
        ),
    )


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return Tensor(out_data, parents=(a,), vjps=(lambda g: g * out_data,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), parents=(a,), vjps=(lambda g: g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return Tensor(out_data, parents=(a,), vjps=(lambda g: g * (1.0 - out_data * out_data),))


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out_data, parents=(a,), vjps=(lambda g: g * out_data * (1.0 - out_data),))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0.0
    return Tensor(np.where(keep, a.data, 0.0), parents=(a,), vjps=(lambda g: g * keep,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    return Tensor(a.data.reshape(shape), parents=(a,), vjps=(lambda g: g.reshape(old),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))
    return Tensor(
        a.data.transpose(axes), parents=(a,), vjps=(lambda g: g.transpose(inverse),)
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i: int):
        def vjp(g: Array) -> Array:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]

        return vjp

    return Tensor(
        np.concatenate(datas, axis=axis),
        parents=tuple(tensors),
        vjps=tuple(make_vjp(i) for i in range(len(tensors))),
    )


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Static slice along one axis."""
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def vjp(g: Array) -> Array:
        full = np.zeros_like(a.data)
        full[sl] = g
        return full

    return Tensor(a.data[sl], parents=(a,), vjps=(vjp,))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: Array) -> Array:
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).copy()

    return Tensor(out_data, parents=(a,), vjps=(vjp,))


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis) / float(n)


def gather_rows(table: Tensor, idx: Array) -> Tensor:
    """Row lookup ``table[idx]`` for an integer index vector (embeddings)."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g: Array) -> Array:
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return full

    return Tensor(table.data[idx], parents=(table,), vjps=(vjp,))


def gather_flat(a: Tensor, idx: Array) -> Tensor:
    """Select entries of the flattened tensor: out[i] = a.flat[idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.data.shape

    def vjp(g: Array) -> Array:
        full = np.zeros(a.data.size)
        np.add.at(full, idx, g)
        return full.reshape(shape)

    return Tensor(a.data.reshape(-1)[idx], parents=(a,), vjps=(vjp,))


def pick(a: Tensor, idx: Array) -> Tensor:
    """Select one entry per row: out[n] = a[n, idx[n]]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])

    def vjp(g: Array) -> Array:
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return full

    return Tensor(a.data[rows, idx], parents=(a,), vjps=(vjp,))


def where_const(mask: Array, a: Tensor, fill: float) -> Tensor:
    """out = mask ? a : fill, with gradient flowing only through ``a``."""
    mask = np.asarray(mask, dtype=bool)
    return Tensor(
        np.where(mask, a.data, fill), parents=(a,), vjps=(lambda g: g * mask,)
    )


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor(np.clip(a.data, lo, hi), parents=(a,), vjps=(lambda g: g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data  # ties route gradient to the first argument
    return Tensor(
        np.minimum(a.data, b.data),
        parents=(a, b),
        vjps=(lambda g: g * take_a, lambda g: g * ~take_a),
    )


def masked_log_softmax(logits: Tensor, mask: Array) -> Tensor:
    """Log-probabilities with illegal entries at exactly -inf (probability 0).

    ``mask`` is a boolean legality array broadcastable to ``logits``; every
    row must keep at least one legal entry.
    """
    mask = np.asarray(mask, dtype=bool)
    neg_inf = np.where(mask, logits.data, -np.inf)
    m = np.max(neg_inf, axis=-1, keepdims=True)
    z = neg_inf - m  # -inf on masked entries
    e = np.exp(z)
    s = e.sum(axis=-1, keepdims=True)
    logp = z - np.log(s)
    p = e / s

    def vjp(g: Array) -> Array:
        return (g - p * g.sum(axis=-1, keepdims=True)) * mask

    return Tensor(logp, parents=(logits,), vjps=(vjp,))


def conv2d(x: Tensor, kern: Tensor, stride: int = 1) -> Tensor:
    """Valid-padding strided 2D convolution: (N,C,H,W) x (F,C,kh,kw) -> (N,F,Ho,Wo)."""
    n, c, h, wdt = x.data.shape
    f, c2, kh, kw = kern.data.shape
    assert c == c2, "channel mismatch"
    ho = (h - kh) // stride + 1
    wo = (wdt - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = kern.data.reshape(f, c * kh * kw).T
    out = (cols @ wmat).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def vjp_x(g: Array) -> Array:
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        gcols = (g2 @ wmat.T).reshape(n, ho, wo, c, kh, kw)
        gx = np.zeros_like(x.data)
        for di in range(kh):
            for dj in range(kw):
                gx[:, :, di : di + ho * stride : stride, dj : dj + wo * stride : stride] += (
                    gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
                )
        return gx

    def vjp_k(g: Array) -> Array:
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        return (cols.T @ g2).T.reshape(f, c, kh, kw)

    return Tensor(out, parents=(x, kern), vjps=(vjp_x, vjp_k))


def conv1d_circular(x: Tensor, kern: Tensor) -> Tensor:
    """Circular (wrap-around) 1D convolution: (N,C,L) x (F,C,k) -> (N,F,L)."""
    n, c, length = x.data.shape
    f, c2, k = kern.data.shape
    assert c == c2, "channel mismatch"
    xp = np.concatenate([x.data, x.data[:, :, : k - 1]], axis=2) if k > 1 else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (N, C, L, k)
    cols = win.transpose(0, 2, 1, 3).reshape(n * length, c * k)
    wmat = kern.data.reshape(f, c * k).T
    out = (cols @ wmat).reshape(n, length, f).transpose(0, 2, 1)

    def vjp_x(g: Array) -> Array:
        g2 = g.transpose(0, 2, 1).reshape(n * length, f)
        gcols = (g2 @ wmat.T).reshape(n, length, c, k)
        gxp = np.zeros((n, c, length + k - 1))
        for dk in range(k):
            gxp[:, :, dk : dk + length] += gcols[:, :, :, dk].transpose(0, 2, 1)
        gx = gxp[:, :, :length]
        if k > 1:
            gx = gx.copy()
            gx[:, :, : k - 1] += gxp[:, :, length:]
        return gx

    def vjp_k(g: Array) -> Array:
        g2 = g.transpose(0, 2, 1).reshape(n * length, f)
        return (cols.T @ g2).T.reshape(f, c, k)

    return Tensor(out, parents=(x, kern), vjps=(vjp_x, vjp_k))


def numeric_gradient(
    f: Callable[[], float], param: Tensor, coords: Sequence[tuple[int, ...]], step: float = 1e-4
) -> dict[tuple[int, ...], float]:
    """Central finite differences of ``f`` w.r.t. selected ``param`` coordinates."""
    out = {}
    for coord in coords:
        orig = param.data[coord]
        param.data[coord] = orig + step
        up = f()
        param.data[coord] = orig - step
        down = f()
        param.data[coord] = orig
        out[coord] = (up - down) / (2.0 * step)
    return out


def relative_error(a: float, b: float, eps: float = 1e-8) -> float:
    denom = max(abs(a), abs(b), eps)
    return abs(a - b) / denom
