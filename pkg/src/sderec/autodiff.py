"""Minimal reverse-mode autodiff over float64 numpy arrays.

An eager tape: every op returns a Tensor holding its value, its parents, and
a closure that routes the incoming gradient to those parents. backward() does
an iterative topological sweep, so deep GCN/MLP graphs do not hit the Python
recursion limit. Broadcasting in elementwise ops is handled by summing the
upstream gradient back down to each parent's shape.
"""

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("value", "grad", "parents", "bwd", "requires_grad")

    def __init__(self, value, parents=(), bwd=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(p for p in parents if isinstance(p, Tensor))
        self.bwd = bwd
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in self.parents
        )

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def const(value) -> Tensor:
    return Tensor(value)


def param(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else const(x)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g, dtype=np.float64), t.value.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into .grad of every reachable tensor."""
    if root.value.size != 1:
        raise ValueError("backward() expects a scalar root")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node.bwd is not None and node.grad is not None:
            node.bwd(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value + b.value, (a, b))
    out.bwd = lambda g: (_accum(a, g), _accum(b, g))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value - b.value, (a, b))
    out.bwd = lambda g: (_accum(a, g), _accum(b, -g))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value * b.value, (a, b))
    out.bwd = lambda g: (_accum(a, g * b.value), _accum(b, g * a.value))
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value / b.value, (a, b))

    def bwd(g):
        _accum(a, g / b.value)
        _accum(b, -g * a.value / (b.value * b.value))

    out.bwd = bwd
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.value, (a,))
    out.bwd = lambda g: _accum(a, -g)
    return out


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out = Tensor(a.value * s, (a,))
    out.bwd = lambda g: _accum(a, g * s)
    return out


def masked_recip(a) -> Tensor:
    """1/x where x != 0, exactly 0 where x == 0 (zero gradient there too)."""
    a = _as_tensor(a)
    nz = a.value != 0
    val = np.zeros_like(a.value)
    val[nz] = 1.0 / a.value[nz]
    out = Tensor(val, (a,))
    out.bwd = lambda g: _accum(a, -g * val * val)
    return out


# ---------------------------------------------------------------------------
# structural ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value @ b.value, (a, b))

    def bwd(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    out.bwd = bwd
    return out


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.value.T, (a,))
    out.bwd = lambda g: _accum(a, g.T)
    return out


def spmm(adj, x, adj_t=None) -> Tensor:
    """Sparse @ dense with a constant CSR matrix; pass adj_t=adj if symmetric."""
    x = _as_tensor(x)
    out = Tensor(adj.matmul(x.value), (x,))

    def bwd(g):
        at = adj_t if adj_t is not None else adj.transpose()
        _accum(x, at.matmul(np.ascontiguousarray(g)))

    out.bwd = bwd
    return out


def gather_rows(x, idx) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.value[idx], (x,))

    def bwd(g):
        if not x.requires_grad:
            return
        buf = np.zeros_like(x.value)
        kernels.scatter_add_rows(buf, idx, np.ascontiguousarray(g))
        _accum(x, buf)

    out.bwd = bwd
    return out


def rows(x, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.value[start:stop], (x,))

    def bwd(g):
        buf = np.zeros_like(x.value)
        buf[start:stop] = g
        _accum(x, buf)

    out.bwd = bwd
    return out


def vstack(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(np.concatenate([a.value, b.value], axis=0), (a, b))
    na = a.value.shape[0]

    def bwd(g):
        _accum(a, g[:na])
        _accum(b, g[na:])

    out.bwd = bwd
    return out


def hconcat(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=1), parts)
    widths = [p.value.shape[1] for p in parts]

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, off : off + w])
            off += w

    out.bwd = bwd
    return out


def take_diag(x) -> Tensor:
    """Diagonal of a square matrix as a column vector."""
    x = _as_tensor(x)
    n = x.value.shape[0]
    out = Tensor(np.diagonal(x.value).reshape(n, 1).copy(), (x,))

    def bwd(g):
        buf = np.zeros_like(x.value)
        np.fill_diagonal(buf, g[:, 0])
        _accum(x, buf)

    out.bwd = bwd
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _as_tensor(a)
    pos = a.value >= 0
    out = Tensor(np.where(pos, a.value, slope * a.value), (a,))
    out.bwd = lambda g: _accum(a, g * np.where(pos, 1.0, slope))
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.value)
    out = Tensor(y, (a,))
    out.bwd = lambda g: _accum(a, g * (1.0 - y * y))
    return out


def softplus(a) -> Tensor:
    """log(1 + e^x), stable for large |x|."""
    a = _as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.value), (a,))
    # sigmoid via tanh keeps both tails finite
    out.bwd = lambda g: _accum(a, g * 0.5 * (1.0 + np.tanh(0.5 * a.value)))
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.value)
    out = Tensor(y, (a,))
    out.bwd = lambda g: _accum(a, g * y)
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.value), (a,))
    out.bwd = lambda g: _accum(a, g / a.value)
    return out


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    y = np.sqrt(a.value)
    out = Tensor(y, (a,))

    def bwd(g):
        safe = np.where(y > 0, y, 1.0)
        _accum(a, np.where(y > 0, g * 0.5 / safe, 0.0))

    out.bwd = bwd
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.value.sum(), (a,))
    out.bwd = lambda g: _accum(a, np.broadcast_to(g, a.value.shape))
    return out


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size
    out = Tensor(a.value.mean(), (a,))
    out.bwd = lambda g: _accum(a, np.broadcast_to(g / n, a.value.shape))
    return out


def row_sum(a) -> Tensor:
    """Sum over axis 1 with keepdims, (B, d) -> (B, 1)."""
    a = _as_tensor(a)
    out = Tensor(a.value.sum(axis=1, keepdims=True), (a,))
    out.bwd = lambda g: _accum(a, np.broadcast_to(g, a.value.shape))
    return out


def rowdot(a, b) -> Tensor:
    """Per-row inner product, (B, d) x (B, d) -> (B, 1)."""
    return row_sum(mul(a, b))


def logsumexp_rows(a) -> Tensor:
    """Stable log sum exp over axis 1 with keepdims; the max is detached."""
    a = _as_tensor(a)
    m = a.value.max(axis=1, keepdims=True)
    return add(log(row_sum(exp(sub(a, const(m))))), const(m))
