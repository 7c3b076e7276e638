"""A small reverse-mode automatic differentiation engine on numpy arrays.

Tensors record the operation that produced them; ``Tensor.backward`` walks
the recorded graph once in reverse topological order and accumulates
gradients into every tensor that requires them. Only the kernels needed by
the toy vocoder and detectors are provided.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        order = _topological(self)
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if seed.shape != self.data.shape:
            raise ValueError("seed gradient shape mismatch")
        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # interior nodes keep their .grad; callers normally only read leaves

    # operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


_grad_enabled = True


class no_grad:
    """Context manager that stops graph recording (for inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev, _grad_enabled = _grad_enabled, False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _make(data, parents, backward, op) -> Tensor:
    parents = tuple(parents)
    req = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None, op)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))
    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), backward, "mul")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: _accum(x, 2.0 * x.data * g), "square")


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: _accum(x, g / x.data), "log")


def abs_(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: _accum(x, g * np.sign(x.data)), "abs")


def sqrt(x) -> Tensor:
    """Square root; the gradient at exactly zero is taken as zero."""
    x = as_tensor(x)
    y = np.sqrt(x.data)

    def backward(g):
        safe = np.where(y > 0, y, 1.0)
        _accum(x, np.where(y > 0, 0.5 * g / safe, 0.0))
    return _make(y, (x,), backward, "sqrt")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: _accum(x, g * (1.0 - y * y)), "tanh")


def leaky_relu(x, slope: float = 0.1) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, slope * x.data), (x,),
                 lambda g: _accum(x, np.where(pos, g, slope * g)), "leaky_relu")


def maximum(x, floor: float) -> Tensor:
    """``max(x, floor)`` against a constant; no gradient where the floor is active."""
    x = as_tensor(x)
    keep = x.data > floor
    return _make(np.where(keep, x.data, floor), (x,), lambda g: _accum(x, np.where(keep, g, 0.0)), "maximum")


# ---------------------------------------------------------------------------
# reductions and shape


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))
    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g / n, x.shape))
    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: _accum(x, g.reshape(x.shape)), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: _accum(x, np.transpose(g, inv)), "transpose")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (int, slice)) for p in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        _accum(x, full)
    return _make(x.data[index], (x,), backward, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                _accum(t, np.take(g, np.arange(lo, hi), axis=axis))
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            ga = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(ga, b.shape))
    return _make(a.data @ b.data, (a, b), backward, "matmul")


def affine(x, w, b=None) -> Tensor:
    """``x @ w + b`` along the last axis of ``x``."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def linear_map(x, m) -> Tensor:
    """Apply a fixed (dense or sparse) matrix ``m`` of shape (out, in) along the last axis."""
    x = as_tensor(x)
    lead = x.shape[:-1]
    n_in = x.shape[-1]
    if m.shape[1] != n_in:
        raise ValueError(f"linear map expects {m.shape[1]} inputs, got {n_in}")
    flat = x.data.reshape(-1, n_in)
    if sp.issparse(m):
        y = np.asarray((m @ flat.T).T)
    else:
        y = flat @ m.T

    def backward(g):
        g2 = g.reshape(-1, m.shape[0])
        gx = np.asarray((m.T @ g2.T).T) if sp.issparse(m) else g2 @ m
        _accum(x, gx.reshape(x.shape))
    return _make(y.reshape(lead + (m.shape[0],)), (x,), backward, "linear_map")


# ---------------------------------------------------------------------------
# signal kernels


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation: x (B, Cin, L), w (Cout, Cin, K), b (Cout,)."""
    x, w = as_tensor(x), as_tensor(w)
    bsz, cin, length = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ValueError(f"conv1d: input has {cin} channels, weight expects {cin_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    lp = xp.shape[2]
    if lp < k:
        raise ValueError("conv1d: input shorter than kernel")
    lout = (lp - k) // stride + 1
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :lout]
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(bsz * lout, cin * k)
    w2 = w.data.reshape(cout, cin * k)
    y = (cols2 @ w2.T).reshape(bsz, lout, cout).transpose(0, 2, 1)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        y = y + b.data[None, :, None]
        parents.append(b)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(bsz * lout, cout)
        if w.requires_grad:
            _accum(w, (g2.T @ cols2).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(bsz, lout, cin, k).transpose(0, 2, 1, 3)
            dxp = np.zeros((bsz, cin, lp))
            span = stride * (lout - 1) + 1
            for j in range(k):
                dxp[:, :, j:j + span:stride] += dcols[:, :, :, j]
            _accum(x, dxp[:, :, padding:lp - padding] if padding else dxp)
    return _make(np.ascontiguousarray(y), parents, backward, "conv1d")


def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.repeat(x.data, factor, axis=-1), (x,),
                 lambda g: _accum(x, g.reshape(x.shape + (factor,)).sum(axis=-1)), "upsample")


def frame(x, frame_len: int, hop: int) -> Tensor:
    """Slice the last axis into overlapping frames: (..., L) -> (..., T, frame_len)."""
    x = as_tensor(x)
    length = x.shape[-1]
    t = 0 if length < frame_len else 1 + (length - frame_len) // hop
    if t == 0:
        raise ValueError("signal shorter than one frame")
    view = np.lib.stride_tricks.sliding_window_view(x.data, frame_len, axis=-1)[..., ::hop, :][..., :t, :]

    def backward(g):
        lead = g.shape[:-2]
        dx = np.zeros(lead + (length,))
        for c in range(0, frame_len, hop):
            w = min(hop, frame_len - c)
            chunk = np.zeros(lead + (t, hop))
            chunk[..., :w] = g[..., c:c + w]
            seg = chunk.reshape(lead + (t * hop,))
            end = min(c + t * hop, length)
            dx[..., c:end] += seg[..., :end - c]
        _accum(x, dx)
    return _make(np.ascontiguousarray(view), (x,), backward, "frame")


def detach(x) -> Tensor:
    """Same values, no gradient path back to ``x``."""
    return Tensor(as_tensor(x).data.copy(), requires_grad=False, op="detach")


def grad_scale(x, scale: float) -> Tensor:
    """Identity forward; multiplies the gradient by ``scale`` on the way back."""
    x = as_tensor(x)
    return _make(x.data, (x,), lambda g: _accum(x, scale * g), "grad_scale")


def time_stretch(x, factor: float) -> Tensor:
    """Linear-interpolation stretch of the last axis by a fixed factor."""
    from .augment import stretch_matrix
    x = as_tensor(x)
    if factor == 1.0:
        return x
    return linear_map(x, stretch_matrix(x.shape[-1], factor))


def resample(x, source_rate: int, target_rate: int) -> Tensor:
    from .resample import resample_matrix
    x = as_tensor(x)
    if source_rate == target_rate:
        return x
    return linear_map(x, resample_matrix(x.shape[-1], source_rate, target_rate))


def add_constant(x, c) -> Tensor:
    """``x + c`` where ``c`` is a constant (e.g. a noise segment); the gradient is identity on ``x``."""
    return add(x, Tensor(c))
