"""Minimal reverse-mode autodiff over numpy arrays.

Only the handful of operations a small convolutional hourglass needs are
provided: 2-D convolution, nearest upsampling, channel concatenation,
per-channel batch normalisation, LeakyReLU, sigmoid and the MSE loss.

Every op records its parents and a closure computing the input gradients, so
the graph is a dynamic tape rebuilt on each forward pass. ``Tensor.backward``
walks the tape in reverse topological order, accumulates ``.grad`` on leaf
tensors that require it and then releases the tape.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, NumericalError, StateError

DEFAULT_DTYPE = np.float32


class Tensor:
    """An n-d array (rank <= 4) that can take part in gradient computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_from_op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim > 4:
            raise ConfigurationError(f"tensor rank {arr.ndim} exceeds 4")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._from_op = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("only scalar multiplication is supported")
        return scale(self, float(other))

    __rmul__ = __mul__

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> list["Tensor"]:
        """Back-propagate from this node.

        Returns the leaf tensors that received a gradient. A graph built only
        from constants yields an empty list.
        """
        if not self._from_op:
            raise StateError("backward() called on a tensor with no recorded forward pass")
        if self._backward is None and self.requires_grad:
            raise StateError("graph already consumed; run the forward pass again")
        if not self.requires_grad:
            return []
        if grad is None:
            if self.data.size != 1:
                raise StateError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        leaves: "OrderedDict[int, Tensor]" = OrderedDict()
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                    leaves[id(node)] = node
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._from_op:
                node._parents = ()
                node._backward = None
        return list(leaves.values())


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    out._from_op = True
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, alpha: float) -> Tensor:
    a = _as_tensor(a)
    c = a.data.dtype.type(alpha)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    d = x.data
    gain = np.where(d > 0, d.dtype.type(1), d.dtype.type(slope))
    return _result(d * gain, (x,), lambda g: (g * gain,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _result(out, (x,), lambda g: (g * out * (1 - out),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ConfigurationError("concat of an empty sequence")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ConfigurationError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Replicate every pixel into a ``factor x factor`` block (NCHW)."""
    if int(factor) != factor or factor < 2:
        raise ConfigurationError(f"upsample factor must be an integer >= 2, got {factor}")
    if x.data.ndim != 4:
        raise ConfigurationError(f"upsample_nearest expects NCHW input, got shape {x.shape}")
    f = int(factor)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return _result(out, (x,), backward)


def _im2col(data: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Channel-major patch matrix of shape (c*kh*kw, n*ho*wo)."""
    n, c = data.shape[:2]
    if kh == kw == 1 and stride == 1 and padding == 0:
        return data.transpose(1, 0, 2, 3).reshape(c, -1)
    xp = np.pad(data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, -1)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an (O, C, kh, kw) kernel, zero padded."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ConfigurationError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv2d: invalid stride={stride} padding={padding}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ConfigurationError(f"conv2d: kernel expects {kc} input channels, input has {c}")
    if bias is not None and bias.shape != (o,):
        raise ConfigurationError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ConfigurationError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    cols = _im2col(x.data, kh, kw, stride, padding)
    wmat = kernel.data.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gk = (g2 @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            if stride == 1 and padding <= min(kh, kw) - 1 and kh - 1 - padding == kw - 1 - padding:
                # full correlation of the output gradient with the flipped kernel
                flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
                gx = (flipped @ _im2col(g, kh, kw, 1, kh - 1 - padding)).reshape(c, n, h, w).transpose(1, 0, 2, 3)
            else:
                dcols = (wmat.T @ g2).reshape(c, kh, kw, n, ho, wo)
                dxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
                dxp_t = dxp.transpose(1, 0, 2, 3)
                for i in range(kh):
                    for j in range(kw):
                        dxp_t[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
                gx = dxp[:, :, padding:padding + h, padding:padding + w]
        return (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out if n == 1 else np.ascontiguousarray(out), parents, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation with batch statistics (no running averages)."""
    if x.data.ndim != 4:
        raise ConfigurationError(f"batch_norm expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError(f"batch_norm: affine params must have shape ({c},)")
    m = n * h * w
    # channel-major (c, n*h*w) view; a copy only when n > 1
    xr = x.data.reshape(c, h * w) if n == 1 else x.data.transpose(1, 0, 2, 3).reshape(c, m)
    mean = xr.mean(axis=1, keepdims=True)
    xc = xr - mean
    var = np.einsum("ij,ij->i", xc, xc)[:, None] / m
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gamma.data[:, None] + beta.data[:, None]

    def to_nchw(a):
        return a.reshape(1, c, h, w) if n == 1 else a.reshape(c, n, h, w).transpose(1, 0, 2, 3)

    def backward(g):
        gr = g.reshape(c, h * w) if n == 1 else g.transpose(1, 0, 2, 3).reshape(c, m)
        ggamma = np.einsum("ij,ij->i", gr, xhat)
        gbeta = gr.sum(axis=1)
        gx = None
        if x.requires_grad:
            # d/dx of gamma * xhat + beta with batch statistics
            k = (gamma.data * inv[:, 0] / m)[:, None]
            gx = to_nchw(k * (m * gr - gbeta[:, None] - xhat * ggamma[:, None]))
        return (gx, ggamma, gbeta)

    return _result(to_nchw(out), (x, gamma, beta), backward)


def mse_loss(a: Tensor, b) -> Tensor:
    """Mean of squared differences over all elements (a scalar tensor)."""
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"mse_loss: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data.astype(a.data.dtype, copy=False)
    out = np.asarray(np.mean(diff * diff), dtype=a.data.dtype)
    k = a.data.dtype.type(2.0 / diff.size)

    def backward(g):
        ga = g * k * diff
        return (ga, -ga if b.requires_grad else None)

    return _result(out, (a, b), backward)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite values in {what}")
    return t


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------

class ParamSet(OrderedDict):
    """Named parameter tensors, in creation order."""

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def copy_data(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.values()))


class Adam:
    """Adam with bias correction; moments live here, keyed by parameter name."""

    def __init__(self, params: ParamSet, lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigurationError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise StateError(f"adam step without gradients for: {', '.join(missing)}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)
            p.grad = None


def adam_step(params: ParamSet, state: Adam) -> ParamSet:
    if state.params is not params:
        raise StateError("optimizer state belongs to a different parameter set")
    state.step()
    return params
