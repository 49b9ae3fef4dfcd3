"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every primitive builds its output eagerly and records a closure that maps the
output gradient to gradients of its inputs.  ``Tensor.backward`` walks the
recorded graph once in reverse topological order, summing gradients over
fan-out.  Convolutions use the cross-correlation convention (no kernel flip),
matching the usual deep learning libraries.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, NumericError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {what}")


class Tensor:
    """An n-d float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100  # make ndarray + Tensor dispatch to Tensor.__radd__

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor construction")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- graph traversal --------------------------------------------------
    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise DimensionError("implicit gradient only defined for scalar outputs")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise DimensionError(f"gradient shape {grad.shape} != tensor shape {self.shape}")

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                _check_finite(pg, f"backward of {node.op}")
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return tsum(self) / self.size

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def abs(self):
        return tabs(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def square(a: Tensor) -> Tensor:
    d = a.data
    return _result(d * d, (a,), lambda g: (2.0 * d * g,), "square")


def silu(a: Tensor) -> Tensor:
    d = a.data
    s = expit(d)
    return _result(d * s, (a,), lambda g: (g * (s * (1.0 + d * (1.0 - s))),), "silu")


# -- reductions and shape ops ----------------------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[idx] = g
        return (out,)

    return _result(np.array(a.data[idx]), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise DimensionError(f"cannot concatenate shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=ax)
    return _result(data, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def upsample_nearest(a: Tensor, factor: int = 2) -> Tensor:
    """Repeat every time step ``factor`` times along the last axis."""
    shape = a.shape
    data = np.repeat(a.data, factor, axis=-1)
    return _result(data, (a,),
                   lambda g: (g.reshape(*shape, factor).sum(-1),), "upsample")


# -- layer primitives -------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        if bias.shape != (wd.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} != ({wd.shape[0]},)")
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _result(out, parents, backward, "linear")


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation: x[B,C_in,L] * kernel[C_out,C_in,K] -> [B,C_out,L_out]."""
    if x.ndim != 3 or kernel.ndim != 3:
        raise DimensionError(f"conv1d expects 3-d input and kernel, got {x.shape}, {kernel.shape}")
    B, C, L = x.shape
    O, C2, K = kernel.shape
    if C != C2:
        raise DimensionError(f"conv1d: input has {C} channels, kernel expects {C2}")
    if stride < 1 or padding < 0:
        raise DimensionError("conv1d: stride must be >= 1 and padding >= 0")
    Lp = L + 2 * padding
    if K > Lp:
        raise DimensionError(f"conv1d: kernel {K} longer than padded input {Lp}")
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"conv1d: bias {bias.shape} != ({O},)")
    Lout = (Lp - K) // stride + 1
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    wmat = kernel.data.reshape(O, C * K)
    stop = stride * (Lout - 1) + 1

    # [B, C*K, L_out] with row index c*K + k, matching wmat's layout
    cols = np.stack([xp[:, :, k:k + stop:stride] for k in range(K)], axis=2).reshape(B, C * K, Lout)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        gk = None
        if kernel.requires_grad:
            gk = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(O, C, K)
        gx = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g).reshape(B, C, K, Lout)
            dxp = np.zeros((B, C, Lp))
            for k in range(K):
                dxp[:, :, k:k + stop:stride] += dcols[:, :, k, :]
            gx = dxp[:, :, padding:padding + L]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, backward, "conv1d")


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel group) over channels-in-group and time."""
    if x.ndim != 3:
        raise DimensionError(f"group_norm expects [B,C,L], got {x.shape}")
    B, C, L = x.shape
    if C % groups:
        raise DimensionError(f"group_norm: {C} channels not divisible into {groups} groups")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError("group_norm: affine parameters must have shape (C,)")
    xg = x.data.reshape(B, groups, -1)
    n = xg.shape[-1]
    mu = xg.mean(-1, keepdims=True)
    centered = xg - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(-1, keepdims=True) + eps)
    xhat_g = centered * inv
    xhat = xhat_g.reshape(B, C, L)
    gd = gamma.data[None, :, None]
    out = xhat * gd + beta.data[None, :, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = (g * gd).reshape(B, groups, -1)
            gx = (inv / n) * (
                n * dxhat
                - dxhat.sum(-1, keepdims=True)
                - xhat_g * (dxhat * xhat_g).sum(-1, keepdims=True)
            )
            gx = gx.reshape(B, C, L)
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward, "group_norm")


def _pool_matrix(length: int, out_len: int) -> np.ndarray:
    # contiguous, non-overlapping bins [floor(i*L/k), floor((i+1)*L/k))
    P = np.zeros((length, out_len))
    edges = [(i * length) // out_len for i in range(out_len + 1)]
    for i in range(out_len):
        lo, hi = edges[i], edges[i + 1]
        P[lo:hi, i] = 1.0 / (hi - lo)
    return P


def adaptive_avg_pool1d(x: Tensor, out_len: int) -> Tensor:
    """Average contiguous bins that partition the time axis into ``out_len`` cells."""
    if x.ndim != 3:
        raise DimensionError(f"adaptive_avg_pool1d expects [B,C,L], got {x.shape}")
    L = x.shape[-1]
    if not 1 <= out_len <= L:
        raise DimensionError(f"adaptive_avg_pool1d: out_len {out_len} not in [1, {L}]")
    P = _pool_matrix(L, out_len)
    return _result(x.data @ P, (x,), lambda g: (g @ P.T,), "adaptive_avg_pool1d")


# -- losses -----------------------------------------------------------------

def l1_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    return tabs(pred - target).mean()


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    return square(pred - target).mean()


# -- gradient checking ------------------------------------------------------

def grad_check(fn: Callable[..., Tensor], inputs: Iterable[Tensor], epsilon: float = 1e-5,
               seed: int = 0, max_entries: int | None = None) -> float:
    """Compare backprop gradients of ``fn(*inputs)`` against central differences.

    The output is contracted with a fixed random tensor so that every output
    element contributes.  Returns the maximum over checked entries of
    ``|analytic - numeric| / max(1, |analytic|)``.  With ``max_entries`` set,
    only that many randomly chosen coordinates per input are perturbed.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    inputs = list(inputs)
    for t in inputs:
        _check_finite(t.data, "grad_check input")
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
    rng = np.random.default_rng(seed)

    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape)
    (out * proj).sum().backward()

    def value() -> float:
        with no_grad():
            return float(np.sum(fn(*inputs).data * proj))

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        _check_finite(analytic, "analytic gradient")
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = analytic.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = value()
            flat[i] = orig - epsilon
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2 * epsilon)
            worst = max(worst, abs(a_flat[i] - num) / max(1.0, abs(a_flat[i])))
    for t in inputs:
        t.grad = None
    return worst
