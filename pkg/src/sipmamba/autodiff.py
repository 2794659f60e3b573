"""
Dense tensors with reverse-mode automatic differentiation.

Every op runs eagerly on numpy arrays. When an input requires a gradient the
op records a :class:`Node` holding its inputs and a backward rule. Node ids
come from a monotonic counter, so sorting the nodes reachable from a loss by
id gives a topological order; :func:`backward` replays that order in reverse.

Broadcasting is restricted: for binary ops the broadcast result must equal
the shape of one operand, i.e. only one side may be expanded (leading batch
axes or size-1 feature axes). Anything else raises :class:`DimensionError`.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericError

_DTYPES = {"f64": np.float64, "f32": np.float32}


class _Settings:
    dtype = np.float64
    check_finite = True


_settings = _Settings()
_local = threading.local()
_node_ids = itertools.count()


def set_precision(precision: str) -> None:
    """Select the dtype used for new tensors: ``"f64"`` (default) or ``"f32"``."""
    if precision not in _DTYPES:
        raise ContractError(f"unknown precision {precision!r}")
    _settings.dtype = _DTYPES[precision]


def get_dtype():
    return _settings.dtype


def set_check_finite(flag: bool) -> None:
    _settings.check_finite = bool(flag)


@contextlib.contextmanager
def precision(name: str):
    old = _settings.dtype
    set_precision(name)
    try:
        yield
    finally:
        _settings.dtype = old


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    old = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = old


class Node:
    """One recorded operation: inputs, the id of its output, and a backward rule.

    ``backward`` maps the output gradient to a tuple with one entry per input
    (``None`` for inputs that do not need a gradient).
    """

    __slots__ = ("id", "op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward: Callable):
        self.id = next(_node_ids)
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tape:
    """The recorded operations reachable from one output, in topological order."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: "Tensor") -> "Tape":
        seen: dict[int, Node] = {}
        stack = [out._node] if out._node is not None else []
        while stack:
            node = stack.pop()
            if node.id in seen:
                continue
            seen[node.id] = node
            for inp in node.inputs:
                if inp._node is not None and inp._node.id not in seen:
                    stack.append(inp._node)
        return cls([seen[k] for k in sorted(seen)])

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _settings.dtype:
            arr = arr.astype(_settings.dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # operators
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out`` as a Tensor and record ``backward`` if any input needs a grad.

    This is the extension point for fused ops defined outside this module.
    """
    if _settings.check_finite and not np.isfinite(out).all():
        raise NumericError(f"non-finite output from {op}")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    t._node = None
    t.requires_grad = False
    if grad_enabled():
        inputs = tuple(inputs)
        if any(i.requires_grad for i in inputs):
            t.requires_grad = True
            t._node = Node(op, inputs, backward)
    return t


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring a grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring a gradient")
    if loss._node is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {loss._node.id: np.ones_like(loss.data)}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is not None:
                key = inp._node.id
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            else:
                key = id(inp)
                if key in leaves:
                    leaves[key] = (inp, leaves[key][1] + gi)
                else:
                    leaves[key] = (inp, gi)
    for inp, g in leaves.values():
        if g.shape != inp.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != leaf shape {inp.data.shape}")
        inp.grad = g if inp.grad is None else inp.grad + g


# ---------------------------------------------------------------------------
# broadcasting helpers


def _bshape(a: np.ndarray, b: np.ndarray, op: str) -> tuple:
    if a.shape == b.shape:
        return a.shape
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc
    if out != a.shape and out != b.shape:
        raise DimensionError(f"{op}: both operands {a.shape}, {b.shape} would need expansion")
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return make_op("add", a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return make_op("sub", a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_op("mul", ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return make_op("div", out, (a, b), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a.data, b.data, "maximum")
    pick = a.data >= b.data

    def bw(g):
        return unbroadcast(g * pick, a.shape), unbroadcast(g * ~pick, b.shape)

    return make_op("maximum", np.where(pick, a.data, b.data), (a, b), bw)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a.data, b.data, "minimum")
    pick = a.data <= b.data

    def bw(g):
        return unbroadcast(g * pick, a.shape), unbroadcast(g * ~pick, b.shape)

    return make_op("minimum", np.where(pick, a.data, b.data), (a, b), bw)


# ---------------------------------------------------------------------------
# elementwise unary


def neg(x) -> Tensor:
    x = as_tensor(x)
    return make_op("neg", -x.data, (x,), lambda g: (-g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_op("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_op("log", np.log(xd), (x,), lambda g: (g / xd,))


def abs_(x) -> Tensor:
    x = as_tensor(x)
    s = np.sign(x.data)
    return make_op("abs", np.abs(x.data), (x,), lambda g: (g * s,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_op("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return make_op("sqrt", out, (x,), lambda g: (0.5 * g / out,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make_op("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    s = _sigmoid(xd)
    return make_op("silu", xd * s, (x,), lambda g: (g * s * (1.0 + xd * (1.0 - s)),))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = np.logaddexp(0.0, xd)
    return make_op("softplus", out, (x,), lambda g: (g * _sigmoid(xd),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_op("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    m = x.data > 0
    return make_op("relu", x.data * m, (x,), lambda g: (g * m,))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    """``a @ b`` with ``a`` of shape (..., m, k) and ``b`` either (k, n) or (..., k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: cannot contract {ad.shape} with {bd.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"matmul: batch dims differ, {ad.shape} vs {bd.shape}")
    out = ad @ bd

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make_op("matmul", out, (a, b), bw)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op("sum", np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return sum_(x, axes, keepdims) * (1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return make_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return make_op("swapaxes", np.swapaxes(x.data, a1, a2), (x,),
                   lambda g: (np.swapaxes(g, a1, a2),))


def _has_advanced(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


def getitem(x, key) -> Tensor:
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    advanced = _has_advanced(key)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if advanced:
            np.add.at(full, key, g)
        else:
            full[key] = g
        return (full,)

    return make_op("getitem", np.array(x.data[key]), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of an empty list")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return make_op("concat", np.concatenate([t.data for t in ts], axis=ax), ts, bw)


def gather(x, index, axis: int = 0) -> Tensor:
    """Select entries of ``x`` along ``axis``; repeated indices accumulate gradient."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.intp)
    ax = axis % x.ndim
    n = x.shape[ax]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ContractError(f"gather: index out of range for axis of size {n}")
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        sl = (slice(None),) * ax + (idx,)
        np.add.at(full, sl, g)
        return (full,)

    return make_op("gather", np.take(x.data, idx, axis=ax), (x,), bw)


def inverse_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.intp)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size, dtype=np.intp)
    return inv


def _check_perm(perm: np.ndarray, n: int):
    if perm.ndim != 1 or perm.size != n or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ContractError(f"not a permutation of 0..{n - 1}")


def permute(x, perm, axis: int = 0) -> Tensor:
    """``out[i] = x[perm[i]]`` along ``axis`` for a bijective ``perm``."""
    x = as_tensor(x)
    perm = np.asarray(perm, dtype=np.intp)
    ax = axis % x.ndim
    _check_perm(perm, x.shape[ax])
    inv = inverse_permutation(perm)
    return make_op("permute", np.take(x.data, perm, axis=ax), (x,),
                   lambda g: (np.take(g, inv, axis=ax),))


def scatter(x, perm, axis: int = 0) -> Tensor:
    """``out[perm[i]] = x[i]``; the inverse of :func:`permute` with the same ``perm``."""
    return permute(x, inverse_permutation(perm), axis)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance (no affine)."""
    x = as_tensor(x)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g - gm - xhat * (g * xhat).mean(axis=-1, keepdims=True)) * rstd
        return (gx,)

    return make_op("layer_norm", xhat, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(xd - m).sum(axis=axis, keepdims=True))
    out = xd - lse
    sm = np.exp(out)
    return make_op("log_softmax", out, (x,),
                   lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)
    return make_op("softmax", s, (x,),
                   lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def causal_conv1d(x, weight, bias=None) -> Tensor:
    """Depthwise causal convolution along axis -2.

    ``x`` is (..., L, C), ``weight`` is (K, C). The input is left-padded with
    K-1 zeros so output position t only sees inputs at positions <= t.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xd, w = x.data, weight.data
    if w.ndim != 2 or w.shape[1] != xd.shape[-1]:
        raise DimensionError(f"causal_conv1d: weight {w.shape} vs input {xd.shape}")
    K = w.shape[0]
    L = xd.shape[-2]
    pad = [(0, 0)] * (xd.ndim - 2) + [(K - 1, 0), (0, 0)]
    xp = np.pad(xd, pad)
    out = np.zeros_like(xd)
    for k in range(K):
        out += w[k] * xp[..., k:k + L, :]
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs.append(bias)

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for k in range(K):
            gxp[..., k:k + L, :] += g * w[k]
            gw[k] = (g * xp[..., k:k + L, :]).reshape(-1, w.shape[1]).sum(axis=0)
        grads = [gxp[..., K - 1:, :], gw]
        if bias is not None:
            grads.append(g.reshape(-1, w.shape[1]).sum(axis=0))
        return tuple(grads)

    return make_op("causal_conv1d", out, inputs, bw)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep)


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(f: Callable[..., Tensor], x, step: float = 1e-6) -> float:
    """Largest relative gap between autodiff and central-difference gradients.

    ``x`` is a tensor or a sequence of tensors; ``f`` is called as ``f(*xs)``
    and must return a scalar. Error per coordinate is
    ``|autodiff - fd| / max(1, |fd|)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
    try:
        loss = f(*xs)
        backward(loss)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in xs]
        worst = 0.0
        with no_grad():
            for t, ad in zip(xs, analytic):
                flat = t.data.reshape(-1)
                adf = ad.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + step
                    fp = float(f(*xs).data)
                    flat[i] = orig - step
                    fm = float(f(*xs).data)
                    flat[i] = orig
                    fd = (fp - fm) / (2.0 * step)
                    err = abs(adf[i] - fd) / max(1.0, abs(fd))
                    worst = max(worst, err)
        return worst
    finally:
        for t, (rg, g) in zip(xs, saved):
            t.requires_grad = rg
            t.grad = g


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_settings.dtype), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_settings.dtype), requires_grad=requires_grad)
