"""Minimal tape-based reverse-mode autodiff over dense numpy arrays.

Every differentiable op records a node on the innermost active :class:`Tape`
when at least one operand is tracked (a leaf with ``requires_grad`` or the
output of a node on that same tape).  :func:`backward_to` replays the tape in
reverse from a scalar and returns gradients for requested parameters and for
flagged intermediate activations ("taps").  Gradients come back as plain
arrays, so nothing computed from them can carry a gradient path.
"""

from __future__ import annotations

import threading
from collections.abc import Iterable, Mapping
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ParamSet", "Gradients", "ShapeError", "TapeError",
    "default_dtype", "set_default_dtype", "precision",
    "backward_to", "detach", "as_tensor",
    "conv2d", "conv_transpose2d", "conv_layer",
    "normalize", "normalize_2d", "relu", "sigmoid", "pointwise",
    "softmax_over", "reduce", "sum_over", "mean_over", "mean_and_std",
    "affine", "absolute", "exp", "concat", "cross_entropy",
]


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


_DTYPE = {"value": np.dtype(np.float32)}


def default_dtype() -> np.dtype:
    return _DTYPE["value"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE["value"] = dtype


@contextmanager
def precision(dtype):
    """Temporarily switch default storage, e.g. ``with precision(np.float64):``."""
    old = _DTYPE["value"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DTYPE["value"] = old


# ---------------------------------------------------------------------------
# tape


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass(eq=False)
class Node:
    tape: "Tape"
    index: int
    parents: tuple
    vjp: Callable
    out: "Tensor"


class Tape:
    """Ordered record of primitive ops, used as a context manager.

    Tapes are thread-confined; nested tapes are allowed and ops record on the
    innermost one.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.taps: set[int] = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape exited out of order")
        stack.pop()
        return False

    def record(self, out: "Tensor", parents: tuple, vjp: Callable) -> Node:
        node = Node(self, len(self.nodes), parents, vjp, out)
        self.nodes.append(node)
        return node

    def tap(self, t: "Tensor") -> "Tensor":
        """Flag an intermediate so backward passes report its gradient."""
        if t.node is None or t.node.tape is not self:
            raise TapeError("only activations recorded on this tape can be tapped")
        self.taps.add(t.node.index)
        return t

    def is_tapped(self, t: "Tensor") -> bool:
        return t.node is not None and t.node.tape is self and t.node.index in self.taps


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
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

    @property
    def tape_node(self) -> Node | None:
        return self.node

    def tracked(self, tape: Tape | None = None) -> bool:
        tape = tape or current_tape()
        if self.requires_grad:
            return True
        return self.node is not None and self.node.tape is tape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axes=None, keepdims=False):
        return sum_over(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return mean_over(self, axes, keepdims)


def _raise_item(t):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.node = None
    out.name = None
    tape = current_tape()
    if tape is not None and any(p.tracked(tape) for p in parents):
        out.node = tape.record(out, tuple(parents), vjp)
    return out


def detach(t: Tensor) -> Tensor:
    """Same values, no tape node; later uses never reach ``t``'s ancestors."""
    out = Tensor.__new__(Tensor)
    out.data = t.data
    out.requires_grad = False
    out.node = None
    out.name = t.name
    return out


# ---------------------------------------------------------------------------
# parameters and backward


class ParamSet(Mapping):
    """Named trainable tensors plus a frozen flag."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = (), frozen: bool = False):
        self._items = dict(items)
        self.frozen = frozen
        for name, t in self._items.items():
            t.requires_grad = True
            if t.name is None:
                t.name = name

    def __getitem__(self, name):
        return self._items[name]

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def freeze(self) -> "ParamSet":
        self.frozen = True
        return self

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._items.items()}


@dataclass
class Gradients:
    taps: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    disconnected: set = field(default_factory=set)

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t in self.params:
            return self.params[t]
        return self.taps[t]


def backward_to(scalar: Tensor, taps: Iterable[Tensor] = (), params=()) -> Gradients:
    """Replay the tape backward from ``scalar``.

    ``taps`` must be activations flagged with :meth:`Tape.tap`; ``params`` is
    any iterable of leaf tensors or a :class:`ParamSet`.  A frozen ParamSet
    receives no gradients.  Targets the scalar does not depend on get zero
    arrays and are listed in ``disconnected``.
    """
    if scalar.size != 1:
        raise ShapeError(f"backward needs a single-element scalar, got shape {scalar.shape}")
    if scalar.node is None:
        raise TapeError("scalar is not on an active tape")
    tape = scalar.node.tape
    taps = list(taps)
    for t in taps:
        if not tape.is_tapped(t):
            raise TapeError(f"tensor {t!r} is not a registered tap on this tape")
    if isinstance(params, ParamSet):
        leaves = [] if params.frozen else list(params.values())
    else:
        leaves = list(params)

    leaf_ids = {id(p) for p in leaves}
    tap_idx = {t.node.index for t in taps}
    last = scalar.node.index

    # forward sweep: which node outputs can carry gradient to a target
    need = np.zeros(last + 1, dtype=bool)
    for node in tape.nodes[: last + 1]:
        if node.index in tap_idx:
            need[node.index] = True
            continue
        for p in node.parents:
            if id(p) in leaf_ids or (p.node is not None and p.node.tape is tape
                                     and p.node.index <= last and need[p.node.index]):
                need[node.index] = True
                break

    node_grads: dict[int, np.ndarray] = {last: np.ones_like(scalar.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    tap_grads: dict[int, np.ndarray] = {}
    for node in reversed(tape.nodes[: last + 1]):
        g = node_grads.pop(node.index, None)
        if g is None or not need[node.index]:
            continue
        if node.index in tap_idx:
            tap_grads[node.index] = g
        mask = []
        for p in node.parents:
            if id(p) in leaf_ids:
                mask.append(True)
            elif p.node is not None and p.node.tape is tape and need[p.node.index]:
                mask.append(True)
            else:
                mask.append(False)
        if not any(mask):
            continue
        pgrads = node.vjp(g, tuple(mask))
        for p, m, pg in zip(node.parents, mask, pgrads):
            if not m or pg is None:
                continue
            if id(p) in leaf_ids:
                key, store = id(p), leaf_grads
            else:
                key, store = p.node.index, node_grads
            if key in store:
                store[key] = store[key] + pg
            else:
                store[key] = pg

    out = Gradients()
    for t in taps:
        g = tap_grads.get(t.node.index)
        if g is None:
            out.disconnected.add(t)
            g = np.zeros_like(t.data)
        out.taps[t] = g
    for p in leaves:
        g = leaf_grads.get(id(p))
        if g is None:
            out.disconnected.add(p)
            g = np.zeros_like(p.data)
        out.params[p] = g
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic with broadcasting


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _coerce(a, like: Tensor | None = None) -> Tensor:
    if isinstance(a, Tensor):
        return a
    dtype = like.dtype if like is not None else None
    return Tensor(a, dtype=dtype)


def add(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    sa, sb = a.shape, b.shape

    def vjp(g, m):
        return (_unbroadcast(g, sa) if m[0] else None, _unbroadcast(g, sb) if m[1] else None)

    return _make(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    sa, sb = a.shape, b.shape

    def vjp(g, m):
        return (_unbroadcast(g, sa) if m[0] else None, _unbroadcast(-g, sb) if m[1] else None)

    return _make(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    ad, bd = a.data, b.data

    def vjp(g, m):
        return (_unbroadcast(g * bd, ad.shape) if m[0] else None,
                _unbroadcast(g * ad, bd.shape) if m[1] else None)

    return _make(ad * bd, (a, b), vjp)


def div(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    ad, bd = a.data, b.data

    def vjp(g, m):
        return (_unbroadcast(g / bd, ad.shape) if m[0] else None,
                _unbroadcast(-g * ad / (bd * bd), bd.shape) if m[1] else None)

    return _make(ad / bd, (a, b), vjp)


def absolute(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.abs(xd), (x,), lambda g, m: (g * np.sign(xd),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g, m: (g * y,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    # np.maximum propagates NaN, so a diverged input is not silently zeroed
    return _make(np.maximum(x.data, x.dtype.type(0)), (x,), lambda g, m: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped so every output lies strictly inside (0, 1)."""
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ez = np.exp(xd[~pos])
    y[~pos] = ez / (1.0 + ez)
    info = np.finfo(xd.dtype)
    np.clip(y, info.tiny, np.nextafter(xd.dtype.type(1), xd.dtype.type(0)), out=y)
    return _make(y, (x,), lambda g, m: (g * y * (1 - y),))


def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g, m: (g.reshape(src),))


def getitem(x: Tensor, idx) -> Tensor:
    src, dtype = x.shape, x.dtype

    def vjp(g, m):
        full = np.zeros(src, dtype=dtype)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        return (full,)

    return _make(np.array(x.data[idx]), (x,), vjp)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g, m):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# reductions


def _axes(x: Tensor, axes) -> tuple:
    if axes is None:
        return tuple(range(x.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    if not axes:
        raise ValueError("axes must be nonempty")
    out = tuple(sorted(a % x.ndim for a in axes))
    if any(a >= x.ndim for a in axes) or len(set(out)) != len(out):
        raise ValueError(f"invalid axes {axes} for shape {x.shape}")
    return out


def sum_over(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    ax = _axes(x, axes)
    src = x.shape

    def vjp(g, m):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, src).copy(),)

    return _make(x.data.sum(axis=ax, keepdims=keepdims), (x,), vjp)


def mean_over(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    ax = _axes(x, axes)
    n = int(np.prod([x.shape[a] for a in ax]))
    return mul(sum_over(x, ax, keepdims), 1.0 / n)


def mean_and_std(x: Tensor, axes=(-2, -1), channel_axis: int = 1) -> Tensor:
    """Per-group mean and (unbiased) standard deviation, concatenated on channels.

    For an N x C x T x F input reduced over (T, F) the result is N x 2C.
    """
    ax = _axes(x, axes)
    n = int(np.prod([x.shape[a] for a in ax]))
    if n < 2:
        raise ShapeError(f"std needs a reduced extent of at least 2, got {n}")
    xd = x.data
    mu = xd.mean(axis=ax, keepdims=True)
    dev = xd - mu
    var = (dev * dev).sum(axis=ax, keepdims=True) / (n - 1)
    std = np.sqrt(var)
    mean_out = np.squeeze(mu, axis=ax)
    std_out = np.squeeze(std, axis=ax)
    # channel axis index after squeezing the reduced axes
    ch = channel_axis % x.ndim
    ch -= sum(1 for a in ax if a < ch)
    k = mean_out.shape[ch]

    def vjp(g, m):
        gm, gs = np.split(g, [k], axis=ch)
        gm = np.expand_dims(gm, ax)
        gs = np.expand_dims(gs, ax)
        safe = np.where(std > 0, std, 1)
        gx = gm / n + np.where(std > 0, gs * dev / ((n - 1) * safe), 0)
        return (gx.astype(xd.dtype, copy=False),)

    return _make(np.concatenate([mean_out, std_out], axis=ch), (x,), vjp)


def reduce(x: Tensor, kind: str, axes=None) -> Tensor:
    if kind == "sum":
        return sum_over(x, axes)
    if kind == "mean":
        return mean_over(x, axes)
    if kind == "mean_and_std":
        if x.ndim == 1:
            return _vector_mean_std(x)
        return mean_and_std(x, axes=axes if axes is not None else (-2, -1))
    raise ValueError(f"unknown reduction {kind!r}")


def _vector_mean_std(x: Tensor) -> Tensor:
    return mean_and_std(reshape(x, (1, x.shape[0])), axes=(1,), channel_axis=0)


def softmax_over(x: Tensor, axes) -> Tensor:
    """Softmax normalised jointly over ``axes``; max-subtracted for stability."""
    ax = _axes(x, axes)
    xd = x.data
    z = np.exp(xd - xd.max(axis=ax, keepdims=True))
    y = z / z.sum(axis=ax, keepdims=True)

    def vjp(g, m):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _make(y, (x,), vjp)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (N x K)."""
    labels = np.asarray(labels, dtype=np.int64)
    ld = logits.data
    n = ld.shape[0]
    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g, m):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1
        return (p * (g / n),)

    return _make(np.asarray(loss, dtype=ld.dtype), (logits,), vjp)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``weight @ x + bias`` for a vector, or row-wise for an N x n batch."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"affine: input has {x.shape[-1]} features, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine: bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def vjp(g, m):
        gx = g @ wd if m[0] else None
        if m[1]:
            gw = np.outer(g, xd) if g.ndim == 1 else g.T @ xd
        else:
            gw = None
        res = [gx, gw]
        if bias is not None:
            res.append((g if g.ndim == 1 else g.sum(axis=0)) if m[2] else None)
        return tuple(res)

    return _make(out, tuple(parents), vjp)


# ---------------------------------------------------------------------------
# convolution


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


_AXIS_NAMES = ("time", "frequency")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of an N x C_in x T x F input with an O x C_in x kT x kF kernel."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    if ph < 0 or pw < 0:
        raise ValueError("padding must be >= 0")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, c2, kh, kw = weight.shape
    if c != c2:
        raise ShapeError(f"conv2d: channel axis mismatch, input has {c} but kernel expects {c2}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    for name, ext in zip(_AXIS_NAMES, (ho, wo)):
        if ext < 1:
            raise ShapeError(f"conv2d: zero-extent output along the {name} axis")
    xd, wd = x.data, weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xd
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g, m):
        gx = gw = gb = None
        if m[0]:
            gxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, wd[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += contrib.transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + h, pw:pw + w]
        if m[1]:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and m[2]:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _make(out, parents, vjp)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0,
                     output_padding=0) -> Tensor:
    """Adjoint of :func:`conv2d`; kernel layout is C_in x C_out x kT x kF."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oph, opw = _pair(output_padding)
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    if ph < 0 or pw < 0:
        raise ValueError("padding must be >= 0")
    if not (0 <= oph < sh and 0 <= opw < sw):
        raise ValueError("output_padding must be non-negative and smaller than stride")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    c2, o, kh, kw = weight.shape
    if c != c2:
        raise ShapeError(f"conv_transpose2d: channel axis mismatch, input has {c} but kernel expects {c2}")
    ho = (h - 1) * sh - 2 * ph + kh + oph
    wo = (w - 1) * sw - 2 * pw + kw + opw
    for name, ext in zip(_AXIS_NAMES, (ho, wo)):
        if ext < 1:
            raise ShapeError(f"conv_transpose2d: zero-extent output along the {name} axis")
    fh = (h - 1) * sh + kh + oph
    fw = (w - 1) * sw + kw + opw
    xd, wd = x.data, weight.data
    full = np.zeros((n, o, fh, fw), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(xd, wd[:, :, i, j], axes=([1], [0]))
            full[:, :, i:i + sh * (h - 1) + 1:sh, j:j + sw * (w - 1) + 1:sw] += contrib.transpose(0, 3, 1, 2)
    out = full[:, :, ph:ph + ho, pw:pw + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g, m):
        gfull = np.zeros((n, o, fh, fw), dtype=g.dtype)
        gfull[:, :, ph:ph + ho, pw:pw + wo] = g
        gx = np.zeros_like(xd) if m[0] else None
        gw = np.zeros_like(wd) if m[1] else None
        for i in range(kh):
            for j in range(kw):
                gs = gfull[:, :, i:i + sh * (h - 1) + 1:sh, j:j + sw * (w - 1) + 1:sw]
                if m[0]:
                    gx += np.tensordot(gs, wd[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                if m[1]:
                    gw[:, :, i, j] = np.tensordot(xd, gs, axes=([0, 2, 3], [0, 2, 3]))
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and m[2] else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _make(out, parents, vjp)


def conv_layer(x: Tensor, kernel: Tensor, bias: Tensor | None = None, mode: str = "forward",
               stride=1, padding=0, output_padding=0) -> Tensor:
    """Convolution on C x T x F (or batched N x C x T x F) inputs."""
    single = x.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    if mode == "forward":
        y = conv2d(x, kernel, bias, stride, padding)
    elif mode == "transposed":
        y = conv_transpose2d(x, kernel, bias, stride, padding, output_padding)
    else:
        raise ValueError(f"unknown conv mode {mode!r}")
    return reshape(y, y.shape[1:]) if single else y


# ---------------------------------------------------------------------------
# normalization


def normalize(x: Tensor, axes, eps: float) -> Tensor:
    """(x - mean) / sqrt(var + eps) with biased variance over ``axes``."""
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    ax = _axes(x, axes)
    n = int(np.prod([x.shape[a] for a in ax]))
    xd = x.data
    mu = xd.mean(axis=ax, keepdims=True)
    dev = xd - mu
    var = (dev * dev).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = dev * inv

    def vjp(g, m):
        gsum = g.sum(axis=ax, keepdims=True)
        gxs = (g * xhat).sum(axis=ax, keepdims=True)
        return ((inv / n) * (n * g - gsum - xhat * gxs),)

    return _make(xhat.astype(xd.dtype, copy=False), (x,), vjp)


def normalize_2d(x: Tensor, mode: str, scale: Tensor | None = None, shift: Tensor | None = None,
                 stats_mode: str = "train", eps: float = 1e-5, running_mean=None, running_var=None,
                 momentum: float = 0.1) -> Tensor:
    """Batch or instance normalization on N x C x T x F (or C x T x F) input.

    In batch/train mode the running statistics arrays, when given, are updated
    in place.  Batch/eval mode is an affine map built from the stored stats.
    """
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    single = x.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    c = x.shape[1]
    if mode == "instance":
        y = normalize(x, (2, 3), eps)
    elif mode == "batch":
        if stats_mode == "eval":
            if running_mean is None or running_var is None:
                raise ValueError("batch normalization in eval mode needs running statistics")
            inv = (1.0 / np.sqrt(np.asarray(running_var) + eps)).astype(x.dtype)
            mu = Tensor(np.asarray(running_mean).reshape(1, c, 1, 1), dtype=x.dtype)
            y = mul(sub(x, mu), Tensor(inv.reshape(1, c, 1, 1), dtype=x.dtype))
        elif stats_mode == "train":
            y = normalize(x, (0, 2, 3), eps)
            if running_mean is not None:
                cnt = x.shape[0] * x.shape[2] * x.shape[3]
                bm = x.data.mean(axis=(0, 2, 3))
                bv = x.data.var(axis=(0, 2, 3)) * cnt / max(cnt - 1, 1)
                running_mean *= 1 - momentum
                running_mean += momentum * bm
                running_var *= 1 - momentum
                running_var += momentum * bv
        else:
            raise ValueError(f"unknown stats mode {stats_mode!r}")
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    if scale is not None:
        y = mul(y, reshape(scale, (1, c, 1, 1)))
    if shift is not None:
        y = add(y, reshape(shift, (1, c, 1, 1)))
    return reshape(y, y.shape[1:]) if single else y
