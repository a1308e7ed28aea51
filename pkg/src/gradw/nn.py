"""Small module system on top of :mod:`gradw.autodiff`."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor


class Module:
    """Attribute-registered parameters, buffers and submodules.

    Parameters are :class:`Tensor` attributes with ``requires_grad`` set;
    buffers are plain numpy arrays registered via :meth:`register_buffer`.
    """

    def __init__(self):
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "_frozen", False)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def params(self) -> ParamSet:
        return ParamSet(self.named_parameters(), frozen=self._frozen)

    def state(self) -> dict[str, np.ndarray]:
        """Parameters and buffers by dotted name (live arrays, not copies)."""
        out = {k: v.data for k, v in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for k, t in params.items():
            if state[k].shape != t.shape:
                raise ad.ShapeError(f"{k}: expected shape {t.shape}, got {state[k].shape}")
            t.data = np.asarray(state[k], dtype=t.dtype).copy()
        for k, arr in buffers.items():
            arr[...] = state[k]

    def train(self, mode: bool = True):
        if self._frozen and mode:
            raise RuntimeError("frozen module cannot be put in training mode")
        self._set_training(mode)
        return self

    def eval(self):
        self._set_training(False)
        return self

    def _set_training(self, mode: bool):
        object.__setattr__(self, "training", mode)
        for _, child in self._children():
            child._set_training(mode)

    def freeze(self):
        """Lock parameters and statistics; the module stays in eval mode."""
        self.eval()
        self._set_frozen()
        return self

    def _set_frozen(self):
        object.__setattr__(self, "_frozen", True)
        for _, child in self._children():
            child._set_frozen()

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=None, bias=False, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Tensor(_he(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel=3, stride=2, padding=None, bias=False, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.kernel = kernel
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Tensor(_he(rng, (c_in, c_out, kernel, kernel), c_in * kernel * kernel), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def forward(self, x, size=None):
        """Upsample; ``size`` picks the output padding that restores an exact extent."""
        op = (0, 0)
        if size is not None:
            base = [(n - 1) * self.stride - 2 * self.padding + self.kernel for n in x.shape[2:]]
            op = tuple(int(s - b) for s, b in zip(size, base))
            if any(not 0 <= p < self.stride for p in op):
                raise ad.ShapeError(f"cannot restore extent {tuple(size)} from input {x.shape[2:]}")
        return ad.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, op)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=ad.default_dtype()))
        self.register_buffer("running_var", np.ones(channels, dtype=ad.default_dtype()))

    def forward(self, x):
        mode = "train" if self.training else "eval"
        return ad.normalize_2d(x, "batch", self.weight, self.bias, mode, self.eps,
                               self.running_mean, self.running_var, self.momentum)


class InstanceNorm2d(Module):
    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x):
        return ad.normalize_2d(x, "instance", self.weight, self.bias, eps=self.eps)


class Linear(Module):
    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, (n_out, n_in)), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def forward(self, x):
        return ad.affine(x, self.weight, self.bias)
