"""Minimal module system over the tensor primitives.

Modules own named parameters (weights updated by the optimizer) and
buffers (state such as batch-norm running statistics that is saved
with checkpoints but never differentiated). All randomness used for
initialization is drawn from an explicitly passed generator.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A tensor registered as trainable state of a module."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def kaiming_init(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def gaussian_init(rng, shape, std=1e-3):
    return rng.normal(0.0, std, size=shape)


def make_initializer(kind):
    if kind == "kaiming":
        return kaiming_init
    if kind == "gaussian_1e-3":
        return lambda rng, shape, fan_in: gaussian_init(rng, shape)
    raise ValueError(f"unknown init kind: {kind!r}")


class Module:
    def __init__(self):
        self._buffers = {}
        self.training = True

    def register_buffer(self, name, array):
        self._buffers[name] = np.asarray(array, dtype=np.float64)
        return self._buffers[name]

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, ModuleList):
                for i, m in enumerate(value):
                    yield f"{name}.{i}", m

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (prefix + name, value)
        for name, child in self._children():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        for name, buf in self._buffers.items():
            yield (prefix + name, buf)
        for name, child in self._children():
            yield from child.named_buffers(prefix=f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        state = {f"param.{k}": v.data for k, v in self.named_parameters()}
        state.update({f"buffer.{k}": v for k, v in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            key = f"param.{name}"
            if key not in state:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            if tuple(state[key].shape) != p.shape:
                raise ValueError(
                    f"checkpoint parameter '{name}' has shape "
                    f"{state[key].shape}, expected {p.shape}"
                )
            p.data[...] = state[key]
        for name, buf in self.named_buffers():
            key = f"buffer.{name}"
            if key in state:
                buf[...] = state[key].reshape(buf.shape)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList:
    def __init__(self, modules=()):
        self._items = list(modules)

    def append(self, module):
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    def __init__(self, rng, in_features, out_features, init=kaiming_init):
        super().__init__()
        self.weight = Parameter(init(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x):
        return T.fully_connected(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel, stride=1, padding=0,
                 init=kaiming_init):
        super().__init__()
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(init(rng, (out_ch, in_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel, stride=2, padding=1,
                 init=kaiming_init):
        super().__init__()
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(init(rng, (in_ch, out_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv1d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel=1, stride=1, padding=0,
                 init=kaiming_init):
        super().__init__()
        fan_in = in_ch * kernel
        self.weight = Parameter(init(rng, (out_ch, in_ch, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel, stride=2, padding=1,
                 init=kaiming_init):
        super().__init__()
        fan_in = in_ch * kernel
        self.weight = Parameter(init(rng, (in_ch, out_ch, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding)


class _BatchNorm(Module):
    def __init__(self, num_features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(num_features))
        self.beta = Parameter(np.zeros(num_features))
        self.momentum = momentum
        self.eps = eps
        self.running_mean = self.register_buffer("running_mean", np.zeros(num_features))
        self.running_var = self.register_buffer("running_var", np.ones(num_features))

    def forward(self, x):
        return T.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class BatchNorm1d(_BatchNorm):
    """Per-feature normalization of [B, F] or [B, C, L] inputs."""


class BatchNorm2d(_BatchNorm):
    """Per-channel normalization of [B, C, H, W] inputs."""
