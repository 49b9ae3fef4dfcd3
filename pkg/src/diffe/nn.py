"""Parameter containers and the small set of layers the Diff-E networks use."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Tracks child modules and trainable tensors through attribute assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param_count(model: Module | None) -> int:
    if model is None:
        return 0
    return sum(p.size for p in model.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (n_out, n_in), n_in)
        self.bias = _uniform(rng, (n_out,), n_in)

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None):
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.weight = _uniform(rng, (c_out, c_in, kernel_size), c_in * kernel_size)
        self.bias = _uniform(rng, (c_out,), c_in * kernel_size)

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int):
        self.groups = groups
        self.weight = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ad.group_norm(x, self.weight, self.bias, self.groups)


class ConvNormAct(Module):
    """conv -> group norm -> SiLU, optionally with an additive per-channel shift
    (the time embedding) injected between norm and activation."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, groups: int,
                 rng: np.random.Generator, stride: int = 1):
        self.conv = Conv1d(c_in, c_out, kernel_size, rng, stride=stride)
        self.norm = GroupNorm(groups, c_out)

    def forward(self, x: Tensor, shift: Tensor | None = None) -> Tensor:
        h = self.norm(self.conv(x))
        if shift is not None:
            h = h + shift
        return ad.silu(h)
