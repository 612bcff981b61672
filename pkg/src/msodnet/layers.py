"""Parameter containers shared by every network component."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class Conv:
    """Weights and bias of one convolution (C_out×C_in×k×k, C_out)."""

    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, c_in: int, c_out: int, k: int, rng: np.random.Generator) -> "Conv":
        bound = 1.0 / np.sqrt(c_in * k * k)
        w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(c_out), requires_grad=True))

    @property
    def kernel_size(self) -> int:
        return self.w.shape[-1]

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=1, padding="same")


@dataclass
class Dense:
    """Fully connected layer, weight D_out×D_in."""

    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator) -> "Dense":
        bound = 1.0 / np.sqrt(d_in)
        w = rng.uniform(-bound, bound, size=(d_out, d_in))
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(d_out), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return T.fully_connected(x, self.w, self.b)


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses/lists depth-first, yielding dotted names of every Tensor."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), _join(prefix, f.name))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, _join(prefix, str(i)))


def map_tensors(obj, fn: Callable[[str, Tensor], Tensor], prefix: str = ""):
    """Rebuild ``obj`` with each Tensor replaced by ``fn(name, tensor)``."""
    if isinstance(obj, Tensor):
        return fn(prefix, obj)
    if dataclasses.is_dataclass(obj):
        changes = {
            f.name: map_tensors(getattr(obj, f.name), fn, _join(prefix, f.name))
            for f in dataclasses.fields(obj)
        }
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, list):
        return [map_tensors(item, fn, _join(prefix, str(i))) for i, item in enumerate(obj)]
    if isinstance(obj, tuple):
        return tuple(map_tensors(item, fn, _join(prefix, str(i))) for i, item in enumerate(obj))
    return obj


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def zero_grads(obj) -> None:
    for _, t in named_tensors(obj):
        t.grad = None


