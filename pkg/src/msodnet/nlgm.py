"""Dual-space non-local blocks and the stacked guidance module built from them.

A dual-space block runs two attention paths over the same C×H×W map:

* spatial: 1×1 query/key/value projections, a K×K pixel affinity
  (K = H·W) and a residual connection;
* channel: a C×C channel affinity computed on the raw map, also residual.

The two results are summed and mixed by a 1×1 output convolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv
from .tensor import Tensor

# Softmax is taken along the key index so every affinity row sums to one.
# Set to 0 to normalise columns instead.
SOFTMAX_AXIS = 1

MODES = ("both", "ssnlb", "csnlb")


@dataclass
class DSNLBParams:
    query: Conv
    key: Conv
    value: Conv
    out: Conv

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator) -> "DSNLBParams":
        return cls(*(Conv.init(channels, channels, 1, rng) for _ in range(4)))

    @property
    def channels(self) -> int:
        return self.out.w.shape[0]


@dataclass
class NLGMParams:
    """Stacked blocks; ``blocks[i]`` feeds decoder stage ``i + 1``."""

    blocks: list

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, n_blocks: int = 5) -> "NLGMParams":
        return cls([DSNLBParams.init(channels, rng) for _ in range(n_blocks)])


def _flat(x: Tensor) -> Tensor:
    C, H, W = x.shape
    return T.reshape(x, (C, H * W))


def spatial_affinity(a: Tensor, p: DSNLBParams, axis: int = SOFTMAX_AXIS) -> Tensor:
    """K×K pixel affinity ``softmax(Bᵀ · C)`` from the query and key projections."""
    # A bias on the side being normalised over adds the same constant to a
    # whole softmax slice and cancels exactly, so it is left out: the value is
    # unchanged and its gradient is exactly zero rather than rounding noise.
    q = _flat(p.query(a) if axis == 1 else T.conv2d(a, p.query.w))
    k = _flat(T.conv2d(a, p.key.w) if axis == 1 else p.key(a))
    return T.softmax(T.matmul(T.transpose(q), k), axis=axis)


def spatial_nonlocal(a: Tensor, p: DSNLBParams, axis: int = SOFTMAX_AXIS) -> Tensor:
    """Pixel-affinity attention with residual: ``reshape(D · Sᵀ) + a``."""
    C, H, W = a.shape
    sim = spatial_affinity(a, p, axis)
    attended = T.matmul(_flat(p.value(a)), T.transpose(sim))  # C×K
    return T.add(T.reshape(attended, (C, H, W)), a)


def channel_affinity(a: Tensor, axis: int = SOFTMAX_AXIS) -> Tensor:
    """C×C channel affinity ``softmax(A · Aᵀ)`` of the raw map."""
    flat = _flat(a)
    return T.softmax(T.matmul(flat, T.transpose(flat)), axis=axis)


def channel_nonlocal(a: Tensor, axis: int = SOFTMAX_AXIS) -> Tensor:
    """Channel-affinity attention with residual: ``reshape(Xᵀ · A) + a``."""
    C, H, W = a.shape
    mixed = T.matmul(T.transpose(channel_affinity(a, axis)), _flat(a))
    return T.add(T.reshape(mixed, (C, H, W)), a)


def dsnlb(a: Tensor, p: DSNLBParams, mode: str = "both", axis: int = SOFTMAX_AXIS) -> Tensor:
    if mode == "both":
        merged = T.add(spatial_nonlocal(a, p, axis), channel_nonlocal(a, axis))
    elif mode == "ssnlb":
        merged = spatial_nonlocal(a, p, axis)
    elif mode == "csnlb":
        merged = channel_nonlocal(a, axis)
    else:
        raise ValueError(f"unknown non-local mode {mode!r}; expected one of {MODES}")
    return p.out(merged)


def nlgm_forward(
    source: Tensor,
    p: NLGMParams,
    mode: str = "both",
    axis: int = SOFTMAX_AXIS,
    one_to_one: bool = True,
    n_stages: int = 5,
) -> list:
    """Run the block stack and return the features for stages 1..n_stages.

    The deepest block consumes ``source``; each shallower block refines the
    previous output. With ``one_to_one`` block i feeds stage i, otherwise the
    last output is shared by every stage.
    """
    outs = [None] * len(p.blocks)
    x = source
    for i in reversed(range(len(p.blocks))):
        x = dsnlb(x, p.blocks[i], mode, axis)
        outs[i] = x
    if not one_to_one:
        return [x] * n_stages
    if len(outs) != n_stages:
        raise ValueError(f"one-to-one guidance needs {n_stages} blocks, got {len(outs)}")
    return outs
