"""Edge refinement blocks and the edge-gated feature fusion gate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .layers import Conv, Dense
from .tensor import Tensor

N_ERB = 5


@dataclass
class ERMParams:
    merge: Conv
    erbs: list
    heads: list

    @classmethod
    def init(cls, c_low: int, c_high: int, width: int, rng: np.random.Generator) -> "ERMParams":
        merge = Conv.init(c_low + c_high, width, 3, rng)
        erbs = [Conv.init(width, width, 3, rng) for _ in range(N_ERB)]
        heads = [Conv.init(width, 1, 1, rng) for _ in range(N_ERB)]
        return cls(merge, erbs, heads)


@dataclass
class StageFusionParams:
    """Unification convs and channel-attention weights for one decoder stage.

    Branches absent from a model variant are ``None``.
    """

    unify_f: Conv
    unify_n: Optional[Conv] = None
    unify_e: Optional[Conv] = None
    fc1: Optional[Dense] = None
    fc2: Optional[Dense] = None


def erm_forward(s2: Tensor, s5: Tensor, p: ERMParams) -> list:
    """Edge features E¹..E⁵, all at the resolution of ``s2``."""
    up = T.upsample_bilinear(s5, s2.shape[1:])
    e = T.relu(p.merge(T.concat([s2, up])))
    feats = []
    for erb in p.erbs:
        e = T.relu(erb(e))
        feats.append(e)
    return feats


def edge_class_weights(gt_edge: np.ndarray) -> np.ndarray:
    """Per-pixel weights: edge pixels get |V⁻|/N, the rest |V⁺|/N."""
    gt = np.asarray(gt_edge) > 0.5
    n = gt.size
    n_pos = int(gt.sum())
    lam_pos = (n - n_pos) / n
    lam_neg = n_pos / n
    return np.where(gt, lam_pos, lam_neg)


def edge_loss(e: Tensor, head: Conv, gt_edge: np.ndarray, reduction: str = "mean",
              per_pixel: bool = False) -> Tensor:
    """Class-balanced cross entropy of the edge head against a binary edge map.

    A class missing from ``gt_edge`` has weight 0, so an edgeless target
    contributes nothing. ``per_pixel`` returns the map of contributions whose
    sum is the loss.
    """
    gt = (np.asarray(gt_edge, dtype=np.float64) > 0.5).astype(np.float64)
    logits = T.reshape(T.upsample_bilinear(head(e), gt.shape), gt.shape)
    loss = T.bce_with_logits(logits, gt, edge_class_weights(gt), reduce=not per_pixel)
    return _reduce(loss, gt.size, reduction)


def _reduce(loss: Tensor, n: int, reduction: str) -> Tensor:
    if reduction == "mean":
        return T.scale(loss, 1.0 / n)
    if reduction == "sum":
        return loss
    raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")


def unify(x: Tensor, target: Tensor, conv: Conv) -> Tensor:
    """Convert ``x`` to the channel count and spatial size of ``target``."""
    return T.upsample_bilinear(T.relu(conv(x)), target.shape[1:])


def channel_attention(x: Tensor, fc1: Dense, fc2: Dense) -> Tensor:
    pooled = T.global_avg_pool(x)
    gate = T.sigmoid(fc2(T.relu(fc1(pooled))))
    return T.channel_scale(x, gate)


def ffg_fuse(s: Tensor, n_hat: Tensor, f_hat: Tensor, e_hat: Tensor, p: StageFusionParams) -> Tensor:
    """Concatenate ``s`` with the edge-gated non-local and decoder branches, then reweight channels."""
    for name, t in (("n_hat", n_hat), ("f_hat", f_hat), ("e_hat", e_hat)):
        if t.shape[1:] != s.shape[1:]:
            raise T.ShapeError(f"ffg_fuse: {name} spatial size {t.shape[1:]} != {s.shape[1:]}")
    stacked = T.concat([s, T.mul(n_hat, e_hat), T.mul(f_hat, e_hat)])
    return channel_attention(stacked, p.fc1, p.fc2)
