"""Toy backbone, top-down decoder, losses and saliency inference.

The backbone is a small VGG-like stack that keeps the six side-output
contract (strides 1, 2, 4, 8, 16, 32). The decoder walks those outputs from
deep to shallow, fusing non-local, edge and saliency features at every stage
except the deepest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .fusion import ERMParams, StageFusionParams, _reduce, edge_loss, erm_forward, ffg_fuse, unify
from .layers import Conv, Dense, named_tensors
from .nlgm import MODES, SOFTMAX_AXIS, NLGMParams, nlgm_forward
from .tensor import Tensor

N_STAGES = 6
STRIDE = 2 ** (N_STAGES - 1)
ARCHITECTURES = ("a", "b", "c", "d")


@dataclass
class ModelConfig:
    widths: tuple = (16, 32, 64, 64, 64, 64)
    backbone_convs: int = 2
    decoder_convs: int = 3
    reduction: int = 4
    nlgm: bool = True
    ffg: bool = True
    erm: bool = True
    nlgm_arch: str = "d"
    nlgm_mode: str = "both"
    softmax_axis: int = SOFTMAX_AXIS
    loss_norm: str = "mean"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != N_STAGES:
            raise ValueError(f"need {N_STAGES} channel widths, got {len(self.widths)}")
        if self.nlgm_arch not in ARCHITECTURES:
            raise ValueError(f"nlgm_arch must be one of {ARCHITECTURES}, got {self.nlgm_arch!r}")
        if self.nlgm_mode not in MODES:
            raise ValueError(f"nlgm_mode must be one of {MODES}, got {self.nlgm_mode!r}")
        if self.loss_norm not in ("mean", "sum"):
            raise ValueError(f"loss_norm must be 'mean' or 'sum', got {self.loss_norm!r}")
        if self.softmax_axis not in (0, 1):
            raise ValueError("softmax_axis must be 0 or 1")

    @property
    def nlgm_source(self) -> int:
        """1-based index of the side output feeding the non-local stack."""
        return 5 if self.nlgm_arch == "d" else 6

    @property
    def nlgm_blocks(self) -> int:
        return 1 if self.nlgm_arch == "a" else 5

    @property
    def nlgm_one_to_one(self) -> bool:
        return self.nlgm_arch in ("c", "d")


@dataclass
class ModelParams:
    backbone: list
    decoder: list
    side_heads: list
    fusion: list
    fin_convs: list
    head: Conv
    nlgm: Optional[NLGMParams] = None
    erm: Optional[ERMParams] = None

    def named_parameters(self) -> list:
        return list(named_tensors(self))

    def n_parameters(self) -> int:
        return sum(t.size for _, t in named_tensors(self))


@dataclass
class Forward:
    """Everything one forward pass produces (lists are indexed stage-1)."""

    side_outputs: list
    nonlocal_feats: list
    edge_feats: list
    features: list
    side_logits: list
    final_logits: Tensor
    probes: dict = field(default_factory=dict)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    w = config.widths
    backbone = []
    c_in = 3
    for c in w:
        stage = []
        for _ in range(config.backbone_convs):
            stage.append(Conv.init(c_in, c, 3, rng))
            c_in = c
        backbone.append(stage)

    decoder = []
    for i, c in enumerate(w):
        c_in = c if (i == N_STAGES - 1 or not config.ffg) else 3 * c
        block = []
        for _ in range(config.decoder_convs):
            block.append(Conv.init(c_in, c, 3, rng))
            c_in = c
        decoder.append(block)
    side_heads = [Conv.init(c, 1, 1, rng) for c in w]

    nlgm = None
    c_nl = w[config.nlgm_source - 1]
    if config.nlgm:
        nlgm = NLGMParams.init(c_nl, rng, config.nlgm_blocks)
    erm = None
    if config.erm:
        erm = ERMParams.init(w[1], w[4], w[1], rng)

    fusion = []
    for i in range(N_STAGES - 1):
        c = w[i]
        stage = StageFusionParams(unify_f=Conv.init(w[i + 1], c, 1, rng))
        if config.nlgm:
            stage.unify_n = Conv.init(c_nl, c, 1, rng)
        if config.erm:
            stage.unify_e = Conv.init(w[1], c, 1, rng)
        if config.ffg:
            hidden = max(1, (3 * c) // config.reduction)
            stage.fc1 = Dense.init(3 * c, hidden, rng)
            stage.fc2 = Dense.init(hidden, 3 * c, rng)
        fusion.append(stage)

    fin_convs = [Conv.init(c, w[0], 1, rng) for c in w[1:]]
    head = Conv.init(w[0], 1, 1, rng)
    return ModelParams(backbone, decoder, side_heads, fusion, fin_convs, head, nlgm, erm)


def check_input_size(h: int, w: int) -> None:
    if h % STRIDE or w % STRIDE or h < STRIDE or w < STRIDE:
        raise ValueError(f"image size {h}×{w} must be a positive multiple of {STRIDE}")


def backbone_forward(image: Tensor, params: ModelParams) -> list:
    """Side outputs S¹..S⁶ of a 3×H×W image."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise T.ShapeError(f"expected a 3×H×W image, got {image.shape}")
    check_input_size(*image.shape[1:])
    x = image
    outs = []
    for i, stage in enumerate(params.backbone):
        if i:
            x = T.maxpool2d(x, 2)
        for conv in stage:
            x = T.relu(conv(x))
        outs.append(x)
    return outs


def _block(x: Tensor, convs: list) -> Tensor:
    for conv in convs:
        x = T.relu(conv(x))
    return x


def _zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros(x.shape))


def decode(side: list, params: ModelParams, config: ModelConfig,
           nonlocal_feats: Optional[list] = None, edge_feats: Optional[list] = None):
    """Top-down pass. Returns (features F¹..F⁶, side logits, probes)."""
    feats = [None] * N_STAGES
    feats[-1] = _block(side[-1], params.decoder[-1])
    probes = {}
    for i in reversed(range(N_STAGES - 1)):
        s = side[i]
        fp = params.fusion[i]
        f_hat = unify(feats[i + 1], s, fp.unify_f)
        n_hat = unify(nonlocal_feats[i], s, fp.unify_n) if nonlocal_feats is not None else None
        e_hat = unify(edge_feats[i], s, fp.unify_e) if edge_feats is not None else None
        probe = np.zeros(s.shape)
        if n_hat is not None:
            probe = n_hat.data * (e_hat.data if e_hat is not None else 1.0)
        probes[i + 1] = {"nonlocal_edge": probe}
        if config.ffg:
            # without edge features the gate multiplies by one
            gate = e_hat if e_hat is not None else Tensor(np.ones(s.shape))
            x = ffg_fuse(s, n_hat if n_hat is not None else _zeros_like(s), f_hat, gate, fp)
        else:
            # variants without the gate fuse by plain addition
            x = T.add(s, f_hat)
            for extra in (n_hat, e_hat):
                if extra is not None:
                    x = T.add(x, extra)
        feats[i] = _block(x, params.decoder[i])
    logits = [head(f) for head, f in zip(params.side_heads, feats)]
    return feats, logits, probes


def fuse_final(feats: list, params: ModelParams) -> Tensor:
    """Coarse-to-fine sum of all decoder features at the finest resolution, mapped to one logit channel."""
    size = feats[0].shape[1:]
    fin = feats[0]
    for f, conv in zip(feats[1:], params.fin_convs):
        # 1×1 conv and bilinear resize commute; converting first is cheaper
        fin = T.add(fin, T.upsample_bilinear(conv(f), size))
    return params.head(fin)


def forward(image: Tensor, params: ModelParams, config: ModelConfig) -> Forward:
    side = backbone_forward(image, params)
    nl = None
    if config.nlgm:
        src = side[config.nlgm_source - 1]
        nl = nlgm_forward(src, params.nlgm, config.nlgm_mode, config.softmax_axis,
                          one_to_one=config.nlgm_one_to_one, n_stages=N_STAGES - 1)
    edges = erm_forward(side[1], side[4], params.erm) if config.erm else None
    feats, logits, probes = decode(side, params, config, nl, edges)
    final = fuse_final(feats, params)
    return Forward(side, nl or [], edges or [], feats, logits, final, probes)


def as_image_tensor(image) -> Tensor:
    """Accept H×W×3 (or 3×H×W) arrays in [0,1]; returns a 3×H×W Tensor."""
    if isinstance(image, Tensor):
        return image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 3 and arr.shape[0] != 3:
        arr = arr.transpose(2, 0, 1)
    return Tensor(arr)


def infer(image, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Saliency map in (0,1) at the input resolution."""
    x = as_image_tensor(image)
    out = forward(x, params, config)
    logits = T.upsample_bilinear(out.final_logits, x.shape[1:])
    return T.sigmoid(logits).data[0].copy()


def saliency_loss(logits: Tensor, gt: np.ndarray, reduction: str = "mean", per_pixel: bool = False) -> Tensor:
    """Unweighted pixelwise cross entropy of single-channel logits against a binary mask."""
    gt = (np.asarray(gt, dtype=np.float64) > 0.5).astype(np.float64)
    up = T.reshape(T.upsample_bilinear(logits, gt.shape), gt.shape)
    return _reduce(T.bce_with_logits(up, gt, reduce=not per_pixel), gt.size, reduction)


def loss_terms(out: Forward, params: ModelParams, config: ModelConfig,
               gt_mask: np.ndarray, gt_edge: Optional[np.ndarray], per_pixel: bool = False) -> dict:
    """Named loss terms; ``per_pixel`` gives each as a map summing to the term."""
    red = config.loss_norm
    terms = {}
    for i, lg in enumerate(out.side_logits):
        terms[f"side{i + 1}"] = saliency_loss(lg, gt_mask, red, per_pixel)
    if config.erm:
        if gt_edge is None:
            raise ValueError("edge supervision is enabled but no edge map was given")
        for i, (e, head) in enumerate(zip(out.edge_feats, params.erm.heads)):
            terms[f"edge{i + 1}"] = edge_loss(e, head, gt_edge, red, per_pixel)
    terms["final"] = saliency_loss(out.final_logits, gt_mask, red, per_pixel)
    return terms


def total_loss(image, gt_mask, gt_edge, params: ModelParams, config: ModelConfig):
    """Sum of every side, edge and final term. Returns (loss, terms, forward)."""
    out = forward(as_image_tensor(image), params, config)
    terms = loss_terms(out, params, config, gt_mask, gt_edge)
    items = list(terms.values())
    loss = items[0]
    for t in items[1:]:
        loss = T.add(loss, t)
    return loss, terms, out


def loss_contributions(image, gt_mask, gt_edge, params: ModelParams, config: ModelConfig) -> list:
    """Per-pixel maps of every loss term; their grand total equals ``total_loss``."""
    out = forward(as_image_tensor(image), params, config)
    return list(loss_terms(out, params, config, gt_mask, gt_edge, per_pixel=True).values())
