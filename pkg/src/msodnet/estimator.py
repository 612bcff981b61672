"""scikit-learn style wrapper around the saliency network."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datakit.edges import sobel_edges
from .metrics import evaluate_pairs
from .model import STRIDE, ModelConfig, infer, init_params
from .training import TrainConfig, train


def check_images(X) -> np.ndarray:
    """Validate a batch of RGB images; returns float64 (n, H, W, 3) in [0, 1].

    uint8 input is scaled by 1/255. Spatial sizes must be multiples of 32.
    """
    arr = np.asarray(X)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected images shaped (n, H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("got an empty image batch")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("images contain NaN or inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("float images must lie in [0, 1]")
    h, w = arr.shape[1:3]
    if h % STRIDE or w % STRIDE:
        raise ValueError(f"image size {h}×{w} must be a multiple of {STRIDE}")
    return arr


def check_masks(y, X: np.ndarray) -> np.ndarray:
    """Binarise masks (values > 0.5, or > 127 for uint8) and match them to ``X``."""
    arr = np.asarray(y)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.dtype == np.uint8 and arr.max(initial=0) > 1:
        arr = arr > 127
    else:
        arr = arr.astype(np.float64) > 0.5
    if arr.shape != X.shape[:3]:
        raise ValueError(f"masks {arr.shape} do not match images {X.shape[:3]}")
    return arr.astype(np.float64)


class SaliencyDetector(BaseEstimator):
    """Salient object detector with non-local guidance and edge-gated fusion.

    ``fit(X, y)`` takes images of shape (n, H, W, 3) and binary masks (n, H, W);
    edge targets come from the Sobel operator unless passed as ``edges``.
    ``predict_proba`` returns saliency maps in (0, 1), ``predict`` binarises
    them and ``score`` is the mean per-image max F-measure.
    """

    def __init__(self, widths=(16, 32, 64, 64, 64, 64), steps=300, lr=1e-3, batch_size=1,
                 decay_step=None, loss_norm="mean", softmax_axis=1, nlgm=True, ffg=True,
                 erm=True, nlgm_arch="d", nlgm_mode="both", reduction=4, seed=0):
        self.widths = widths
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.decay_step = decay_step
        self.loss_norm = loss_norm
        self.softmax_axis = softmax_axis
        self.nlgm = nlgm
        self.ffg = ffg
        self.erm = erm
        self.nlgm_arch = nlgm_arch
        self.nlgm_mode = nlgm_mode
        self.reduction = reduction
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(widths=tuple(self.widths), reduction=self.reduction, nlgm=self.nlgm,
                           ffg=self.ffg, erm=self.erm, nlgm_arch=self.nlgm_arch,
                           nlgm_mode=self.nlgm_mode, softmax_axis=self.softmax_axis,
                           loss_norm=self.loss_norm)

    def fit(self, X, y, edges=None):
        X = check_images(X)
        y = check_masks(y, X)
        if edges is None:
            e = np.stack([sobel_edges(m) for m in y]).astype(np.float64)
        else:
            e = check_masks(edges, X)
        self.config_ = self._model_config()
        tc = TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                         decay_step=self.decay_step, seed=self.seed)
        result = train(list(zip(X, y, e)), self.config_, tc)
        self.params_ = result.params
        self.history_ = result.history
        self.n_features_in_ = X.shape[1] * X.shape[2] * 3
        return self

    def init(self):
        """Initialise parameters without training (equivalent to ``steps=0``)."""
        self.config_ = self._model_config()
        self.params_ = init_params(self.config_, self.seed)
        self.history_ = []
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_images(X)
        return np.stack([infer(x, self.params_, self.config_) for x in X])

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.uint8)

    def score(self, X, y) -> float:
        X = check_images(X)
        y = check_masks(y, X)
        maps = self.predict_proba(X)
        return evaluate_pairs((str(i), p, g) for i, (p, g) in enumerate(zip(maps, y))).max_f
