"""Training loop: Adam over shuffled epochs, deterministic given the seed."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .datakit.curate import load_sample
from .datakit.index import DatasetIndex
from .layers import named_tensors
from .model import ModelConfig, ModelParams, init_params, total_loss
from .optim import Adam, StepDecay, collect_grads

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 1
    lr: float = 1e-3
    decay_step: Optional[int] = None  # defaults to 75% of steps
    decay_factor: float = 0.1
    seed: int = 0

    def resolved_decay_step(self) -> int:
        return self.decay_step if self.decay_step is not None else int(round(0.75 * self.steps))


@dataclass
class TrainResult:
    params: ModelParams
    history: list = field(default_factory=list)  # (step, loss, lr)
    initial_params: Optional[ModelParams] = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([h[1] for h in self.history])


def load_samples(index: DatasetIndex) -> list:
    return [load_sample(index, rec) for rec in index]


def _check_finite(tape: T.Tape, loss: T.Tensor, step: int) -> None:
    if np.isfinite(loss.item()):
        return
    rec = tape.first_nonfinite()
    where = f"first non-finite tensor: output of {rec.name!r} (op #{tape.records.index(rec)})" if rec else "no tape record"
    raise DivergenceError(f"non-finite loss at step {step}; {where}")


def train(
    data,
    model_config: ModelConfig,
    train_config: TrainConfig,
    params: Optional[ModelParams] = None,
    callback: Optional[Callable[[int, float, float], None]] = None,
) -> TrainResult:
    """Fit model parameters on ``data``.

    ``data`` is a :class:`DatasetIndex` or a sequence of (image, mask, edge)
    arrays. Gradients of a mini-batch are summed in sample order; the
    recorded loss is the batch mean.
    """
    samples: Sequence = load_samples(data) if isinstance(data, DatasetIndex) else list(data)
    if not samples:
        raise ValueError("training set is empty")
    if params is None:
        params = init_params(model_config, train_config.seed)
    initial = params
    rng = np.random.default_rng(train_config.seed)
    opt = Adam(StepDecay(train_config.lr, train_config.resolved_decay_step(), train_config.decay_factor))
    history = []
    order: list = []
    for step in range(train_config.steps):
        grads: dict = {}
        batch_loss = 0.0
        for _ in range(train_config.batch_size):
            if not order:
                order = list(rng.permutation(len(samples)))
            image, mask, edge = samples[order.pop(0)]
            for _, t in named_tensors(params):
                t.grad = None
            with T.Tape() as tape:
                loss, _, _ = total_loss(image, mask, edge, params, model_config)
            _check_finite(tape, loss, step)
            tape.backward(loss)
            for name, g in collect_grads(params).items():
                if not np.all(np.isfinite(g)):
                    rec = tape.first_nonfinite()
                    where = f"; first non-finite tensor: output of {rec.name!r}" if rec else ""
                    raise DivergenceError(f"non-finite gradient for {name} at step {step}{where}")
                grads[name] = grads[name] + g if name in grads else g
            batch_loss += loss.item()
        lr = opt.lr
        params = opt.step(params, grads)
        mean_loss = batch_loss / train_config.batch_size
        history.append((step, mean_loss, lr))
        if callback is not None:
            callback(step, mean_loss, lr)
    return TrainResult(params, history, initial)


def smoothed(losses, window: int = 20) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    losses = np.asarray(losses, dtype=np.float64)
    c = np.cumsum(np.insert(losses, 0, 0.0))
    idx = np.arange(1, len(losses) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def loss_reduction(losses, window: int = 20) -> float:
    """Ratio of the final smoothed loss to the mean of the first ``window`` losses."""
    losses = np.asarray(losses, dtype=np.float64)
    head = losses[:window].mean()
    return float(smoothed(losses, window)[-1] / head)


def write_loss_log(path, history) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for step, loss, lr in history:
            fh.write(f"{step}\t{loss!r}\t{lr!r}\n")
    os.replace(tmp, path)


def read_loss_log(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s, l, r = line.rstrip("\n").split("\t")
            out.append((int(s), float(l), float(r)))
    return out
