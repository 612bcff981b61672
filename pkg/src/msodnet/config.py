"""Run configuration as plain ``key=value`` text."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _opt(default, help: str):
    return field(default=default, metadata={"help": help})


@dataclass
class RunConfig:
    seed: int = _opt(0, "RNG seed for data, initialisation and shuffling")
    image_size: int = _opt(64, "side length of generated images (multiple of 32)")
    widths: tuple = _opt((16, 32, 64, 64, 64, 64), "backbone channel widths, six comma-separated ints")
    steps: int = _opt(300, "optimisation steps")
    batch_size: int = _opt(1, "samples per step (gradients summed)")
    lr: float = _opt(1e-3, "Adam learning rate")
    decay_step: int = _opt(-1, "step at which lr drops x0.1; -1 means 75% of steps")
    loss_norm: str = _opt("mean", "per-term loss reduction: mean or sum")
    softmax_axis: int = _opt(1, "affinity softmax axis: 1 rows, 0 columns")
    nlgm: bool = _opt(True, "enable the non-local guidance module")
    ffg: bool = _opt(True, "enable the feature fusion gate")
    erm: bool = _opt(True, "enable the edge refinement module")
    nlgm_arch: str = _opt("d", "non-local architecture: a, b, c or d")
    nlgm_mode: str = _opt("both", "non-local paths: both, ssnlb or csnlb")
    reduction: int = _opt(4, "channel-attention bottleneck ratio")
    n_scenes: int = _opt(100, "scenes written by gen")
    min_objects: int = _opt(3, "fewest objects per generated scene")
    max_objects: int = _opt(19, "most objects per generated scene")
    connectivity: int = _opt(8, "pixel connectivity for object counting: 4 or 8")
    min_area: int = _opt(10, "components smaller than this many pixels are noise")
    seeds: tuple = _opt((0, 1, 2), "seeds used by ablate, comma-separated")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            widths=self.widths,
            reduction=self.reduction,
            nlgm=self.nlgm,
            ffg=self.ffg,
            erm=self.erm,
            nlgm_arch=self.nlgm_arch,
            nlgm_mode=self.nlgm_mode,
            softmax_axis=self.softmax_axis,
            loss_norm=self.loss_norm,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            decay_step=None if self.decay_step < 0 else self.decay_step,
            seed=self.seed,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_pairs(self, pairs) -> "RunConfig":
        """Apply ``key=value`` strings; unknown keys raise :class:`ConfigError`."""
        known = {f.name: f for f in dataclasses.fields(self)}
        changes = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"expected key=value, got {pair!r}")
            key, raw = (s.strip() for s in pair.split("=", 1))
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _parse(key, raw, known[key].default)
        cfg = self.replace(**changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.image_size % 32 or self.image_size < 32:
            raise ConfigError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not 0 <= self.min_objects <= self.max_objects <= 19:
            raise ConfigError("need 0 <= min_objects <= max_objects <= 19")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name}={_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _parse(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_text(text: str) -> list:
    pairs = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(line)
    return pairs


def load(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return (base or RunConfig()).with_pairs(parse_text(fh.read()))


def help_text() -> str:
    rows = []
    for f in dataclasses.fields(RunConfig):
        rows.append(f"  {f.name}={_format(f.default)}  {f.metadata['help']}")
    return "config keys (defaults):\n" + "\n".join(rows)
