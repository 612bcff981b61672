"""Ablation presets: train model variants under shared seeds and compare them."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .metrics import evaluate_pairs
from .model import ModelConfig, as_image_tensor, forward, infer
from .training import TrainConfig, loss_reduction, train

logger = logging.getLogger(__name__)

_OFF = {"ffg": False, "erm": False}

# preset -> (variant name, ModelConfig overrides), in report order
#   modules:  add the non-local module, the fusion gate and edge refinement in turn
#   paths:    spatial path, channel path, both
#   stacking: the four ways of stacking non-local blocks
PRESETS = {
    "modules": (
        ("baseline", {"nlgm": False, "ffg": False, "erm": False}),
        ("nlgm", {"nlgm": True, "ffg": False, "erm": False}),
        ("nlgm+erm", {"nlgm": True, "ffg": False, "erm": True}),
        ("nlgm+ffg", {"nlgm": True, "ffg": True, "erm": False}),
        ("nlgm+ffg+erm", {"nlgm": True, "ffg": True, "erm": True}),
    ),
    "paths": (
        ("ssnlb", {"nlgm": True, "nlgm_mode": "ssnlb", **_OFF}),
        ("csnlb", {"nlgm": True, "nlgm_mode": "csnlb", **_OFF}),
        ("ssnlb+csnlb", {"nlgm": True, "nlgm_mode": "both", **_OFF}),
    ),
    "stacking": tuple((f"arch-{a}", {"nlgm": True, "nlgm_arch": a, **_OFF}) for a in "abcd"),
}

# (expected better-or-equal, reference) pairs on median MaxF
EXPECTED = {
    "modules": (("nlgm", "baseline"), ("nlgm+ffg+erm", "baseline")),
    "paths": (("ssnlb+csnlb", "ssnlb"), ("ssnlb+csnlb", "csnlb")),
    "stacking": (("arch-d", "arch-a"),),
}


@dataclass
class VariantRun:
    variant: str
    seed: int
    max_f: float
    mae: float
    s: float
    loss_ratio: float
    seconds: float
    branch_active: bool


@dataclass
class AblationReport:
    preset: str
    variants: list
    runs: list = field(default_factory=list)

    def _of(self, variant: str) -> list:
        return [r for r in self.runs if r.variant == variant]

    def medians(self) -> dict:
        """variant -> (MaxF, MAE, S) medians over seeds."""
        out = {}
        for v in self.variants:
            rows = self._of(v)
            if rows:
                out[v] = tuple(float(np.median([getattr(r, k) for r in rows])) for k in ("max_f", "mae", "s"))
        return out

    def comparisons(self) -> list:
        """(better, reference, median MaxF of each, holds) for every expected ordering."""
        med = self.medians()
        rows = []
        for better, ref in EXPECTED.get(self.preset, ()):
            if better in med and ref in med:
                a, b = med[better][0], med[ref][0]
                rows.append((better, ref, a, b, a >= b))
        return rows

    def violations(self) -> list:
        return [c for c in self.comparisons() if not c[4]]


def variant_config(base: ModelConfig, overrides: dict) -> ModelConfig:
    return dataclasses.replace(base, **overrides)


def nonlocal_branch_active(sample_image, params, config: ModelConfig) -> bool:
    """True when the gated non-local branch carries any non-zero activation."""
    out = forward(as_image_tensor(sample_image), params, config)
    return any(np.any(p["nonlocal_edge"] != 0) for p in out.probes.values())


def run_ablation(preset: str, train_data: list, test_data: list, base: ModelConfig,
                 train_config: TrainConfig, seeds=(0, 1, 2),
                 progress: Optional[Callable[[VariantRun], None]] = None) -> AblationReport:
    """Train every variant of ``preset`` once per seed and score it on ``test_data``.

    ``train_data`` holds (image, mask, edge) triples; ``test_data`` holds
    (name, image, mask) triples. Each seed fixes initialisation and shuffling
    identically across variants.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    if not train_data or not test_data:
        raise ValueError("ablation needs non-empty training and test sets")
    variants = PRESETS[preset]
    report = AblationReport(preset, [name for name, _ in variants])
    for seed in seeds:
        tc = dataclasses.replace(train_config, seed=int(seed))
        for name, overrides in variants:
            cfg = variant_config(base, overrides)
            t0 = time.perf_counter()
            result = train(train_data, cfg, tc)
            metrics = evaluate_pairs((n, infer(x, result.params, cfg), m) for n, x, m in test_data)
            run = VariantRun(name, int(seed), metrics.max_f, metrics.mae, metrics.s,
                             loss_reduction(result.losses) if len(result.losses) else float("nan"),
                             time.perf_counter() - t0,
                             nonlocal_branch_active(test_data[0][1], result.params, cfg))
            logger.info("%s seed=%d maxF=%.4f MAE=%.4f S=%.4f (%.1fs)", name, seed, run.max_f,
                        run.mae, run.s, run.seconds)
            report.runs.append(run)
            if progress is not None:
                progress(run)
    return report


def format_report(report: AblationReport) -> str:
    lines = [f"preset {report.preset}",
             f"{'variant':<16} {'seed':>6} {'maxF':>8} {'MAE':>8} {'S':>8} {'loss':>7}  nl-branch"]
    for r in report.runs:
        lines.append(f"{r.variant:<16} {r.seed:>6} {r.max_f:8.4f} {r.mae:8.4f} {r.s:8.4f} "
                     f"{r.loss_ratio:7.3f}  {'on' if r.branch_active else 'off'}")
    lines.append("medians")
    for v, (f, m, s) in report.medians().items():
        lines.append(f"{v:<16} {'':>6} {f:8.4f} {m:8.4f} {s:8.4f}")
    for better, ref, a, b, ok in report.comparisons():
        flag = "ok" if ok else "VIOLATED"
        lines.append(f"check {better} >= {ref}: {a:.4f} vs {b:.4f}  {flag}")
    return "\n".join(lines) + "\n"


def write_report(report: AblationReport, path) -> None:
    """CSV with one row per (variant, seed) and one ``median`` row per variant."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "maxF", "MAE", "S", "loss_ratio", "nl_branch"])
        for r in report.runs:
            w.writerow([r.variant, r.seed, repr(r.max_f), repr(r.mae), repr(r.s), repr(r.loss_ratio),
                        int(r.branch_active)])
        for v, (f, m, s) in report.medians().items():
            w.writerow([v, "median", repr(f), repr(m), repr(s), "", ""])
