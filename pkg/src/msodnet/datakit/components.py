"""Connected-component labelling used to count objects in a mask."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_N8 = _N4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass
class Components:
    """Labelled map: objects are 1..count, specks below ``min_area`` are negative."""

    count: int
    labels: np.ndarray
    areas: list

    @property
    def n_noise(self) -> int:
        return int(-self.labels.min()) if self.labels.size and self.labels.min() < 0 else 0


def count_components(mask: np.ndarray, connectivity: int = 8, min_area: int = 10) -> Components:
    """Flood-fill labelling of the foreground of a binary mask."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    fg = np.asarray(mask) > 0
    if fg.ndim != 2:
        raise ValueError(f"expected a 2-d mask, got shape {fg.shape}")
    H, W = fg.shape
    offsets = _N8 if connectivity == 8 else _N4
    raw = np.zeros((H, W), dtype=np.int64)
    areas = []
    current = 0
    for y0, x0 in zip(*np.nonzero(fg)):
        if raw[y0, x0]:
            continue
        current += 1
        raw[y0, x0] = current
        stack = [(y0, x0)]
        area = 0
        while stack:
            y, x = stack.pop()
            area += 1
            for dy, dx in offsets:
                ny, nx = y + dy, x + dx
                if 0 <= ny < H and 0 <= nx < W and fg[ny, nx] and not raw[ny, nx]:
                    raw[ny, nx] = current
                    stack.append((ny, nx))
        areas.append(area)

    # relabel: kept objects 1..n in scan order, specks -1..-m
    lut = np.zeros(current + 1, dtype=np.int64)
    kept, noise = 0, 0
    kept_areas = []
    for i, a in enumerate(areas, start=1):
        if a >= min_area:
            kept += 1
            lut[i] = kept
            kept_areas.append(a)
        else:
            noise += 1
            lut[i] = -noise
    return Components(kept, lut[raw], kept_areas)
