"""Dataset generation and multi-object curation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .components import count_components
from .edges import sobel_edges
from .index import DatasetIndex, IndexRecord, count_histogram, write_histogram, write_index
from .netpbm import NetpbmError, read_image, write_image
from .synth import SceneSpec, synth_scene

logger = logging.getLogger(__name__)


@dataclass
class CurationResult:
    index: DatasetIndex
    histogram: dict
    skipped: list = field(default_factory=list)  # (mask path, reason)


def curate(index: DatasetIndex, min_objects: int = 3, connectivity: int = 8, min_area: int = 10) -> CurationResult:
    """Keep records whose mask holds at least ``min_objects`` components.

    Counts are recomputed from the masks; the stored count field is rewritten
    with the recount.
    """
    kept, skipped = [], []
    for rec in index:
        try:
            mask = read_image(index.path(rec.mask))
        except (OSError, NetpbmError) as exc:
            logger.warning("skipping %s: %s", rec.mask, exc)
            skipped.append((rec.mask, str(exc)))
            continue
        if mask.ndim != 2:
            skipped.append((rec.mask, "mask is not single-channel"))
            continue
        n = count_components(mask > 127, connectivity, min_area).count
        if n >= min_objects:
            kept.append(IndexRecord(rec.image, rec.mask, rec.edge, n))
    return CurationResult(index.subset(kept), count_histogram(r.count for r in kept), skipped)


def generate_dataset(out_dir, n_scenes: int, seed: int, size=(64, 64), min_objects: int = 3,
                     max_objects: int = 19, prefix: str = "scene") -> DatasetIndex:
    """Write images/, masks/, edges/, index.tsv and histogram.tsv under ``out_dir``.

    Object counts are drawn uniformly from [min_objects, max_objects]. The
    whole tree is a pure function of the arguments.
    """
    out = Path(out_dir)
    for sub in ("images", "masks", "edges"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_scenes)
    records = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        n = int(rng.integers(min_objects, max_objects + 1))
        scene_seed = int(rng.integers(2**63 - 1))
        image, mask = synth_scene(SceneSpec(size=tuple(size), n_objects=n), scene_seed)
        edge = sobel_edges(mask)
        name = f"{prefix}_{i:05d}"
        rec = IndexRecord(f"images/{name}.ppm", f"masks/{name}.pgm", f"edges/{name}.pgm", n)
        write_image(out / rec.image, image)
        write_image(out / rec.mask, mask * np.uint8(255))
        write_image(out / rec.edge, edge * np.uint8(255))
        records.append(rec)
    index = DatasetIndex(records, out)
    write_index(out / "index.tsv", index)
    write_histogram(out / "histogram.tsv", count_histogram(r.count for r in records))
    return index


def load_sample(index: DatasetIndex, rec: IndexRecord) -> tuple:
    """(image H×W×3 in [0,1], mask {0,1}, edge {0,1}) as float arrays."""
    image = read_image(index.path(rec.image)).astype(np.float64) / 255.0
    mask = (read_image(index.path(rec.mask)) > 127).astype(np.float64)
    edge = (read_image(index.path(rec.edge)) > 127).astype(np.float64)
    return image, mask, edge
