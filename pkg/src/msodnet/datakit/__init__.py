"""Synthetic scenes, edge ground truth, object counting, curation and image I/O."""
from .components import Components, count_components
from .curate import CurationResult, curate, generate_dataset, load_sample
from .edges import sobel_edges
from .index import DatasetIndex, IndexRecord, read_histogram, read_index, write_histogram, write_index
from .netpbm import NetpbmError, read_image, write_image
from .synth import SceneError, SceneSpec, synth_scene

__all__ = [
    "Components",
    "CurationResult",
    "DatasetIndex",
    "IndexRecord",
    "NetpbmError",
    "SceneError",
    "SceneSpec",
    "count_components",
    "curate",
    "generate_dataset",
    "load_sample",
    "read_histogram",
    "read_image",
    "read_index",
    "sobel_edges",
    "synth_scene",
    "write_histogram",
    "write_image",
    "write_index",
]
