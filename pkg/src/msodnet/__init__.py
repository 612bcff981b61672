"""Multiple salient object detection with dual-space non-local guidance."""

__version__ = "0.1.0"
