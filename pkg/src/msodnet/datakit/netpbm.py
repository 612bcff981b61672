"""Binary PGM (P5) and PPM (P6) images with 8-bit samples."""
from __future__ import annotations

import os

import numpy as np


class NetpbmError(ValueError):
    """Malformed or unsupported netpbm data; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


_WHITESPACE = b" \t\n\r\v\f"


def _skip(buf: bytes, pos: int) -> int:
    # whitespace and '#' comments
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f"):
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    return pos


def _token(buf: bytes, pos: int) -> tuple[bytes, int]:
    start = pos = _skip(buf, pos)
    n = len(buf)
    while pos < n and buf[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f", b"#"):
        pos += 1
    if start == pos:
        raise NetpbmError("unexpected end of header", pos)
    return buf[start:pos], pos


def _int_field(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    start = _skip(buf, pos)
    tok, pos = _token(buf, start)
    if not tok.isdigit():
        raise NetpbmError(f"{what} is not a decimal integer: {tok!r}", start)
    return int(tok), pos


def decode(buf: bytes) -> np.ndarray:
    """Parse P5/P6 bytes into an H×W (gray) or H×W×3 (color) uint8 array."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r}; expected P5 or P6", 0)
    pos = 2
    width, pos = _int_field(buf, pos, "width")
    height, pos = _int_field(buf, pos, "height")
    maxval_at = _skip(buf, pos)
    maxval, pos = _int_field(buf, pos, "maxval")
    if maxval != 255:
        raise NetpbmError(f"maxval {maxval} not supported; only 255", maxval_at)
    if width < 1 or height < 1:
        raise NetpbmError(f"bad dimensions {width}x{height}", 2)
    if pos >= len(buf) or buf[pos : pos + 1] not in tuple(bytes([c]) for c in _WHITESPACE):
        raise NetpbmError("missing whitespace after maxval", pos)
    pos += 1
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    actual = len(buf) - pos
    if actual < expected:
        raise NetpbmError(f"truncated payload: expected {expected} bytes, got {actual}", pos)
    data = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape).copy()


def encode(image: np.ndarray) -> bytes:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise TypeError(f"expected uint8 samples, got {arr.dtype}")
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected H×W or H×W×3 array, got shape {arr.shape}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(arr).tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def write_image(path, image: np.ndarray) -> None:
    data = encode(image)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def to_unit(image: np.ndarray) -> np.ndarray:
    """uint8 samples to floats in [0, 1] (v / 255)."""
    return np.asarray(image, dtype=np.float64) / 255.0


def from_unit(values: np.ndarray) -> np.ndarray:
    """Floats in [0, 1] to uint8 by rounding to the nearest level."""
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
