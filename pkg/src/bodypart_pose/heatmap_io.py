"""FHM1 binary heatmap files.

Layout, all little-endian: magic ``b"FHM1"``, u32 channels, u32 height,
u32 width, f32 stride, then channel-major f32 data.
"""

from __future__ import annotations

import struct

import numpy as np

from .encoder import HeatmapStack
from .errors import HeatmapFormatError

MAGIC = b"FHM1"
_HEADER = struct.Struct("<4sIIIf")


def dumps(stack: HeatmapStack) -> bytes:
    c, h, w = stack.shape
    header = _HEADER.pack(MAGIC, c, h, w, float(stack.stride))
    return header + np.ascontiguousarray(stack.data, dtype="<f4").tobytes()


def loads(buf: bytes) -> HeatmapStack:
    if len(buf) < _HEADER.size:
        raise HeatmapFormatError("truncated FHM1 header")
    magic, c, h, w, stride = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise HeatmapFormatError(f"bad magic {magic!r}")
    expected = _HEADER.size + 4 * c * h * w
    if len(buf) != expected:
        raise HeatmapFormatError(f"expected {expected} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(c, h, w)
    return HeatmapStack(data.astype(np.float64), float(stride))


def write_heatmap(path, stack: HeatmapStack) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(stack))


def read_heatmap(path) -> HeatmapStack:
    with open(path, "rb") as fh:
        return loads(fh.read())
