"""PPM (P6) overlays: heatmap intensity plus skeleton lines."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .encoder import HeatmapStack
from .skeleton import Pose, SkeletonSpec

PALETTE = np.array([
    [255, 0, 0], [255, 85, 0], [255, 170, 0], [255, 255, 0], [170, 255, 0],
    [85, 255, 0], [0, 255, 0], [0, 255, 85], [0, 255, 170], [0, 255, 255],
    [0, 170, 255], [0, 85, 255], [0, 0, 255], [85, 0, 255], [170, 0, 255],
    [255, 0, 255], [255, 0, 170], [255, 0, 85], [200, 200, 200],
], dtype=np.uint8)


def heatmap_intensity(stack: HeatmapStack, width: int, height: int) -> np.ndarray:
    """Max over channels, nearest-upscaled by the stride, as 0..255 grey."""
    img = np.zeros((height, width), dtype=np.uint8)
    if stack is None or stack.channels == 0:
        return img
    comp = np.clip(stack.data.max(axis=0), 0.0, 1.0)
    r = stack.stride
    cy = np.floor(np.arange(height) / r).astype(int)
    cx = np.floor(np.arange(width) / r).astype(int)
    inside_y = cy < stack.height
    inside_x = cx < stack.width
    vals = np.rint(comp * 255).astype(np.uint8)
    img[np.ix_(inside_y, inside_x)] = vals[np.ix_(cy[inside_y], cx[inside_x])]
    return img


def draw_line(rgb: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    """Bresenham line, clipped to the image."""
    h, w = rgb.shape[:2]
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        if 0 <= x0 < w and 0 <= y0 < h:
            rgb[y0, x0] = color
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def overlay(width: int, height: int, stack: HeatmapStack | None = None,
            poses: Sequence[Pose] = (), spec: SkeletonSpec | None = None) -> np.ndarray:
    grey = heatmap_intensity(stack, width, height)
    rgb = np.repeat(grey[:, :, None], 3, axis=2)
    if spec is not None:
        for pose in poses:
            lab = pose.labelled
            for i, e in enumerate(spec.edges):
                if not (lab[e.a] and lab[e.b]):
                    continue
                (xa, ya), (xb, yb) = np.rint(pose.xy[[e.a, e.b]]).astype(int)
                draw_line(rgb, int(xa), int(ya), int(xb), int(yb), PALETTE[i % len(PALETTE)])
    return rgb


def encode_ppm(rgb: np.ndarray) -> bytes:
    h, w = rgb.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def render_overlay(path, width: int, height: int, stack: HeatmapStack | None = None,
                   poses: Sequence[Pose] = (), spec: SkeletonSpec | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(overlay(width, height, stack, poses, spec)))
