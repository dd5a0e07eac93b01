"""Box rendering to binary PPM (P6) images.

When no source image is given, the canvas is a grey heatmap of the
feature map (channel mean, nearest-neighbor upscaled by the stride) so
the output always has the source image's pixel dimensions.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Sample
from .errors import FormatError
from .pipeline import PartExtraction

__all__ = ["box_palette", "read_ppm", "render_boxes", "write_ppm"]

_PALETTE = (
    (255, 64, 64), (64, 255, 64), (64, 64, 255), (255, 224, 32),
    (224, 32, 255), (32, 255, 224), (255, 128, 0), (128, 0, 255),
)


def box_palette(index: int):
    return _PALETTE[index % len(_PALETTE)]


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (height, width, 3) uint8 array as binary PPM."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"PPM image must be (H, W, 3), got {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    """Minimal binary PPM reader returning (height, width, 3) uint8."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise FormatError(f"{path}: not a binary PPM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    expected = pos + 3 * w * h
    if len(raw) < expected:
        raise FormatError(
            f"{path}: truncated, missing {expected - len(raw)} bytes"
        )
    return np.frombuffer(raw[pos:expected], dtype=np.uint8).reshape(h, w, 3).copy()


def _heatmap_canvas(sample: Sample) -> np.ndarray:
    fm = sample.feature_map
    heat = fm.data.mean(axis=0)  # (W, H)
    lo, hi = heat.min(), heat.max()
    scale = (heat - lo) / (hi - lo) if hi > lo else np.zeros_like(heat)
    grey = (scale * 255.0).astype(np.uint8)
    # upscale by stride; image rows are y, columns are x
    grey = np.repeat(np.repeat(grey, fm.stride, axis=0), fm.stride, axis=1)
    return np.stack([grey.T] * 3, axis=2).copy()


def _draw_rect(image: np.ndarray, box, color) -> None:
    x0, y0, x1, y1 = box
    h, w, _ = image.shape
    x0, x1 = max(x0, 0), min(x1, w - 1)
    y0, y1 = max(y0, 0), min(y1, h - 1)
    image[y0, x0 : x1 + 1] = color
    image[y1, x0 : x1 + 1] = color
    image[y0 : y1 + 1, x0] = color
    image[y0 : y1 + 1, x1] = color


def render_boxes(sample: Sample, extraction: PartExtraction, path,
                 source_image: np.ndarray | None = None) -> tuple:
    """Draw each detector's top-1 box on the canvas and write a PPM.

    Box pixel coordinates are the feature-cell corners scaled by the map
    stride. Returns the (width, height) of the written image.
    """
    canvas = source_image.copy() if source_image is not None \
        else _heatmap_canvas(sample)
    for det in range(len(extraction.ranked)):
        prop = extraction.top1_box(det)
        _draw_rect(canvas, prop.image_box(extraction.stride), box_palette(det))
    write_ppm(path, canvas)
    return canvas.shape[1], canvas.shape[0]
