"""Ink renderer: one black dot per pen sample, alpha-composited onto a white canvas.

Dots are sized by normalized pressure and drawn at a fixed low opacity, so slow
strokes (many samples per pixel) come out darker than fast ones.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    PIPELINE_VERSION,
    CanonicalImage,
    EmptyAfterFilter,
    InkRecording,
    InkWarning,
    InvalidParams,
    Provenance,
    param_digest,
)


@dataclass(frozen=True)
class RenderParams:
    canvas_px: int = 224
    margin_frac: float = 0.05
    r_min_px: float = 0.75
    r_max_px: float = 3.0
    opacity: float = 0.10
    include_pen_up: bool = False

    def __post_init__(self):
        if not 0 < self.opacity <= 1:
            raise InvalidParams(f"opacity must be in (0, 1], got {self.opacity}")
        if not 0 <= self.margin_frac < 0.5:
            raise InvalidParams(f"margin_frac must be in [0, 0.5), got {self.margin_frac}")
        if not 0 < self.r_min_px <= self.r_max_px:
            raise InvalidParams("need 0 < r_min_px <= r_max_px")
        if self.canvas_px <= 0:
            raise InvalidParams("canvas_px must be positive")

    def digest(self) -> str:
        return param_digest("raster", PIPELINE_VERSION, self)


def _rendered_arrays(rec: InkRecording, params: RenderParams):
    a = rec.arrays()
    keep = np.ones(len(rec), dtype=bool) if params.include_pen_up else a["pen_down"]
    if not keep.any():
        raise EmptyAfterFilter(
            "recording has no samples to render"
            + ("" if params.include_pen_up else " (no pen-down samples)")
        )
    return a["x"][keep], a["y"][keep], a["pressure"][keep]


def _to_pixels(x: np.ndarray, y: np.ndarray, params: RenderParams) -> np.ndarray:
    n = params.canvas_px
    margin = n * params.margin_frac
    content = n - 2 * margin
    x0, y0 = x.min(), y.min()
    w, h = x.max() - x0, y.max() - y0
    extent = max(w, h)
    # relative coordinates in [0, 1] along the longer axis cancel any uniform scale/shift
    if extent > 0:
        rx, ry = (x - x0) / extent, (y - y0) / extent
        rw, rh = w / extent, h / extent
    else:
        rx, ry = np.zeros_like(x), np.zeros_like(y)
        rw = rh = 0.0
    u = margin + content * (0.5 * (1 - rw) + rx)
    # device y points up, image rows point down
    v = margin + content * (0.5 * (1 - rh) + (rh - ry))
    return np.column_stack([u, v])


def normalize_coords(rec: InkRecording, params: RenderParams = RenderParams()) -> np.ndarray:
    """Map rendered samples to continuous pixel positions ``(u, v)``, shape (N, 2).

    Pixel ``(row i, col j)`` covers ``[j, j+1) x [i, i+1)``; the ink bounding box is
    fitted into the canvas minus margins with the aspect ratio preserved, and the
    shorter axis is centered.
    """
    x, y, _ = _rendered_arrays(rec, params)
    return _to_pixels(x, y, params)


def _pressure_scale(p: np.ndarray) -> np.ndarray:
    top = p.max()
    if top <= 0:
        warnings.warn("all rendered pressures are zero; using full-size dots", InkWarning,
                      stacklevel=3)
        return np.ones_like(p)
    return p / top


def normalize_pressure(rec: InkRecording, params: RenderParams = RenderParams()) -> np.ndarray:
    """Per-recording max scaling of pressure over the rendered samples."""
    _, _, p = _rendered_arrays(rec, params)
    return _pressure_scale(p)


def coverage_counts(rec: InkRecording, params: RenderParams = RenderParams()) -> np.ndarray:
    """Number of dots covering each pixel center (int32, canvas_px x canvas_px)."""
    x, y, p = _rendered_arrays(rec, params)
    uv = _to_pixels(x, y, params)
    radii = params.r_min_px + _pressure_scale(p) * (params.r_max_px - params.r_min_px)
    n = params.canvas_px
    counts = np.zeros((n, n), dtype=np.int32)
    for (u, v), r in zip(uv, radii):
        j0 = max(0, math.floor(u - r - 0.5))
        j1 = min(n - 1, math.ceil(u + r - 0.5))
        i0 = max(0, math.floor(v - r - 0.5))
        i1 = min(n - 1, math.ceil(v + r - 0.5))
        if j0 > j1 or i0 > i1:
            continue
        dx = np.arange(j0, j1 + 1) + 0.5 - u
        dy = np.arange(i0, i1 + 1) + 0.5 - v
        inside = dy[:, None] ** 2 + dx[None, :] ** 2 <= r * r
        counts[i0:i1 + 1, j0:j1 + 1] += inside
    return counts


def intensity_table(opacity: float, n_max: int) -> np.ndarray:
    """Pre-quantization intensity after 0..n_max source-over black dots on white.

    Built by repeated multiplication so it matches sequential compositing bit for bit.
    """
    table = np.empty(n_max + 1, dtype=np.float64)
    table[0] = 255.0
    keep = 1.0 - opacity
    for k in range(1, n_max + 1):
        table[k] = table[k - 1] * keep
    return table


def render_float(rec: InkRecording, params: RenderParams = RenderParams()) -> np.ndarray:
    counts = coverage_counts(rec, params)
    return intensity_table(params.opacity, int(counts.max()))[counts]


def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def render(rec: InkRecording, params: RenderParams = RenderParams(),
           sample_id: str = "") -> CanonicalImage:
    if params.canvas_px != 224:
        raise InvalidParams("canonical images are 224x224; use render_float for other sizes")
    pixels = quantize(render_float(rec, params))
    return CanonicalImage(pixels, Provenance(sample_id, PIPELINE_VERSION, params.digest()))
