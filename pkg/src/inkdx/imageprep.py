"""Preprocessing for scanned drawings: resize to 224, brightness gain, Gaussian blur."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .core import (
    PIPELINE_VERSION,
    CanonicalImage,
    InkWarning,
    InvalidParams,
    Provenance,
    UndecodableImage,
    param_digest,
)

STEPS = ("resize", "luminosity", "blur")


@dataclass(frozen=True)
class PrepParams:
    target_px: int = 224
    luminosity_target: float = 275.0
    blur_radius: float = 1.0

    def __post_init__(self):
        if self.target_px <= 0:
            raise InvalidParams("target_px must be positive")
        if self.blur_radius < 0:
            raise InvalidParams("blur_radius must be >= 0")

    def digest(self) -> str:
        return param_digest("imageprep", PIPELINE_VERSION, STEPS, self)


def load_gray(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UndecodableImage(f"cannot decode image {path}: {exc}") from None


def center_crop_square(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    if h == w:
        return img
    warnings.warn(f"non-square image {w}x{h}; center-cropping to {min(h, w)}px", InkWarning,
                  stacklevel=2)
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[top:top + s, left:left + s]


def resize_square(img: np.ndarray, target_px: int = 224) -> np.ndarray:
    img = center_crop_square(np.asarray(img, dtype=np.uint8))
    if img.shape[0] == target_px:
        return img.copy()
    mode = "L" if img.ndim == 2 else "RGB"
    out = Image.fromarray(img, mode=mode).resize((target_px, target_px), Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


def scale_luminosity(img: np.ndarray, target: float = 275.0) -> np.ndarray:
    """Multiplicative gain of ``target / 255`` with saturation at 255."""
    v = np.asarray(img, dtype=np.float64) * (target / 255.0)
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def gaussian_blur(img: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Separable Gaussian, truncated at 3 sigma, half-sample symmetric border."""
    img = np.asarray(img, dtype=np.uint8)
    if sigma == 0:
        return img.copy()
    out = ndimage.gaussian_filter(img.astype(np.float64), sigma=sigma, truncate=3.0,
                                  mode="reflect")
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def prep_array(img: np.ndarray, params: PrepParams = PrepParams()) -> np.ndarray:
    out = resize_square(img, params.target_px)
    out = scale_luminosity(out, params.luminosity_target)
    return gaussian_blur(out, params.blur_radius)


def prep_image(path: str | Path, params: PrepParams = PrepParams(),
               sample_id: str = "") -> CanonicalImage:
    pixels = prep_array(load_gray(path), params)
    return CanonicalImage(pixels, Provenance(sample_id, PIPELINE_VERSION, params.digest()))
