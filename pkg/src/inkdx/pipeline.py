"""Turn manifest entries of either modality into canonical images."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from .core import CanonicalImage, DatasetManifest, ManifestEntry, Modality, read_recording
from .imageprep import PrepParams, prep_image
from .raster import RenderParams, render

DIGEST_KEY = "inkdx-digest"


@dataclass(frozen=True)
class ImagePipeline:
    render: RenderParams = RenderParams()
    prep: PrepParams = PrepParams()

    def digest_for(self, modality: Modality) -> str:
        return self.render.digest() if modality is Modality.TIMESERIES else self.prep.digest()

    def canonical(self, manifest: DatasetManifest, entry: ManifestEntry) -> CanonicalImage:
        path = manifest.resolve(entry)
        if entry.modality is Modality.TIMESERIES:
            rec = read_recording(path, subject_id=entry.subject_id, task_id=entry.task_id,
                                 source_dataset=manifest.dataset_name)
            return render(rec, self.render, sample_id=entry.sample_id)
        return prep_image(path, self.prep, sample_id=entry.sample_id)


class ImageCache:
    """In-memory memo of canonical pixels keyed by (dataset, sample, parameter digest)."""

    def __init__(self, pipeline: ImagePipeline = ImagePipeline()):
        self.pipeline = pipeline
        self._store: dict[tuple, np.ndarray] = {}

    def pixels(self, manifest: DatasetManifest, entry: ManifestEntry) -> np.ndarray:
        key = (manifest.dataset_name, entry.sample_id, self.pipeline.digest_for(entry.modality))
        px = self._store.get(key)
        if px is None:
            px = self._store[key] = self.pipeline.canonical(manifest, entry).pixels
        return px

    def batch(self, manifest: DatasetManifest, entries) -> np.ndarray:
        if not entries:
            return np.zeros((0, 224, 224), dtype=np.uint8)
        return np.stack([self.pixels(manifest, e) for e in entries])


def save_png(img: CanonicalImage, path: str | Path) -> None:
    info = PngImagePlugin.PngInfo()
    info.add_text(DIGEST_KEY, img.provenance.param_digest)
    info.add_text("inkdx-sample", img.provenance.sample_id)
    info.add_text("inkdx-version", img.provenance.pipeline_version)
    Image.fromarray(np.asarray(img.pixels), mode="L").save(path, format="PNG", pnginfo=info)


def png_digest(path: str | Path) -> str | None:
    """Digest embedded by :func:`save_png`, or None for foreign/unreadable files."""
    try:
        with Image.open(path) as im:
            return im.text.get(DIGEST_KEY)  # type: ignore[attr-defined]
    except (OSError, AttributeError):
        return None
