"""Domain types, on-disk formats and manifest handling."""

from __future__ import annotations

import hashlib
import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

PIPELINE_VERSION = "1"
CANVAS_PX = 224


# --------------------------------------------------------------------------
# errors


class InkdxError(Exception):
    """Base class for all pipeline errors."""

    category = "error"


class DataError(InkdxError):
    category = "data"


class RuntimeFailure(InkdxError):
    category = "runtime"


class MissingFile(DataError):
    pass


class SchemaViolation(DataError):
    pass


class DuplicateId(DataError):
    pass


class UndecodableImage(DataError):
    pass


class UnmappablePath(DataError):
    pass


class ParseError(DataError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}, line {line}: {message}")


class UnknownTask(DataError):
    pass


class InvalidParams(DataError):
    pass


class EmptyAfterFilter(DataError):
    pass


class InkWarning(UserWarning):
    """Non-fatal data condition worth surfacing (degenerate input, weak grouping)."""


# --------------------------------------------------------------------------
# enumerations


class DiagnosticClass(str, Enum):
    CTL = "CTL"
    PD = "PD"
    AD = "AD"

    @classmethod
    def parse(cls, value) -> "DiagnosticClass":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise SchemaViolation(f"unknown diagnostic class {value!r}") from None


class Modality(str, Enum):
    IMAGE = "image"
    TIMESERIES = "timeseries"


NLS_TASKS = (
    "SpiralDom",
    "SpiralNonDom",
    "SpiralPaTaKa",
    "Numbers",
    "CopyText",
    "CopyReadText",
    "FreeWrite",
    "DrawClock",
    "CopyCube",
    "CopyImage",
)
NLS_SPIRAL_TASKS = NLS_TASKS[:3]
IMAGE_TASKS = ("Spiral", "Meander", "Circle")
TASKS = NLS_TASKS + IMAGE_TASKS


def parse_classes(value: str | Sequence) -> tuple[DiagnosticClass, DiagnosticClass]:
    """Parse a class pair such as ``"PD,CTL"``; only binary comparisons against CTL exist."""
    items = value.split(",") if isinstance(value, str) else list(value)
    pair = tuple(DiagnosticClass.parse(v) for v in items)
    if len(pair) != 2 or set(pair) not in ({DiagnosticClass.CTL, DiagnosticClass.PD},
                                           {DiagnosticClass.CTL, DiagnosticClass.AD}):
        raise InvalidParams(f"class pair must be PD,CTL or AD,CTL, got {value!r}")
    return pair  # type: ignore[return-value]


# --------------------------------------------------------------------------
# recordings


@dataclass(frozen=True)
class PenSample:
    t: float
    x: float
    y: float
    pressure: float
    pen_down: bool = True
    azimuth: float | None = None
    altitude: float | None = None


@dataclass(frozen=True)
class InkRecording:
    samples: tuple[PenSample, ...]
    subject_id: str = ""
    task_id: str = ""
    source_dataset: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)

    def arrays(self) -> dict[str, np.ndarray]:
        s = self.samples
        return {
            "t": np.array([p.t for p in s], dtype=np.float64),
            "x": np.array([p.x for p in s], dtype=np.float64),
            "y": np.array([p.y for p in s], dtype=np.float64),
            "pressure": np.array([p.pressure for p in s], dtype=np.float64),
            "pen_down": np.array([p.pen_down for p in s], dtype=bool),
        }

    def transformed(self, scale: float, dx: float, dy: float) -> "InkRecording":
        """Uniformly scale and translate coordinates, keeping everything else."""
        samples = tuple(
            PenSample(p.t, p.x * scale + dx, p.y * scale + dy, p.pressure, p.pen_down,
                      p.azimuth, p.altitude)
            for p in self.samples
        )
        return InkRecording(samples, self.subject_id, self.task_id, self.source_dataset)


@dataclass(frozen=True)
class Violation:
    kind: str
    index: int | None
    message: str


def validate_recording(rec: InkRecording) -> list[Violation]:
    """Check every PenSample invariant; an empty list means the recording is admissible."""
    if not rec.samples:
        return [Violation("empty_recording", None, "recording has no samples")]
    out = []
    prev_t = None
    for i, s in enumerate(rec.samples):
        values = (s.t, s.x, s.y, s.pressure)
        if not all(math.isfinite(v) for v in values):
            out.append(Violation("non_finite", i, f"non-finite value in sample {i}"))
            continue
        if s.t < 0:
            out.append(Violation("negative_time", i, f"t={s.t} < 0"))
        if s.pressure < 0:
            out.append(Violation("negative_pressure", i, f"pressure={s.pressure} < 0"))
        if prev_t is not None and s.t < prev_t:
            out.append(Violation("non_monotone_time", i, f"t={s.t} after t={prev_t}"))
        prev_t = s.t
    return out


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def format_recording(rec: InkRecording) -> str:
    has_tilt = any(s.azimuth is not None or s.altitude is not None for s in rec.samples)
    header = "# t x y pressure pen_down" + (" azimuth altitude" if has_tilt else "")
    lines = [header]
    for s in rec.samples:
        cols = [_fmt(s.t), _fmt(s.x), _fmt(s.y), _fmt(s.pressure), "1" if s.pen_down else "0"]
        if has_tilt:
            cols += ["nan" if s.azimuth is None else _fmt(s.azimuth),
                     "nan" if s.altitude is None else _fmt(s.altitude)]
        lines.append(" ".join(cols))
    return "\n".join(lines) + "\n"


def write_recording(rec: InkRecording, path: str | os.PathLike) -> None:
    Path(path).write_text(format_recording(rec))


def parse_recording(text: str, *, path: str = "<string>", subject_id: str = "",
                    task_id: str = "", source_dataset: str = "") -> InkRecording:
    samples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split()
        if len(cols) not in (5, 7):
            raise ParseError(path, lineno, f"expected 5 or 7 columns, got {len(cols)}")
        try:
            t, x, y, p = (float(c) for c in cols[:4])
            pen_down = bool(int(float(cols[4])))
            az = alt = None
            if len(cols) == 7:
                az = None if cols[5] == "nan" else float(cols[5])
                alt = None if cols[6] == "nan" else float(cols[6])
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        samples.append(PenSample(t, x, y, p, pen_down, az, alt))
    return InkRecording(tuple(samples), subject_id, task_id, source_dataset)


def read_recording(path: str | os.PathLike, **meta) -> InkRecording:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"recording not found: {path}")
    return parse_recording(path.read_text(), path=str(path), **meta)


# --------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    subject_id: str
    label: DiagnosticClass
    task_id: str
    modality: Modality
    path: str
    aspect_ratio: float | None = None

    def to_json(self) -> dict:
        d = {
            "sample_id": self.sample_id,
            "subject_id": self.subject_id,
            "label": self.label.value,
            "task_id": self.task_id,
            "modality": self.modality.value,
            "path": self.path,
        }
        if self.aspect_ratio is not None:
            d["aspect_ratio"] = self.aspect_ratio
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ManifestEntry":
        if not isinstance(d, dict):
            raise SchemaViolation(f"entry must be an object, got {type(d).__name__}")
        missing = {"sample_id", "subject_id", "label", "task_id", "modality", "path"} - d.keys()
        if missing:
            raise SchemaViolation(f"entry {d.get('sample_id', '?')!r} missing fields {sorted(missing)}")
        for key in ("sample_id", "subject_id", "task_id", "path"):
            if not isinstance(d[key], str) or not d[key]:
                raise SchemaViolation(f"entry field {key!r} must be a non-empty string")
        if d["task_id"] not in TASKS:
            raise SchemaViolation(f"unknown task_id {d['task_id']!r}")
        try:
            modality = Modality(d["modality"])
        except ValueError:
            raise SchemaViolation(f"unknown modality {d['modality']!r}") from None
        ar = d.get("aspect_ratio")
        return cls(d["sample_id"], d["subject_id"], DiagnosticClass.parse(d["label"]),
                   d["task_id"], modality, d["path"], None if ar is None else float(ar))


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    has_template: bool
    entries: tuple[ManifestEntry, ...]
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.sample_id in seen:
                raise DuplicateId(f"duplicate sample_id {e.sample_id!r}")
            seen.add(e.sample_id)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / entry.path

    def class_counts(self) -> dict[str, int]:
        c = Counter(e.label.value for e in self.entries)
        return {k.value: c.get(k.value, 0) for k in DiagnosticClass}

    def task_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(e.task_id for e in self.entries).items()))

    def subjects(self) -> dict[str, DiagnosticClass]:
        """Map subject_id to its class; a subject carrying two classes is a schema error."""
        out: dict[str, DiagnosticClass] = {}
        for e in self.entries:
            prev = out.setdefault(e.subject_id, e.label)
            if prev != e.label:
                raise SchemaViolation(f"subject {e.subject_id!r} has samples of classes "
                                      f"{prev.value} and {e.label.value}")
        return out

    def filter(self, *, classes: Iterable[DiagnosticClass] | None = None,
               tasks: Iterable[str] | None = None) -> "DatasetManifest":
        cls_set = None if classes is None else set(classes)
        task_set = None if tasks is None else set(tasks)
        kept = tuple(e for e in self.entries
                     if (cls_set is None or e.label in cls_set)
                     and (task_set is None or e.task_id in task_set))
        return DatasetManifest(self.dataset_name, self.has_template, kept, self.root)

    def to_json(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "has_template": self.has_template,
            "entries": [e.to_json() for e in self.entries],
        }


def serialize_manifest(m: DatasetManifest) -> str:
    return json.dumps(m.to_json(), indent=2) + "\n"


def manifest_from_json(obj: Any, root: Path | None = None) -> DatasetManifest:
    if not isinstance(obj, dict):
        raise SchemaViolation("manifest must be a JSON object")
    for key, typ in (("dataset_name", str), ("has_template", bool), ("entries", list)):
        if not isinstance(obj.get(key), typ):
            raise SchemaViolation(f"manifest field {key!r} missing or not {typ.__name__}")
    entries = [ManifestEntry.from_json(d) for d in obj["entries"]]
    return DatasetManifest(obj["dataset_name"], obj["has_template"], tuple(entries), root)


def load_manifest(path: str | os.PathLike, *, check_files: bool = True) -> DatasetManifest:
    """Load and validate a manifest; entry paths resolve relative to the manifest's directory."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"manifest not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: not valid JSON ({exc})") from None
    m = manifest_from_json(obj, root=path.parent)
    if check_files:
        for e in m.entries:
            if not m.resolve(e).exists():
                raise MissingFile(f"sample {e.sample_id!r} references missing file {m.resolve(e)}")
    return m


def save_manifest(m: DatasetManifest, path: str | os.PathLike) -> None:
    Path(path).write_text(serialize_manifest(m))


# --------------------------------------------------------------------------
# canonical images


@dataclass(frozen=True)
class Provenance:
    sample_id: str
    pipeline_version: str
    param_digest: str


@dataclass(frozen=True)
class CanonicalImage:
    pixels: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.shape != (CANVAS_PX, CANVAS_PX):
            raise SchemaViolation(f"canonical image must be {CANVAS_PX}x{CANVAS_PX}, got {px.shape}")
        if px.dtype != np.uint8:
            raise SchemaViolation(f"canonical image must be uint8, got {px.dtype}")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    def as_rgb(self) -> np.ndarray:
        return np.repeat(self.pixels[:, :, None], 3, axis=2)


# --------------------------------------------------------------------------
# digests


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def param_digest(*parts) -> str:
    """Stable short hash over the effective parameters (dataclasses, dicts, scalars)."""
    payload = json.dumps([_jsonable(p) for p in parts], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
