"""Adapters that turn source corpora (image folders, digitizer exports) into manifests.

A corpus is described by an :class:`AdapterSpec`: which files to pick up, regex
rules that read subject / class / task out of each relative path, and, for
time series, which columns hold which signal.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .core import (
    TASKS,
    DatasetManifest,
    DiagnosticClass,
    InkRecording,
    InkWarning,
    ManifestEntry,
    Modality,
    ParseError,
    PenSample,
    SchemaViolation,
    UndecodableImage,
    UnknownTask,
    UnmappablePath,
    save_manifest,
    validate_recording,
    write_recording,
)

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = ("png", "jpg", "jpeg", "bmp", "tif", "tiff")

DEFAULT_LABEL_MAP = {
    "ctl": "CTL", "control": "CTL", "controls": "CTL", "healthy": "CTL", "h": "CTL", "hc": "CTL",
    "pd": "PD", "patient": "PD", "patients": "PD", "parkinson": "PD", "p": "PD",
    "ad": "AD", "alzheimer": "AD",
}
DEFAULT_TASK_MAP = {t.lower(): t for t in TASKS} | {
    "spirals": "Spiral", "meanders": "Meander", "circles": "Circle",
}
CANONICAL_COLUMNS = {"t": 0, "x": 1, "y": 2, "pressure": 3, "pen_down": 4, "azimuth": 5,
                     "altitude": 6}


@dataclass(frozen=True)
class PathRule:
    pattern: str  # regex over the root-relative posix path; groups subject/label/task
    label: str | None = None
    task: str | None = None


@dataclass(frozen=True)
class AdapterSpec:
    dataset_name: str
    modality: Modality
    rules: tuple[PathRule, ...]
    include: tuple[str, ...] = ()
    ignore_tasks: tuple[str, ...] = ()  # regexes over the raw task string
    label_map: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))
    task_map: dict = field(default_factory=lambda: dict(DEFAULT_TASK_MAP))
    labels_file: str | None = None  # CSV "subject,label" relative to the root
    columns: dict = field(default_factory=lambda: dict(CANONICAL_COLUMNS))
    header_lines: int = 0
    delimiter: str | None = None
    time_scale: float = 1.0  # source time unit -> milliseconds
    has_template: bool = False

    @classmethod
    def from_json(cls, d: dict) -> "AdapterSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SchemaViolation(f"unknown adapter spec fields {sorted(unknown)}")
        d = dict(d)
        d["modality"] = Modality(d["modality"])
        d["rules"] = tuple(PathRule(**r) if isinstance(r, dict) else PathRule(r)
                           for r in d["rules"])
        for key in ("include", "ignore_tasks"):
            if key in d:
                d[key] = tuple(d[key])
        # user maps extend the defaults rather than replacing them
        if "label_map" in d:
            d["label_map"] = DEFAULT_LABEL_MAP | {k.lower(): v for k, v in d["label_map"].items()}
        if "task_map" in d:
            d["task_map"] = DEFAULT_TASK_MAP | {k.lower(): v for k, v in d["task_map"].items()}
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "AdapterSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def _image_include(*dirs: str) -> tuple[str, ...]:
    return tuple(f"{d}**/*.{ext}" for d in dirs for ext in IMAGE_EXTENSIONS)


_CLASS_TASK_SUBJECT = r"^(?P<label>[^/]+)/(?P<task>[^/]+)/(?P<subject>[^/_.]+)[^/]*\.\w+$"

PRESETS: dict[str, AdapterSpec] = {
    # <Class>/<Task>/<subject>_<n>.<ext>
    "handpd": AdapterSpec("HandPD", Modality.IMAGE, (PathRule(_CLASS_TASK_SUBJECT),),
                          include=_image_include(""), has_template=True),
    "newhandpd": AdapterSpec("NewHandPD", Modality.IMAGE, (PathRule(_CLASS_TASK_SUBJECT),),
                             include=_image_include(""), has_template=True),
    # spiral/{training,testing}/{healthy,parkinson}/V<subject>XX<n>.png
    "parkd": AdapterSpec(
        "ParkD", Modality.IMAGE,
        (PathRule(r"^(?P<task>spiral)/(?:training|testing)/(?P<label>healthy|parkinson)/"
                  r"(?P<subject>V\d+)[A-Z]+\d+\.\w+$"),),
        include=_image_include("spiral/"),
    ),
    # <subject>/<subject>__1_<session>.svc, labels from labels.csv; task 1 is the spiral
    "pahaw": AdapterSpec(
        "PaHaW", Modality.TIMESERIES,
        (PathRule(r"^(?P<subject>\d+)/\d+__1_\d+\.svc$", task="Spiral"),),
        include=("**/*__1_*.svc",),
        labels_file="labels.csv",
        columns={"x": 0, "y": 1, "t": 2, "pen_down": 3, "azimuth": 4, "altitude": 5,
                 "pressure": 6},
        header_lines=1,
    ),
    # <Class>/<subject>/<Task>[_<n>].txt in the canonical column layout
    "nls": AdapterSpec(
        "NLS", Modality.TIMESERIES,
        (PathRule(r"^(?P<label>[^/]+)/(?P<subject>[^/]+)/(?P<task>[A-Za-z]+)(?:_\d+)?\.txt$"),),
        include=("**/*.txt",),
        ignore_tasks=(r"(?i)^point",),
    ),
}


def get_adapter(name: str, spec_path: str | Path | None = None) -> AdapterSpec:
    if spec_path is not None:
        return AdapterSpec.load(spec_path)
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise SchemaViolation(f"no adapter preset {name!r}; presets: {sorted(PRESETS)}") from None


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Match:
    rel: str
    subject: str | None
    label: DiagnosticClass | None
    raw_task: str | None


def _candidates(root: Path, spec: AdapterSpec) -> list[str]:
    patterns = spec.include or ("**/*",)
    found = set()
    for pat in patterns:
        for p in root.glob(pat):
            if p.is_file() and not p.name.startswith("."):
                found.add(p.relative_to(root).as_posix())
    if spec.labels_file:
        found.discard(spec.labels_file)
    return sorted(found)


def _read_labels(root: Path, spec: AdapterSpec) -> dict[str, str]:
    if not spec.labels_file:
        return {}
    path = root / spec.labels_file
    if not path.exists():
        raise SchemaViolation(f"labels file {path} required by adapter {spec.dataset_name!r}")
    with path.open(newline="") as fh:
        return {row[0].strip(): row[1].strip() for row in csv.reader(fh)
                if len(row) >= 2 and row[0].strip() and not row[0].startswith("#")}


def _map_label(raw: str, spec: AdapterSpec) -> DiagnosticClass:
    mapped = spec.label_map.get(raw.lower(), raw)
    return DiagnosticClass.parse(mapped)


def _match(rel: str, spec: AdapterSpec, labels: dict[str, str]) -> _Match:
    for rule in spec.rules:
        m = re.match(rule.pattern, rel)
        if not m:
            continue
        g = m.groupdict()
        subject = g.get("subject")
        raw_label = rule.label or g.get("label") or (labels.get(subject) if subject else None)
        if raw_label is None:
            raise UnmappablePath(f"{rel}: no class from path rule or labels file")
        raw_task = rule.task or g.get("task")
        return _Match(rel, subject, _map_label(raw_label, spec), raw_task)
    raise UnmappablePath(f"{rel} matches no path rule of adapter {spec.dataset_name!r}")


def _task(raw: str | None, spec: AdapterSpec, rel: str) -> str:
    if raw is None:
        raise UnknownTask(f"{rel}: path rule yields no task")
    task = spec.task_map.get(raw.lower())
    if task is None or task not in TASKS:
        raise UnknownTask(f"{rel}: unknown task {raw!r}")
    return task


def _ignored(raw_task: str | None, spec: AdapterSpec) -> bool:
    return raw_task is not None and any(re.search(p, raw_task) for p in spec.ignore_tasks)


def _sample_id(spec: AdapterSpec, rel: str) -> str:
    stem = rel.rsplit(".", 1)[0]
    return f"{spec.dataset_name}-" + re.sub(r"[^A-Za-z0-9_.-]+", "_", stem)


def _subject(match: _Match, sample_id: str, warned: list) -> str:
    if match.subject:
        return match.subject
    if not warned:
        warnings.warn("path rules carry no subject; each file becomes its own subject, "
                      "which weakens subject-disjoint splitting", InkWarning, stacklevel=4)
        warned.append(True)
    return sample_id


def _report(manifest: DatasetManifest) -> None:
    log.info("%s: %d entries, per class %s, per task %s", manifest.dataset_name,
             len(manifest), manifest.class_counts(), manifest.task_counts())


def _check_root(root: Path) -> None:
    if not root.is_dir():
        raise SchemaViolation(f"dataset root {root} is not a directory")


def ingest_image_dataset(root: str | Path, spec: AdapterSpec, out: str | Path | None = None
                         ) -> DatasetManifest:
    """Enumerate every image under ``root``; writes ``manifest.json`` into ``out`` if given."""
    root = Path(root)
    _check_root(root)
    labels = _read_labels(root, spec)
    base = Path(out) if out is not None else root
    entries, warned = [], []
    rels = _candidates(root, spec)
    if not rels:
        warnings.warn(f"no files found under {root} for adapter {spec.dataset_name!r}",
                      InkWarning, stacklevel=2)
    for rel in rels:
        match = _match(rel, spec, labels)
        if _ignored(match.raw_task, spec):
            continue
        task = _task(match.raw_task, spec, rel)
        path = root / rel
        try:
            with Image.open(path) as im:
                im.verify()
            with Image.open(path) as im:
                w, h = im.size
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise UndecodableImage(f"cannot decode {path}: {exc}") from None
        sid = _sample_id(spec, rel)
        entries.append(ManifestEntry(sid, _subject(match, sid, warned), match.label, task,
                                     Modality.IMAGE, _relpath(path, base), round(w / h, 6)))
    manifest = DatasetManifest(spec.dataset_name, spec.has_template, tuple(entries), base)
    if out is not None:
        base.mkdir(parents=True, exist_ok=True)
        save_manifest(manifest, base / "manifest.json")
    _report(manifest)
    return manifest


def _relpath(path: Path, base: Path) -> str:
    return Path(os.path.relpath(path.resolve(), base.resolve())).as_posix()


def parse_source_recording(path: Path, spec: AdapterSpec) -> list[PenSample]:
    cols = spec.columns
    for required in ("t", "x", "y", "pressure"):
        if required not in cols:
            raise SchemaViolation(f"adapter column mapping lacks {required!r}")
    width = max(cols.values()) + 1
    optional = {k: cols.get(k) for k in ("pen_down", "azimuth", "altitude")}
    rows = []
    lines = path.read_text().splitlines()
    t0 = None
    for lineno, line in enumerate(lines, start=1):
        if lineno <= spec.header_lines:
            continue
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split(spec.delimiter) if spec.delimiter else s.split()
        parts = [p.strip() for p in parts]
        # the canonical layout allows dropping the trailing tilt or pen-state columns
        need = max(cols[k] for k in ("t", "x", "y", "pressure")) + 1
        if len(parts) < need:
            raise ParseError(path, lineno, f"expected {width} columns, got {len(parts)}")
        try:
            t, x, y, p = (float(parts[cols[k]]) for k in ("t", "x", "y", "pressure"))
            extra = {}
            for k, idx in optional.items():
                if idx is not None and idx < len(parts) and parts[idx].lower() != "nan":
                    extra[k] = float(parts[idx])
        except ValueError as exc:
            raise ParseError(path, lineno, f"non-numeric cell ({exc})") from None
        if t0 is None:
            t0 = t
        pen_down = bool(extra["pen_down"]) if "pen_down" in extra else p > 0
        rows.append(PenSample((t - t0) * spec.time_scale, x, y, p, pen_down,
                              extra.get("azimuth"), extra.get("altitude")))
    return rows


def ingest_timeseries_dataset(root: str | Path, spec: AdapterSpec, out: str | Path
                              ) -> DatasetManifest:
    """Convert every recording to the canonical text format under ``out/recordings``.

    Recordings that violate a PenSample invariant are quarantined: left out of the
    manifest and listed with their violations in ``out/exclusions.json``.
    """
    root, out = Path(root), Path(out)
    _check_root(root)
    labels = _read_labels(root, spec)
    rels = _candidates(root, spec)
    if not rels:
        warnings.warn(f"no files found under {root} for adapter {spec.dataset_name!r}",
                      InkWarning, stacklevel=2)
    (out / "recordings").mkdir(parents=True, exist_ok=True)
    entries, exclusions, warned = [], [], []
    for rel in rels:
        match = _match(rel, spec, labels)
        if _ignored(match.raw_task, spec):
            continue
        task = _task(match.raw_task, spec, rel)
        sid = _sample_id(spec, rel)
        subject = _subject(match, sid, warned)
        samples = parse_source_recording(root / rel, spec)
        rec = InkRecording(tuple(samples), subject, task, spec.dataset_name)
        violations = validate_recording(rec)
        if violations:
            exclusions.append({"sample_id": sid, "source": rel,
                               "violations": [v.__dict__ for v in violations]})
            continue
        target = f"recordings/{sid}.txt"
        write_recording(rec, out / target)
        entries.append(ManifestEntry(sid, subject, match.label, task, Modality.TIMESERIES, target))
    manifest = DatasetManifest(spec.dataset_name, spec.has_template, tuple(entries), out)
    save_manifest(manifest, out / "manifest.json")
    (out / "exclusions.json").write_text(json.dumps(exclusions, indent=2) + "\n")
    if exclusions:
        log.warning("%s: quarantined %d recordings", spec.dataset_name, len(exclusions))
    _report(manifest)
    return manifest


def ingest(root: str | Path, spec: AdapterSpec, out: str | Path) -> DatasetManifest:
    if spec.modality is Modality.IMAGE:
        return ingest_image_dataset(root, spec, out)
    return ingest_timeseries_dataset(root, spec, out)

