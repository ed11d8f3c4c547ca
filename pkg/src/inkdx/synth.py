"""Parametric synthetic spirals with tremor, slowdown and micrographia.

Only meant to exercise the pipeline; nothing here models disease realistically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    DatasetManifest,
    DiagnosticClass,
    InkRecording,
    InvalidParams,
    ManifestEntry,
    Modality,
    PenSample,
    save_manifest,
    write_recording,
)

PRESSURE_PROFILES = ("constant", "ramp", "noisy")


@dataclass(frozen=True)
class SynthParams:
    pitch: float = 5.0  # device units per radian
    turns: float = 3.0
    omega: float = 2 * math.pi * 0.5  # rad/s
    sample_rate: float = 100.0  # Hz
    tremor_amp: float = 0.0  # device units, radial
    tremor_freq: float = 5.0  # Hz
    slowdown: float = 1.0  # final angular speed as a fraction of omega
    micrographia: float = 0.0  # fractional pitch loss by the last turn
    pressure_profile: str = "constant"
    pressure: float = 500.0
    seed: int = 0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise InvalidParams("sample_rate must be positive")
        if self.turns <= 0:
            raise InvalidParams("turns must be positive")
        if self.tremor_amp < 0:
            raise InvalidParams("tremor_amp must be >= 0")
        if not 0 < self.slowdown <= 1:
            raise InvalidParams("slowdown must be in (0, 1]")
        if not 0 <= self.micrographia < 1:
            raise InvalidParams("micrographia must be in [0, 1)")
        if self.pitch <= 0 or self.omega <= 0 or self.pressure < 0:
            raise InvalidParams("pitch and omega must be positive, pressure non-negative")
        if self.pressure_profile not in PRESSURE_PROFILES:
            raise InvalidParams(f"pressure_profile must be one of {PRESSURE_PROFILES}")


def spiral_trajectory(p: SynthParams) -> dict[str, np.ndarray]:
    """Sample times (s), angles, ideal and actual radii of the spiral."""
    theta_max = 2 * math.pi * p.turns
    dt = 1.0 / p.sample_rate
    thetas = [0.0]
    theta = 0.0
    # angular speed decays linearly with progress from omega to slowdown * omega
    while theta < theta_max:
        speed = p.omega * (1 - (1 - p.slowdown) * theta / theta_max)
        theta += speed * dt
        thetas.append(min(theta, theta_max))
    theta = np.array(thetas)
    t = np.arange(len(theta)) / p.sample_rate
    shrink = 1 - p.micrographia * theta / theta_max
    ideal = p.pitch * theta * shrink
    radius = ideal + p.tremor_amp * np.sin(2 * math.pi * p.tremor_freq * t)
    return {"t": t, "theta": theta, "ideal_r": ideal, "r": radius}


def generate_recording(p: SynthParams, subject_id: str = "synth", task_id: str = "Spiral",
                       source_dataset: str = "synthetic") -> InkRecording:
    traj = spiral_trajectory(p)
    theta, r = traj["theta"], traj["r"]
    x = r * np.cos(theta)
    y = r * np.sin(theta)
    n = len(theta)
    rng = np.random.default_rng(p.seed)
    if p.pressure_profile == "constant":
        pressure = np.full(n, p.pressure)
    elif p.pressure_profile == "ramp":
        pressure = p.pressure * (0.5 + 0.5 * theta / theta[-1])
    else:
        pressure = np.clip(p.pressure * (1 + 0.1 * rng.standard_normal(n)), 0, None)
    t_ms = np.arange(n) * (1000.0 / p.sample_rate)
    samples = tuple(PenSample(float(t_ms[i]), float(x[i]), float(y[i]), float(pressure[i]), True)
                    for i in range(n))
    return InkRecording(samples, subject_id, task_id, source_dataset)


@dataclass(frozen=True)
class ClassProfile:
    """Uniform ranges from which each subject's SynthParams are drawn."""

    label: DiagnosticClass
    tremor_amp: tuple[float, float] = (0.0, 0.2)
    tremor_freq: tuple[float, float] = (4.0, 6.0)
    slowdown: tuple[float, float] = (1.0, 1.0)
    micrographia: tuple[float, float] = (0.0, 0.0)
    turns: tuple[float, float] = (2.5, 3.5)
    pitch: tuple[float, float] = (4.0, 6.0)
    pressure_profile: str = "noisy"


PROFILES = {
    "pd-vs-ctl": (
        ClassProfile(DiagnosticClass.PD, tremor_amp=(1.5, 3.0)),
        ClassProfile(DiagnosticClass.CTL, tremor_amp=(0.0, 0.2)),
    ),
    "ad-vs-ctl": (
        ClassProfile(DiagnosticClass.AD, tremor_amp=(0.0, 0.5), slowdown=(0.3, 0.6),
                     micrographia=(0.3, 0.5)),
        ClassProfile(DiagnosticClass.CTL, tremor_amp=(0.0, 0.2)),
    ),
}


def _draw(rng: np.random.Generator, lo_hi: tuple[float, float]) -> float:
    lo, hi = lo_hi
    return float(lo if lo == hi else rng.uniform(lo, hi))


def draw_params(profile: ClassProfile, rng: np.random.Generator, seed: int) -> SynthParams:
    return SynthParams(
        pitch=_draw(rng, profile.pitch),
        turns=_draw(rng, profile.turns),
        tremor_amp=_draw(rng, profile.tremor_amp),
        tremor_freq=_draw(rng, profile.tremor_freq),
        slowdown=_draw(rng, profile.slowdown),
        micrographia=_draw(rng, profile.micrographia),
        pressure_profile=profile.pressure_profile,
        seed=seed,
    )


def generate_cohort(n_per_class: int, class_profiles=PROFILES["pd-vs-ctl"], seed: int = 0, *,
                    dataset_name: str = "synthetic", samples_per_subject: int = 1,
                    task_id: str = "Spiral", tasks: tuple[str, ...] | None = None,
                    ) -> tuple[DatasetManifest, dict[str, InkRecording]]:
    """Build an in-memory cohort: one subject per recording group, classes balanced.

    With ``tasks`` given, every subject draws one recording group per task.
    """
    if n_per_class < 1 or samples_per_subject < 1:
        raise InvalidParams("n_per_class and samples_per_subject must be >= 1")
    rng = np.random.default_rng(seed)
    tasks = tasks or (task_id,)
    entries, recordings = [], {}
    for profile in class_profiles:
        for k in range(n_per_class):
            subject = f"{profile.label.value}{k:03d}"
            params = draw_params(profile, rng, seed=int(rng.integers(2**31)))
            for task in tasks:
                for rep in range(samples_per_subject):
                    sid = f"{dataset_name}-{subject}-{task}-{rep}"
                    rec = generate_recording(replace(params, seed=params.seed + rep), subject,
                                             task, dataset_name)
                    recordings[sid] = rec
                    entries.append(ManifestEntry(sid, subject, profile.label, task,
                                                 Modality.TIMESERIES, f"recordings/{sid}.txt"))
    return DatasetManifest(dataset_name, False, tuple(entries)), recordings


def write_cohort(manifest: DatasetManifest, recordings: dict[str, InkRecording],
                 out: str | Path) -> DatasetManifest:
    out = Path(out)
    (out / "recordings").mkdir(parents=True, exist_ok=True)
    for e in manifest.entries:
        write_recording(recordings[e.sample_id], out / e.path)
    save_manifest(manifest, out / "manifest.json")
    return DatasetManifest(manifest.dataset_name, manifest.has_template, manifest.entries, out)


MATRIX_DATASETS = {
    # name: (modality, pitch range, tasks)
    "HandPD": ("image", (4.0, 5.0), ("Spiral",)),
    "NewHandPD": ("image", (5.0, 6.0), ("Spiral",)),
    "ParkD": ("image", (3.5, 4.5), ("Spiral",)),
    "PaHaW": ("timeseries", (4.5, 5.5), ("Spiral",)),
    "NLS": ("timeseries", (4.0, 6.0), ("SpiralDom", "SpiralNonDom", "FreeWrite")),
}


def write_synthetic_matrix(out: str | Path, n_per_class: int = 6, seed: int = 0,
                           settings: dict | None = None) -> Path:
    """Five synthetic corpora shaped like the transfer-matrix datasets plus a matrix config.

    The three "image" corpora are rendered once and stored as 256 px PNGs, so they
    go through the scan preprocessing path; the other two stay time series.
    """
    import json

    from PIL import Image

    from .raster import RenderParams, quantize, render_float

    out = Path(out)
    datasets = {}
    for i, (name, (modality, pitch, tasks)) in enumerate(MATRIX_DATASETS.items()):
        profiles = tuple(replace(p, pitch=pitch) for p in PROFILES["pd-vs-ctl"])
        m, recs = generate_cohort(n_per_class, profiles, seed + 101 * i, dataset_name=name,
                                  tasks=tasks)
        root = out / name
        if modality == "timeseries":
            write_cohort(m, recs, root)
        else:
            (root / "images").mkdir(parents=True, exist_ok=True)
            entries = []
            for e in m.entries:
                px = quantize(render_float(recs[e.sample_id], RenderParams(canvas_px=256)))
                rel = f"images/{e.sample_id}.png"
                Image.fromarray(px, mode="L").save(root / rel)
                entries.append(replace(e, modality=Modality.IMAGE, path=rel, aspect_ratio=1.0))
            save_manifest(DatasetManifest(name, False, tuple(entries)), root / "manifest.json")
        datasets[name] = {"manifest": f"{name}/manifest.json"}
    datasets["NLS Spirals"] = {"manifest": "NLS/manifest.json", "tasks": "spirals"}
    config = {
        "classes": "PD,CTL",
        "seed": seed,
        "datasets": datasets,
        "columns": ["HandPD", "NewHandPD", "ParkD", "PaHaW", "NLS Spirals"],
        "multi_all": ["HandPD", "NewHandPD", "ParkD", "PaHaW", "NLS"],
        **(settings or {}),
    }
    path = out / "matrix.json"
    path.write_text(json.dumps(config, indent=2) + "\n")
    return path
