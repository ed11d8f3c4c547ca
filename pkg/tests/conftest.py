import numpy as np
import pytest

from inkdx.core import InkRecording, PenSample


def make_recording(xy, pressure=1.0, t_step=10.0, pen_down=True, **meta) -> InkRecording:
    xy = np.asarray(xy, dtype=float)
    p = np.broadcast_to(np.asarray(pressure, dtype=float), (len(xy),))
    down = np.broadcast_to(np.asarray(pen_down, dtype=bool), (len(xy),))
    samples = tuple(PenSample(i * t_step, float(x), float(y), float(pi), bool(d))
                    for i, ((x, y), pi, d) in enumerate(zip(xy, p, down)))
    return InkRecording(samples, **meta)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_manifest(subjects, name="toy", task="Spiral", modality="timeseries"):
    """``subjects``: iterable of (subject_id, label, n_samples)."""
    from inkdx.core import DatasetManifest, DiagnosticClass, ManifestEntry, Modality

    entries = []
    for sid, label, n in subjects:
        for k in range(n):
            entries.append(ManifestEntry(f"{sid}-{k}", sid, DiagnosticClass.parse(label), task,
                                         Modality(modality), f"rec/{sid}-{k}.txt"))
    return DatasetManifest(name, False, tuple(entries))


def cohort(n_pd, n_ctl, samples=1, **kw):
    subs = [(f"PD{i:03d}", "PD", samples) for i in range(n_pd)]
    subs += [(f"CTL{i:03d}", "CTL", samples) for i in range(n_ctl)]
    return make_manifest(subs, **kw)


# acceptance lines are collected from test reports and printed once at the end
_ACCEPTANCE: list[str] = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        _ACCEPTANCE.extend(v for k, v in report.user_properties if k == "acceptance")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
