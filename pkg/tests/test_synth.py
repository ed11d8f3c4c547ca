import math

import numpy as np
import pytest

from inkdx.core import DiagnosticClass, InvalidParams, load_manifest, read_recording
from inkdx.raster import render
from inkdx.synth import (
    PROFILES,
    SynthParams,
    generate_cohort,
    generate_recording,
    spiral_trajectory,
    write_cohort,
)


def radii(rec):
    a = rec.arrays()
    return np.hypot(a["x"], a["y"])


def test_zero_perturbation_is_archimedean():
    p = SynthParams(pitch=4.0, pressure_profile="constant")
    traj = spiral_trajectory(p)
    rec = generate_recording(p)
    np.testing.assert_allclose(radii(rec), 4.0 * traj["theta"], atol=1e-9, rtol=1e-9)
    assert len({s.pressure for s in rec.samples}) == 1


def test_tremor_amplitude():
    # 3 turns at 0.5 turn/s is 6 s, i.e. 30 cycles of 5 Hz tremor
    p = SynthParams(tremor_amp=2.0, micrographia=0.2, turns=3)
    traj = spiral_trajectory(p)
    dev = np.abs(traj["r"] - traj["ideal_r"])
    assert traj["t"][-1] * p.tremor_freq >= 10
    assert dev.max() == pytest.approx(2.0, rel=0.01)


def test_deterministic_and_seeded():
    p = SynthParams(pressure_profile="noisy", seed=7)
    assert generate_recording(p).samples == generate_recording(p).samples
    q = SynthParams(pressure_profile="noisy", seed=8)
    assert generate_recording(p).samples != generate_recording(q).samples


def test_uniform_increasing_timestamps():
    rec = generate_recording(SynthParams(sample_rate=200, slowdown=0.4))
    t = rec.arrays()["t"]
    np.testing.assert_allclose(np.diff(t), 5.0)
    assert all(s.pen_down for s in rec.samples)


def test_slowdown_and_micrographia():
    base = spiral_trajectory(SynthParams())
    slow = spiral_trajectory(SynthParams(slowdown=0.5))
    assert len(slow["t"]) > len(base["t"])
    small = spiral_trajectory(SynthParams(micrographia=0.4))
    assert small["ideal_r"][-1] == pytest.approx(0.6 * base["ideal_r"][-1])


@pytest.mark.parametrize("kw", [{"sample_rate": 0}, {"turns": -1}, {"tremor_amp": -0.1},
                                {"slowdown": 0}, {"micrographia": 1}, {"pressure_profile": "x"}])
def test_invalid(kw):
    with pytest.raises(InvalidParams):
        SynthParams(**kw)
    with pytest.raises(InvalidParams):
        generate_cohort(0)


def test_cohort_shape_and_determinism(tmp_path):
    m, recs = generate_cohort(5, seed=3)
    assert len(m.subjects()) == 10
    assert m.class_counts()["PD"] == m.class_counts()["CTL"] == 5
    m2, recs2 = generate_cohort(5, seed=3)
    assert m == m2 and all(recs[k].samples == recs2[k].samples for k in recs)
    written = write_cohort(m, recs, tmp_path)
    loaded = load_manifest(tmp_path / "manifest.json")
    assert loaded == written
    e = loaded.entries[0]
    assert read_recording(loaded.resolve(e)).samples == recs[e.sample_id].samples


def test_multi_task_cohort():
    m, _ = generate_cohort(3, PROFILES["ad-vs-ctl"], tasks=("SpiralDom", "Numbers"),
                           samples_per_subject=2)
    assert len(m) == 3 * 2 * 2 * 2
    assert set(m.subjects().values()) == {DiagnosticClass.AD, DiagnosticClass.CTL}


def test_rendered_classes_separate():
    m, recs = generate_cohort(12, seed=5)
    # tremor scatters consecutive dots, so fewer pixels collect the many overlapping
    # composites that make ink dark: the share of dark ink pixels drops for patients
    dark = {c: [] for c in ("PD", "CTL")}
    for e in m.entries:
        px = render(recs[e.sample_id]).pixels
        inked = px < 255
        dark[e.label.value].append(float((px < 150).sum() / inked.sum()))
    pd, ctl = np.array(dark["PD"]), np.array(dark["CTL"])
    # two-sample separation: Welch t statistic
    t = (ctl.mean() - pd.mean()) / math.sqrt(pd.var(ddof=1) / len(pd)
                                             + ctl.var(ddof=1) / len(ctl))
    assert t > 3
