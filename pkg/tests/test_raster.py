import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_recording
from inkdx.core import EmptyAfterFilter, InkWarning, InvalidParams
from inkdx.raster import (
    RenderParams,
    coverage_counts,
    normalize_coords,
    normalize_pressure,
    quantize,
    render,
    render_float,
)
from inkdx.synth import SynthParams, generate_recording


def reference_composite(rec, params):
    """Scalar per-pixel source-over compositing, one disc at a time, no lookup tables."""
    a = rec.arrays()
    keep = a["pen_down"] | params.include_pen_up
    x, y, p = a["x"][keep], a["y"][keep], a["pressure"][keep]
    n = params.canvas_px
    m = n * params.margin_frac
    c = n - 2 * m
    ext = max(x.max() - x.min(), y.max() - y.min())
    pn = p / p.max() if p.max() > 0 else np.ones_like(p)
    img = [[255.0] * n for _ in range(n)]
    for xi, yi, pi in zip(x, y, pn):
        if ext > 0:
            u = m + c * ((xi - x.min()) + 0.5 * (ext - (x.max() - x.min()))) / ext
            v = m + c * ((y.max() - yi) + 0.5 * (ext - (y.max() - y.min()))) / ext
        else:
            u = v = n / 2
        r = params.r_min_px + pi * (params.r_max_px - params.r_min_px)
        for i in range(n):
            for j in range(n):
                if (j + 0.5 - u) ** 2 + (i + 0.5 - v) ** 2 <= r * r:
                    img[i][j] = img[i][j] * (1 - params.opacity)
    return np.array([[math.floor(val + 0.5) for val in row] for row in img], dtype=np.uint8)


def test_content_square_corners():
    rec = make_recording([(0, 0), (10, 10)])
    uv = normalize_coords(rec)
    # device y points up, so (0, 0) is the bottom-left corner of the content region
    np.testing.assert_allclose(uv, [[11.2, 212.8], [212.8, 11.2]], atol=1e-9)


@pytest.mark.parametrize("point", [(0.0, 0.0), (-37.5, 1e4), (3.3, -2.1)])
def test_single_point_maps_to_center(point):
    np.testing.assert_allclose(normalize_coords(make_recording([point])), [[112.0, 112.0]])


def test_bbox_100x50_brute_force(rng):
    pts = np.column_stack([rng.uniform(0, 100, 40), rng.uniform(0, 50, 40)])
    pts = np.vstack([pts, [[0, 0], [100, 50]]]) + [17.0, -4.0]
    uv = normalize_coords(make_recording(pts))
    scale = 201.6 / 100
    # brute force: transformed extents from min/max over every point
    assert uv[:, 0].max() - uv[:, 0].min() == pytest.approx(201.6)
    assert uv[:, 1].max() - uv[:, 1].min() == pytest.approx(100.8)
    assert uv[:, 0].min() == pytest.approx(11.2)
    assert (uv[:, 1].min() + uv[:, 1].max()) / 2 == pytest.approx(112.0)
    for (x, y), (u, v) in zip(pts - [17.0, -4.0], uv):
        assert u == pytest.approx(11.2 + scale * x)
        assert v == pytest.approx(112.0 + 50.4 - scale * y)


def test_zero_extent_axis_is_centered_line():
    uv = normalize_coords(make_recording([(0, 5), (4, 5), (9, 5)]))
    np.testing.assert_allclose(uv[:, 1], 112.0)
    assert uv[0, 0] == pytest.approx(11.2) and uv[-1, 0] == pytest.approx(212.8)


@pytest.mark.parametrize("pressure,expected", [
    ((2, 4, 8), (0.25, 0.5, 1.0)),
    ((3, 3, 3), (1.0, 1.0, 1.0)),
])
def test_normalize_pressure(pressure, expected):
    rec = make_recording([(0, 0), (1, 1), (2, 0)], pressure=pressure)
    np.testing.assert_allclose(normalize_pressure(rec), expected)


def test_zero_pressure_warns_and_uses_full_dots():
    rec = make_recording([(0, 0), (1, 1)], pressure=0.0)
    with pytest.warns(InkWarning):
        np.testing.assert_array_equal(normalize_pressure(rec), [1.0, 1.0])


def test_empty_after_filter():
    rec = make_recording([(0, 0), (1, 1)], pen_down=False)
    with pytest.raises(EmptyAfterFilter):
        render(rec)
    # the flag keeps pen-up samples
    assert render(rec, RenderParams(include_pen_up=True)).pixels.min() < 255
    with pytest.raises(EmptyAfterFilter):
        render(make_recording(np.zeros((0, 2))), RenderParams(include_pen_up=True))


@pytest.mark.parametrize("n,value", [(1, 230), (5, 151)])
def test_stacked_dots(n, value):
    img = render(make_recording([(3.0, 4.0)] * n)).pixels
    assert img[112, 112] == value
    assert img.min() == value and img.max() == 255


def test_pen_up_samples_leave_no_ink():
    rec = make_recording([(0, 0), (5, 5), (10, 10)], pen_down=[True, False, True])
    with_up = coverage_counts(rec, RenderParams(include_pen_up=True))
    without = coverage_counts(rec)
    assert with_up.sum() > without.sum()


def test_matches_scalar_reference(rng):
    params = RenderParams(canvas_px=40, r_min_px=1.0, r_max_px=4.0, opacity=0.25)
    rec = make_recording(rng.uniform(-5, 5, (12, 2)), pressure=rng.uniform(0, 2, 12),
                         pen_down=rng.uniform(size=12) < 0.8)
    np.testing.assert_array_equal(quantize(render_float(rec, params)),
                                  reference_composite(rec, params))


def test_slow_half_darker_than_fast_half():
    # one stroke left to right: 0.05 units per sample on the left half, 0.5 on the right
    x = np.concatenate([np.arange(0, 10, 0.05), np.arange(10, 20.0001, 0.5)])
    rec = make_recording(np.column_stack([x, np.zeros_like(x)]))
    params = RenderParams(canvas_px=64)
    ref = reference_composite(rec, params).astype(float)
    np.testing.assert_array_equal(quantize(render_float(rec, params)), ref)
    inked = ref < 255
    cols = np.nonzero(inked.any(0))[0]
    mid = (cols.min() + cols.max()) // 2
    slow, fast = ref[:, :mid][inked[:, :mid]], ref[:, mid + 1:][inked[:, mid + 1:]]
    assert slow.mean() < fast.mean()


def test_slowed_spiral_is_darker():
    fast = render(generate_recording(SynthParams(slowdown=1.0))).pixels.astype(float)
    slow = render(generate_recording(SynthParams(slowdown=0.3))).pixels.astype(float)
    assert slow[slow < 255].mean() < fast[fast < 255].mean()


def test_deterministic_bytes(rng):
    rec = make_recording(rng.normal(size=(50, 2)), pressure=rng.uniform(0.1, 1, 50))
    assert render(rec).pixels.tobytes() == render(rec).pixels.tobytes()


def test_canvas_size_fixed():
    for pts in ([(0, 0)], [(0, 0), (1e6, 3)], [(0, 0), (1e-9, 1e-9)]):
        assert render(make_recording(pts)).pixels.shape == (224, 224)
    with pytest.raises(InvalidParams):
        render(make_recording([(0, 0)]), RenderParams(canvas_px=100))


@pytest.mark.parametrize("kw", [{"opacity": 0}, {"opacity": 1.5}, {"margin_frac": 0.5},
                                {"r_min_px": 2, "r_max_px": 1}, {"r_min_px": 0}])
def test_invalid_params(kw):
    with pytest.raises(InvalidParams):
        RenderParams(**kw)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000)),
                min_size=1, max_size=30),
       st.sampled_from([0.5, 2.0, 4.0, 0.25]),
       st.integers(-500, 500), st.integers(-500, 500))
def test_scale_translation_invariance(points, scale, dx, dy):
    # power-of-two scales and integer shifts keep the arithmetic exact
    rec = make_recording(points, pressure=[1 + (i % 3) for i in range(len(points))])
    a = render(rec).pixels
    b = render(rec.transformed(scale, dx, dy)).pixels
    assert a.tobytes() == b.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.floats(0.01, 1.0))
def test_compositing_law(n, opacity):
    params = RenderParams(opacity=opacity)
    img = render_float(make_recording([(1.0, 1.0)] * n), params)
    values = np.unique(img)
    assert values.min() == pytest.approx(255 * (1 - opacity) ** n, rel=1e-12)
    assert values.max() == 255.0


def test_ink_never_brightens(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InkWarning)
        rec = make_recording(rng.normal(size=(200, 2)), pressure=rng.uniform(0, 1, 200))
    img = render_float(rec)
    assert img.max() <= 255.0 and img.min() > 0
