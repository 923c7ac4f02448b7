import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cband.errors import EmptyLadder, UnsupportedFormat
from cband.ingest import Frame, PixelFormat
from cband.synth import (Gradient, SynthSpec, expected_level_count, gradient_frame, quantize_bitdepth,
                         save_spec, severity_ladder)


def test_horizontal_ramp_is_column_index():
    f = gradient_frame(SynthSpec(256, 64, Gradient.HORIZONTAL))
    assert f.pixel_format is PixelFormat.GRAY8
    np.testing.assert_array_equal(f.planes[0], np.broadcast_to(np.arange(256, dtype=np.uint8), (64, 256)))


def test_vertical_is_transpose_of_horizontal():
    v = gradient_frame(SynthSpec(40, 90, Gradient.VERTICAL, 10, 200)).planes[0]
    h = gradient_frame(SynthSpec(90, 40, Gradient.HORIZONTAL, 10, 200)).planes[0]
    np.testing.assert_array_equal(v, h.T)


def test_radial_centre_and_corners():
    p = gradient_frame(SynthSpec(33, 33, Gradient.RADIAL, 20, 220)).planes[0]
    assert p[16, 16] == 20
    assert p[0, 0] == p[0, 32] == p[32, 0] == p[32, 32] == 220
    np.testing.assert_array_equal(p, p.T)


@pytest.mark.parametrize("kw", [dict(low=100, high=100), dict(low=200, high=100), dict(bits=1),
                                dict(bits=9), dict(width=0), dict(high=256)])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        SynthSpec(**kw)


def test_spec_json_round_trip(tmp_path):
    spec = SynthSpec(17, 9, Gradient.RADIAL, 3, 250, 5, True, 4)
    assert SynthSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec
    save_spec(spec, str(tmp_path / "s.json"), bits_list=[8, 4])
    d = json.loads((tmp_path / "s.json").read_text())
    assert d["gradient"] == "radial" and d["bits_list"] == [8, 4]


def test_bits_eight_is_identity():
    f = gradient_frame(SynthSpec())
    np.testing.assert_array_equal(quantize_bitdepth(f, 8).planes[0], f.planes[0])


def test_two_bits_on_full_ramp():
    q = quantize_bitdepth(gradient_frame(SynthSpec()), 2).planes[0]
    # four multiples of 64 plus the top of the ramp clamped from 256
    assert sorted(np.unique(q)) == [0, 64, 128, 192, 255]


def test_four_bits_step_width():
    row = quantize_bitdepth(gradient_frame(SynthSpec(256, 1)), 4).planes[0][0].astype(int)
    edges = np.flatnonzero(np.diff(row))
    assert np.all(np.diff(edges) == 16)
    jumps = np.diff(row)[edges]
    # every contour is one level of 16 except the last, clamped from 256 down to 255
    assert set(jumps[:-1]) == {16} and jumps[-1] == 15


@given(bits=st.integers(2, 8), low=st.integers(0, 254), span=st.integers(1, 255))
def test_level_count_formula(bits, low, span):
    high = min(low + span, 255)
    f = gradient_frame(SynthSpec(high - low + 1, 1, Gradient.HORIZONTAL, low, high))
    assert len(np.unique(f.planes[0])) == high - low + 1
    q = quantize_bitdepth(f, bits).planes[0]
    assert len(np.unique(q)) == expected_level_count(low, high, bits)


@given(bits=st.integers(2, 8), dither=st.booleans(), seed=st.integers(0, 999))
def test_idempotent(bits, dither, seed):
    g = np.random.default_rng(seed).integers(0, 256, (9, 7), dtype=np.uint8)
    once = quantize_bitdepth(Frame.gray(g), bits, dither)
    twice = quantize_bitdepth(once, bits)
    np.testing.assert_array_equal(once.planes[0], twice.planes[0])


def test_rgb_supported_yuv_rejected():
    rgb = Frame.rgb(np.full((4, 4, 3), 77, np.uint8))
    assert np.all(quantize_bitdepth(rgb, 3).planes[0] == 64)
    yuv = Frame(2, 2, PixelFormat.YUV420P8, (np.zeros((2, 2), np.uint8), np.zeros((1, 1), np.uint8),
                                             np.zeros((1, 1), np.uint8)))
    with pytest.raises(UnsupportedFormat):
        quantize_bitdepth(yuv, 4)


def test_dither_masks_contours():
    spec = SynthSpec(256, 16)
    plain = quantize_bitdepth(gradient_frame(spec), 3).planes[0].astype(float)
    dith = quantize_bitdepth(gradient_frame(spec), 3, dither=True).planes[0].astype(float)
    ramp = gradient_frame(spec).planes[0].astype(float)
    # local 4x4 averages of the dithered image track the ramp more closely
    def blur(x):
        return x.reshape(4, 4, 64, 4).mean(axis=(1, 3))
    assert np.abs(blur(dith) - blur(ramp)).mean() < 0.5 * np.abs(blur(plain) - blur(ramp)).mean()


def test_ladder_counts():
    frames = severity_ladder(SynthSpec(), [8, 6, 5, 4, 3])
    counts = [len(np.unique(f.planes[0])) for f in frames]
    assert len(frames) == 5
    assert all(a > b for a, b in zip(counts, counts[1:]))


def test_ladder_edge_cases():
    assert len(severity_ladder(SynthSpec(), [5])) == 1
    with pytest.raises(EmptyLadder):
        severity_ladder(SynthSpec(), [])
    with pytest.raises(ValueError):
        severity_ladder(SynthSpec(), [4, 6])
