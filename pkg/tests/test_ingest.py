from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from cband.errors import (DecodeError, DimensionMismatch, MissingFrameRate, NoFrames, ParseError,
                          TruncatedStream)
from cband.ingest import (IMAGENET_MEAN, IMAGENET_STD, Frame, FrameStream, PixelFormat, SamplingMode,
                          SamplingPolicy, open_image_sequence, open_y4m, parse_y4m_header, sample_frames,
                          sample_indices, to_backbone_input, write_y4m, yuv420_to_rgb)


def _yuv_frame(rng, w, h, index=0):
    ch, cw = (h + 1) // 2, (w + 1) // 2
    planes = (rng.integers(0, 256, (h, w), dtype=np.uint8),
              rng.integers(0, 256, (ch, cw), dtype=np.uint8),
              rng.integers(0, 256, (ch, cw), dtype=np.uint8))
    return Frame(w, h, PixelFormat.YUV420P8, planes, index)


def _raw_y4m(path, w, h, n, colorspace="420jpeg", fps="30:1"):
    payload = w * h + 2 * ((w + 1) // 2) * ((h + 1) // 2)
    with open(path, "wb") as fh:
        fh.write(f"YUV4MPEG2 W{w} H{h} F{fps} C{colorspace}\n".encode())
        for i in range(n):
            fh.write(b"FRAME\n" + bytes([i]) * payload)


# --- Y4M --------------------------------------------------------------------


def test_two_frame_fixture(tmp_path):
    p = tmp_path / "a.y4m"
    _raw_y4m(p, 4, 4, 2)
    stream = open_y4m(str(p))
    frames = list(stream)
    assert len(frames) == 2
    assert all((f.width, f.height) == (4, 4) for f in frames)
    assert all(f.pixel_format is PixelFormat.YUV420P8 for f in frames)
    assert stream.fps == Fraction(30)
    assert [f.frame_index for f in frames] == [0, 1]
    assert frames[1].planes[0][0, 0] == 1


@pytest.mark.parametrize("tag", ["420", "420jpeg", "420paldv", "420mpeg2"])
def test_420_tags_accepted(tmp_path, tag):
    p = tmp_path / "a.y4m"
    _raw_y4m(p, 6, 2, 1, colorspace=tag)
    assert len(list(open_y4m(str(p)))) == 1


def test_header_without_frames_is_empty_stream(tmp_path):
    p = tmp_path / "a.y4m"
    _raw_y4m(p, 8, 8, 0)
    assert list(open_y4m(str(p))) == []


def test_truncated_payload(tmp_path):
    p = tmp_path / "a.y4m"
    _raw_y4m(p, 4, 4, 2)
    data = p.read_bytes()
    p.write_bytes(data[:-3])
    with pytest.raises(TruncatedStream):
        list(open_y4m(str(p)))


@pytest.mark.parametrize("line", [b"YUV4MPEG W4 H4\n", b"YUV4MPEG2 W4\n", b"YUV4MPEG2 W0 H4\n",
                                  b"YUV4MPEG2 W4 H4 C444\n", b"YUV4MPEG2 W4 H4 F30:0\n"])
def test_malformed_headers(line):
    with pytest.raises(ParseError):
        parse_y4m_header(line)


def test_unknown_fps_is_none():
    assert parse_y4m_header(b"YUV4MPEG2 W4 H4 F0:0\n").fps is None


def test_ntsc_rate():
    assert parse_y4m_header(b"YUV4MPEG2 W4 H4 F30000:1001\n").fps == Fraction(30000, 1001)


@given(w=st.integers(1, 9), h=st.integers(1, 9), n=st.integers(1, 3), seed=st.integers(0, 2**16))
def test_y4m_round_trip_is_bitwise(tmp_path_factory, w, h, n, seed):
    rng = np.random.default_rng(seed)
    frames = [_yuv_frame(rng, w, h, i) for i in range(n)]
    p = tmp_path_factory.mktemp("rt") / "v.y4m"
    assert write_y4m(str(p), frames, Fraction(25)) == n
    back = list(open_y4m(str(p)))
    assert len(back) == n
    for a, b in zip(frames, back):
        for pa, pb in zip(a.planes, b.planes):
            np.testing.assert_array_equal(pa, pb)


def test_gray_written_with_neutral_chroma(tmp_path):
    f = Frame.gray(np.arange(16, dtype=np.uint8).reshape(4, 4))
    write_y4m(str(tmp_path / "g.y4m"), [f])
    (back,) = open_y4m(str(tmp_path / "g.y4m"))
    np.testing.assert_array_equal(back.planes[0], f.planes[0])
    assert np.all(back.planes[1] == 128) and np.all(back.planes[2] == 128)


def test_frames_are_immutable():
    f = Frame.gray(np.zeros((4, 4), np.uint8))
    with pytest.raises(ValueError):
        f.planes[0][0, 0] = 1


def test_bad_plane_shape_rejected():
    with pytest.raises(DimensionMismatch):
        Frame(4, 4, PixelFormat.GRAY8, (np.zeros((4, 5), np.uint8),))


# --- image sequences --------------------------------------------------------


def test_png_sequence(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        Image.fromarray(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)).save(tmp_path / f"f{i:03d}.png")
    frames = list(open_image_sequence(str(tmp_path)))
    assert len(frames) == 3
    assert all(f.pixel_format is PixelFormat.RGB8 and (f.width, f.height) == (8, 8) for f in frames)
    assert [f.frame_index for f in frames] == [0, 1, 2]


def test_png_gray_mode(tmp_path):
    Image.fromarray(np.full((5, 7), 9, np.uint8)).save(tmp_path / "a.png")
    (f,) = open_image_sequence(str(tmp_path))
    assert f.pixel_format is PixelFormat.GRAY8 and f.planes[0].shape == (5, 7)


def test_png_mixed_dimensions(tmp_path):
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "a.png")
    Image.fromarray(np.zeros((16, 16, 3), np.uint8)).save(tmp_path / "b.png")
    with pytest.raises(DimensionMismatch):
        open_image_sequence(str(tmp_path))


def test_png_empty_match(tmp_path):
    with pytest.raises(NoFrames):
        open_image_sequence(str(tmp_path))


def test_png_undecodable(tmp_path):
    (tmp_path / "a.png").write_bytes(b"not an image")
    with pytest.raises(DecodeError):
        open_image_sequence(str(tmp_path))


def test_bmp_pattern(tmp_path):
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "a.bmp")
    assert len(list(open_image_sequence(str(tmp_path), "*.bmp"))) == 1


# --- backbone input ---------------------------------------------------------


def test_white_and_black_rgb():
    white = to_backbone_input(Frame.rgb(np.full((4, 4, 3), 255, np.uint8)))
    black = to_backbone_input(Frame.rgb(np.zeros((4, 4, 3), np.uint8)))
    np.testing.assert_allclose(white.data[0], (1 - 0.485) / 0.229, rtol=1e-6)
    np.testing.assert_allclose(black.data[0], -0.485 / 0.229, rtol=1e-6)
    assert white.data.dtype == np.float32 and white.data.shape == (3, 4, 4)
    assert white.normalization


def test_gray_replicated_before_standardisation():
    g = np.random.default_rng(1).integers(0, 256, (6, 5), dtype=np.uint8)
    data = to_backbone_input(Frame.gray(g)).data.astype(np.float64)
    unstd = data * np.asarray(IMAGENET_STD)[:, None, None] + np.asarray(IMAGENET_MEAN)[:, None, None]
    np.testing.assert_allclose(unstd[0], unstd[1], atol=1e-6)
    np.testing.assert_allclose(unstd[0], unstd[2], atol=1e-6)


def test_bt709_neutral_chroma_is_gray():
    y = np.array([[16, 235]], np.uint8)
    rgb = yuv420_to_rgb(y, np.full((1, 1), 128, np.uint8), np.full((1, 1), 128, np.uint8))
    np.testing.assert_array_equal(rgb[:, 0, :], np.array([[16.0, 235.0]] * 3))


def test_bt709_red_axis():
    y = np.full((2, 2), 100, np.uint8)
    rgb = yuv420_to_rgb(y, np.full((1, 1), 128, np.uint8), np.full((1, 1), 178, np.uint8))
    # full-range BT.709: R = Y + 1.5748 (Cr - 128), G = Y - 0.4681 (Cr - 128)
    np.testing.assert_allclose(rgb[0], 100 + 1.5748 * 50, atol=1e-9)
    np.testing.assert_allclose(rgb[1], 100 - 0.4681 * 50, atol=0.01)
    np.testing.assert_allclose(rgb[2], 100, atol=1e-9)


@given(seed=st.integers(0, 2**16), w=st.integers(1, 12), h=st.integers(1, 12))
def test_backbone_input_finite_and_deterministic(seed, w, h):
    f = _yuv_frame(np.random.default_rng(seed), w, h)
    a, b = to_backbone_input(f), to_backbone_input(f)
    assert np.all(np.isfinite(a.data))
    np.testing.assert_array_equal(a.data, b.data)


# --- sampling ---------------------------------------------------------------


def _stream(n, fps=Fraction(30)):
    frames = [Frame.gray(np.zeros((2, 2), np.uint8), i) for i in range(n)]
    return FrameStream.from_frames(frames, fps)


def test_per_second_on_seven_second_clip():
    out = sample_frames(_stream(210), SamplingPolicy.parse("per-second"))
    assert [f.frame_index for f in out] == [0, 30, 60, 90, 120, 150, 180]


def test_every_n():
    out = sample_frames(_stream(10), SamplingPolicy(SamplingMode.EVERY_N_FRAMES, 5))
    assert [f.frame_index for f in out] == [0, 5]


@pytest.mark.parametrize("text", ["every-frame", "every-n:3", "per-second"])
def test_single_frame_any_policy(text):
    assert [f.frame_index for f in sample_frames(_stream(1), SamplingPolicy.parse(text))] == [0]


def test_fractional_fps_accumulates():
    fps = Fraction(30000, 1001)
    gen = sample_indices(SamplingPolicy.parse("per-second"), fps)
    assert [next(gen) for _ in range(3)] == [0, 30, 60]
    out = sample_frames(_stream(100, fps), SamplingPolicy.parse("per-second"))
    assert [f.frame_index for f in out] == [0, 30, 60, 90]
    out = sample_frames(_stream(3000, fps), SamplingPolicy.parse("per-second"))
    # k * 29.97 rounded: the 100th second lands on 2997, not 3000
    assert out[-1].frame_index == 2997


def test_per_second_without_rate():
    with pytest.raises(MissingFrameRate):
        sample_frames(_stream(10, None), SamplingPolicy.parse("per-second"))


@pytest.mark.parametrize("text", ["every-n:0", "every-n:", "sometimes", "every-n:-2"])
def test_bad_policy_text(text):
    with pytest.raises(ValueError):
        SamplingPolicy.parse(text)


@pytest.mark.parametrize("text", ["every-frame", "every-n:7", "per-second"])
def test_policy_str_round_trip(text):
    assert str(SamplingPolicy.parse(text)) == text


@given(n=st.integers(1, 200), step=st.integers(1, 50),
       fps=st.fractions(min_value=1, max_value=120, max_denominator=1001),
       mode=st.sampled_from(["every-frame", "every-n", "per-second"]))
def test_sampling_is_increasing_subsequence(n, step, fps, mode):
    text = f"every-n:{step}" if mode == "every-n" else mode
    out = [f.frame_index for f in sample_frames(_stream(n, fps), SamplingPolicy.parse(text))]
    assert out and out[0] == 0
    assert all(a < b for a, b in zip(out, out[1:]))
    assert set(out) <= set(range(n))
