"""Frame decoding (Y4M, image sequences), backbone preprocessing and temporal sampling."""

from __future__ import annotations

import enum
import glob
import math
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import (
    DecodeError,
    DimensionMismatch,
    MissingFrameRate,
    NoFrames,
    ParseError,
    TruncatedStream,
    UnsupportedFormat,
)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# BT.709 full-range YCbCr -> RGB, chroma centred on 128.
BT709_CR_TO_R = 1.5748
BT709_CB_TO_G = -0.187324
BT709_CR_TO_G = -0.468124
BT709_CB_TO_B = 1.8556

Y4M_MAGIC = b"YUV4MPEG2"
Y4M_420_TAGS = {"420", "420jpeg", "420paldv", "420mpeg2"}


class PixelFormat(enum.Enum):
    GRAY8 = "gray8"
    RGB8 = "rgb8"
    YUV420P8 = "yuv420p8"


def plane_shapes(fmt: PixelFormat, width: int, height: int) -> list[tuple[int, ...]]:
    if fmt is PixelFormat.GRAY8:
        return [(height, width)]
    if fmt is PixelFormat.RGB8:
        return [(height, width, 3)]
    if fmt is PixelFormat.YUV420P8:
        ch, cw = (height + 1) // 2, (width + 1) // 2
        return [(height, width), (ch, cw), (ch, cw)]
    raise UnsupportedFormat(str(fmt))


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    pixel_format: PixelFormat
    planes: tuple[np.ndarray, ...]
    frame_index: int = 0
    timestamp: Optional[float] = None

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        expected = plane_shapes(self.pixel_format, self.width, self.height)
        if len(expected) != len(self.planes):
            raise DimensionMismatch(f"{self.pixel_format.name} expects {len(expected)} planes")
        frozen = []
        for shape, plane in zip(expected, self.planes):
            plane = np.asarray(plane)
            if plane.dtype != np.uint8 or plane.shape != shape:
                raise DimensionMismatch(
                    f"plane {plane.dtype}{plane.shape} does not match {self.pixel_format.name} {shape}"
                )
            plane = plane.copy() if plane.flags.writeable else plane
            plane.flags.writeable = False
            frozen.append(plane)
        object.__setattr__(self, "planes", tuple(frozen))

    @classmethod
    def gray(cls, pixels: np.ndarray, frame_index: int = 0, timestamp=None) -> "Frame":
        h, w = pixels.shape
        return cls(w, h, PixelFormat.GRAY8, (pixels,), frame_index, timestamp)

    @classmethod
    def rgb(cls, pixels: np.ndarray, frame_index: int = 0, timestamp=None) -> "Frame":
        h, w, _ = pixels.shape
        return cls(w, h, PixelFormat.RGB8, (pixels,), frame_index, timestamp)

    def with_index(self, frame_index: int, timestamp=None) -> "Frame":
        return Frame(self.width, self.height, self.pixel_format, self.planes, frame_index, timestamp)


class FrameStream:
    """Re-iterable sequence of frames with optional frame rate.

    ``factory`` is called on every iteration so that file-backed streams decode lazily.
    """

    def __init__(self, factory: Callable[[], Iterator[Frame]], fps: Optional[Fraction] = None,
                 width: Optional[int] = None, height: Optional[int] = None, source: str = ""):
        self._factory = factory
        self.fps = fps
        self.width = width
        self.height = height
        self.source = source

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], fps=None) -> "FrameStream":
        frames = list(frames)
        w = frames[0].width if frames else None
        h = frames[0].height if frames else None
        fps = Fraction(fps) if fps is not None else None
        return cls(lambda: iter(frames), fps, w, h)

    def __iter__(self) -> Iterator[Frame]:
        return self._factory()


# ---------------------------------------------------------------------------
# Y4M


@dataclass
class Y4MHeader:
    width: int
    height: int
    fps: Optional[Fraction]
    colorspace: str = "420jpeg"
    params: dict = field(default_factory=dict)


def parse_y4m_header(line: bytes) -> Y4MHeader:
    tokens = line.rstrip(b"\n").split(b" ")
    if not tokens or tokens[0] != Y4M_MAGIC:
        raise ParseError("missing YUV4MPEG2 signature")
    params = {}
    for tok in tokens[1:]:
        if not tok:
            continue
        try:
            text = tok.decode("ascii")
        except UnicodeDecodeError as exc:
            raise ParseError(f"non-ascii header token {tok!r}") from exc
        params[text[0]] = text[1:]
    try:
        width, height = int(params["W"]), int(params["H"])
    except (KeyError, ValueError) as exc:
        raise ParseError("header must carry integer W and H") from exc
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid dimensions {width}x{height}")
    fps = None
    if "F" in params:
        m = re.fullmatch(r"(\d+):(\d+)", params["F"])
        num, den = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        # F0:0 is the conventional marker for an unknown rate
        if m is None or (num > 0 and den == 0):
            raise ParseError(f"bad frame rate {params['F']!r}")
        if num > 0:
            fps = Fraction(num, den)
    colorspace = params.get("C", "420jpeg")
    if colorspace not in Y4M_420_TAGS:
        raise ParseError(f"unsupported colorspace C{colorspace}")
    return Y4MHeader(width, height, fps, colorspace, params)


def _y4m_frames(path: str, header_len: int, header: Y4MHeader) -> Iterator[Frame]:
    shapes = plane_shapes(PixelFormat.YUV420P8, header.width, header.height)
    sizes = [int(np.prod(s)) for s in shapes]
    payload = sum(sizes)
    with open(path, "rb") as fh:
        fh.seek(header_len)
        index = 0
        while True:
            marker = fh.readline()
            if not marker:
                return
            if not marker.startswith(b"FRAME"):
                raise ParseError(f"expected FRAME marker at frame {index}")
            if not marker.endswith(b"\n"):
                raise TruncatedStream(f"frame {index}: marker not terminated")
            data = fh.read(payload)
            if len(data) != payload:
                raise TruncatedStream(f"frame {index}: expected {payload} bytes, got {len(data)}")
            buf = np.frombuffer(data, dtype=np.uint8)
            planes, off = [], 0
            for shape, size in zip(shapes, sizes):
                planes.append(buf[off:off + size].reshape(shape))
                off += size
            ts = float(index / header.fps) if header.fps else None
            yield Frame(header.width, header.height, PixelFormat.YUV420P8, tuple(planes), index, ts)
            index += 1


def open_y4m(path: str) -> FrameStream:
    with open(path, "rb") as fh:
        line = fh.readline(4096)
    if not line.endswith(b"\n"):
        raise ParseError("header line missing or not newline-terminated")
    header = parse_y4m_header(line)
    stream = FrameStream(lambda: _y4m_frames(path, len(line), header), header.fps,
                         header.width, header.height, source=path)
    stream.header = header
    return stream


def _to_yuv420(frame: Frame) -> tuple[np.ndarray, ...]:
    if frame.pixel_format is PixelFormat.YUV420P8:
        return frame.planes
    if frame.pixel_format is PixelFormat.GRAY8:
        ch, cw = (frame.height + 1) // 2, (frame.width + 1) // 2
        neutral = np.full((ch, cw), 128, np.uint8)
        return frame.planes[0], neutral, neutral
    raise UnsupportedFormat("Y4M output supports GRAY8 and YUV420P8 frames")


def write_y4m(path: str, frames: Iterable[Frame], fps: Fraction = Fraction(30)) -> int:
    """Write frames as 4:2:0 Y4M. GRAY8 frames get neutral chroma. Returns frame count."""
    fps = Fraction(fps)
    n = 0
    with open(path, "wb") as fh:
        header_written = False
        for frame in frames:
            if not header_written:
                fh.write(f"YUV4MPEG2 W{frame.width} H{frame.height} F{fps.numerator}:{fps.denominator}"
                         f" Ip A1:1 C420jpeg\n".encode("ascii"))
                header_written = True
                width, height = frame.width, frame.height
            if (frame.width, frame.height) != (width, height):
                raise DimensionMismatch("all frames in a Y4M file must share dimensions")
            fh.write(b"FRAME\n")
            for plane in _to_yuv420(frame):
                fh.write(np.ascontiguousarray(plane).tobytes())
            n += 1
        if not header_written:
            raise NoFrames("cannot write an empty Y4M without dimensions")
    return n


# ---------------------------------------------------------------------------
# image sequences


def _decode_image(path: str, index: int) -> Frame:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "1"):
                return Frame.gray(np.asarray(im.convert("L"), dtype=np.uint8), index)
            return Frame.rgb(np.asarray(im.convert("RGB"), dtype=np.uint8), index)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def open_image_sequence(directory: str, pattern: str = "*.png", fps=None) -> FrameStream:
    paths = sorted(glob.glob(os.path.join(glob.escape(directory), pattern)))
    paths = [p for p in paths if os.path.isfile(p)]
    if not paths:
        raise NoFrames(f"no files matching {pattern!r} in {directory}")
    first = _decode_image(paths[0], 0)

    def frames() -> Iterator[Frame]:
        for i, p in enumerate(paths):
            f = first if i == 0 else _decode_image(p, i)
            if (f.width, f.height) != (first.width, first.height):
                raise DimensionMismatch(
                    f"{os.path.basename(p)} is {f.width}x{f.height}, expected {first.width}x{first.height}"
                )
            yield f

    # eager dimension check so that errors surface at open time
    for _ in frames():
        pass
    return FrameStream(frames, Fraction(fps) if fps else None, first.width, first.height, source=directory)


# ---------------------------------------------------------------------------
# backbone preprocessing


@dataclass(frozen=True)
class BackboneInput:
    data: np.ndarray  # float32, (3, H, W)
    normalization: dict
    frame_index: int = 0

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def yuv420_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """BT.709 full-range conversion with nearest-neighbour chroma upsampling; float64 in [0, 255]."""
    h, w = y.shape
    u = np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    v = np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    yf = y.astype(np.float64)
    r = yf + BT709_CR_TO_R * v
    g = yf + BT709_CB_TO_G * u + BT709_CR_TO_G * v
    b = yf + BT709_CB_TO_B * u
    return np.clip(np.stack([r, g, b]), 0.0, 255.0)


def to_backbone_input(frame: Frame) -> BackboneInput:
    if frame.pixel_format is PixelFormat.YUV420P8:
        rgb = yuv420_to_rgb(*frame.planes)
    elif frame.pixel_format is PixelFormat.RGB8:
        rgb = frame.planes[0].transpose(2, 0, 1).astype(np.float64)
    elif frame.pixel_format is PixelFormat.GRAY8:
        rgb = np.repeat(frame.planes[0][None].astype(np.float64), 3, axis=0)
    else:
        raise UnsupportedFormat(str(frame.pixel_format))
    mean = np.asarray(IMAGENET_MEAN)[:, None, None]
    std = np.asarray(IMAGENET_STD)[:, None, None]
    data = ((rgb / 255.0 - mean) / std).astype(np.float32)
    norm = {"scale": 1.0 / 255.0, "mean": IMAGENET_MEAN, "std": IMAGENET_STD, "matrix": "bt709-full"}
    return BackboneInput(data, norm, frame.frame_index)


# ---------------------------------------------------------------------------
# temporal sampling


class SamplingMode(enum.Enum):
    EVERY_FRAME = "every-frame"
    EVERY_N_FRAMES = "every-n"
    ONCE_PER_SECOND = "per-second"


@dataclass(frozen=True)
class SamplingPolicy:
    mode: SamplingMode = SamplingMode.EVERY_FRAME
    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sampling stride n must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "SamplingPolicy":
        """Parse ``every-frame``, ``every-n:N`` or ``per-second``."""
        if text == "every-frame":
            return cls(SamplingMode.EVERY_FRAME)
        if text == "per-second":
            return cls(SamplingMode.ONCE_PER_SECOND)
        m = re.fullmatch(r"every-n:(\d+)", text)
        if m and int(m.group(1)) >= 1:
            return cls(SamplingMode.EVERY_N_FRAMES, int(m.group(1)))
        raise ValueError(f"invalid sampling policy {text!r}")

    def __str__(self) -> str:
        if self.mode is SamplingMode.EVERY_N_FRAMES:
            return f"every-n:{self.n}"
        return self.mode.value


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def sample_indices(policy: SamplingPolicy, fps: Optional[Fraction]) -> Iterator[int]:
    """Infinite increasing sequence of selected frame indices."""
    k = 0
    if policy.mode is SamplingMode.EVERY_FRAME:
        step = 1
    elif policy.mode is SamplingMode.EVERY_N_FRAMES:
        step = policy.n
    else:
        if fps is None:
            raise MissingFrameRate("per-second sampling requires a stream frame rate")
        fps = Fraction(fps)
        last = -1
        while True:
            idx = _round_half_up(k * fps)
            if idx > last:
                yield idx
                last = idx
            k += 1
    while True:
        yield k * step
        k += 1


def sample_frames(stream: FrameStream | Iterable[Frame], policy: SamplingPolicy) -> list[Frame]:
    fps = getattr(stream, "fps", None)
    wanted = sample_indices(policy, fps)
    target = next(wanted)
    out = []
    for position, frame in enumerate(stream):
        if position == target:
            out.append(frame)
            target = next(wanted)
    return out
