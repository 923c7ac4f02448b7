"""Synthetic banding stimuli: smooth ramps pushed through bit-depth reduction."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyLadder, UnsupportedFormat
from .ingest import Frame, PixelFormat

BAYER_4x4 = np.array([[0, 8, 2, 10],
                      [12, 4, 14, 6],
                      [3, 11, 1, 9],
                      [15, 7, 13, 5]], dtype=np.float64)


class Gradient(enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    RADIAL = "radial"


@dataclass(frozen=True)
class SynthSpec:
    width: int = 256
    height: int = 256
    gradient: Gradient = Gradient.HORIZONTAL
    low: int = 0
    high: int = 255
    bits: int = 8
    dither: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.gradient, str):
            object.__setattr__(self, "gradient", Gradient(self.gradient))
        if not 0 <= self.low < self.high <= 255:
            raise ValueError(f"need 0 <= low < high <= 255, got ({self.low}, {self.high})")
        if not 2 <= self.bits <= 8:
            raise ValueError(f"bits must lie in [2, 8], got {self.bits}")
        if self.width < 1 or self.height < 1:
            raise ValueError("dimensions must be positive")

    def to_json(self) -> dict:
        d = asdict(self)
        d["gradient"] = self.gradient.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SynthSpec":
        fields = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**fields)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def gradient_frame(spec: SynthSpec, frame_index: int = 0) -> Frame:
    """GRAY8 linear ramp from ``low`` to ``high`` along the chosen axis (radial: centre to corner)."""
    h, w = spec.height, spec.width
    if spec.gradient is Gradient.HORIZONTAL:
        t = np.broadcast_to(np.arange(w) / max(w - 1, 1), (h, w))
    elif spec.gradient is Gradient.VERTICAL:
        t = np.broadcast_to((np.arange(h) / max(h - 1, 1))[:, None], (h, w))
    else:
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        r = np.hypot(yy - cy, xx - cx)
        t = r / max(r.max(), 1e-12)
    pixels = _round_half_up(spec.low + (spec.high - spec.low) * t).astype(np.uint8)
    return Frame.gray(pixels, frame_index)


def quantize_bitdepth(frame: Frame, bits: int, dither: bool = False) -> Frame:
    """Reduce to ``bits`` effective bits and expand back to 8-bit levels.

    With ``dither`` a 4x4 Bayer threshold is added before rounding, which masks the contours.
    """
    if frame.pixel_format not in (PixelFormat.GRAY8, PixelFormat.RGB8):
        raise UnsupportedFormat("quantize_bitdepth needs GRAY8 or RGB8")
    if not 2 <= bits <= 8:
        raise ValueError(f"bits must lie in [2, 8], got {bits}")
    step = 2 ** (8 - bits)
    v = frame.planes[0].astype(np.float64)
    q = v / step
    if dither:
        h, w = frame.height, frame.width
        thresh = np.tile(BAYER_4x4, (h // 4 + 1, w // 4 + 1))[:h, :w] / 16.0 - 0.5 + 1.0 / 32.0
        if v.ndim == 3:
            thresh = thresh[..., None]
        q = q + thresh
    out = np.clip(_round_half_up(q) * step, 0, 255).astype(np.uint8)
    return Frame(frame.width, frame.height, frame.pixel_format, (out,), frame.frame_index, frame.timestamp)


def severity_ladder(spec: SynthSpec, bits_list: Sequence[int]) -> list[Frame]:
    bits_list = list(bits_list)
    if not bits_list:
        raise EmptyLadder("bits_list is empty")
    if any(a <= b for a, b in zip(bits_list, bits_list[1:])):
        raise ValueError(f"bits_list must be strictly decreasing, got {bits_list}")
    base = gradient_frame(spec)
    return [quantize_bitdepth(base, b, spec.dither) for b in bits_list]


def expected_level_count(low: int, high: int, bits: int) -> int:
    """Distinct output levels when a ramp visiting every integer in [low, high] is quantized."""
    step = 2 ** (8 - bits)
    lo = int(np.floor(low / step + 0.5))
    hi = int(np.floor(high / step + 0.5))
    return hi - lo + 1


def save_spec(spec: SynthSpec, path: str, **extra) -> None:
    with open(path, "w") as fh:
        json.dump({**spec.to_json(), **extra}, fh, indent=2, sort_keys=True)
