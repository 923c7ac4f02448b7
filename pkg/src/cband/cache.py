"""Binary per-video feature cache and its CSV export.

Layout (little-endian)::

    header  <4s "CBND"><u16 version><u32 C><u8 mode><u32 frame_count>
    record  <u32 frame_index><f32 x D>      D = 2C (GGD, MEAN_STD) or C (single-feature modes)

GGD records interleave (alpha_1, sigma_1, ..., alpha_C, sigma_C); MEAN_STD
records interleave (mean, std) the same way.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FeatureCacheError
from .nss import FeatureMode, NSSFeatureVector

CACHE_MAGIC = b"CBND"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHIBI")


@dataclass
class FeatureCache:
    channels: int
    mode: FeatureMode
    frame_indices: np.ndarray  # (T,) uint32
    features: np.ndarray  # (T, D) float32

    @property
    def dim(self) -> int:
        return self.channels * self.mode.per_channel

    @classmethod
    def from_vectors(cls, vectors: list[NSSFeatureVector], channels: int, mode: FeatureMode) -> "FeatureCache":
        dim = channels * mode.per_channel
        feats = np.zeros((len(vectors), dim), np.float32)
        for i, v in enumerate(vectors):
            if v.mode is not mode or len(v.values) != dim:
                raise FeatureCacheError(f"vector {i} does not match {mode.name} with C={channels}")
            feats[i] = v.values
        idx = np.array([v.frame_index for v in vectors], dtype=np.uint32)
        return cls(channels, mode, idx, feats)


def write_cache(path: str, cache: FeatureCache) -> None:
    dim = cache.dim
    if cache.features.shape != (len(cache.frame_indices), dim):
        raise FeatureCacheError(f"features shape {cache.features.shape} inconsistent with C={cache.channels}")
    rec = np.zeros(len(cache.frame_indices), dtype=[("idx", "<u4"), ("v", "<f4", (dim,))])
    rec["idx"] = cache.frame_indices
    rec["v"] = cache.features
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, cache.channels, int(cache.mode),
                              len(cache.frame_indices)))
        fh.write(rec.tobytes())


def read_cache(path: str) -> FeatureCache:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise FeatureCacheError(f"{path}: truncated header")
    magic, version, channels, mode_raw, count = _HEADER.unpack_from(buf)
    if magic != CACHE_MAGIC:
        raise FeatureCacheError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FeatureCacheError(f"{path}: unsupported version {version}")
    try:
        mode = FeatureMode(mode_raw)
    except ValueError as exc:
        raise FeatureCacheError(f"{path}: unknown feature mode {mode_raw}") from exc
    dim = channels * mode.per_channel
    dtype = np.dtype([("idx", "<u4"), ("v", "<f4", (dim,))])
    body = buf[_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        raise FeatureCacheError(f"{path}: expected {count} records of {dtype.itemsize} bytes")
    rec = np.frombuffer(body, dtype=dtype, count=count)
    return FeatureCache(channels, mode, rec["idx"].copy(), rec["v"].reshape(count, dim).copy())


def column_names(channels: int, mode: FeatureMode) -> list[str]:
    if mode is FeatureMode.GGD:
        pairs = ("alpha", "sigma")
    elif mode is FeatureMode.MEAN_STD:
        pairs = ("mean", "std")
    else:
        return [f"{'alpha' if mode is FeatureMode.ALPHA_ONLY else 'sigma'}_{c}" for c in range(channels)]
    return [f"{name}_{c}" for c in range(channels) for name in pairs]


def export_csv(cache: FeatureCache, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index"] + column_names(cache.channels, cache.mode))
        for idx, row in zip(cache.frame_indices, cache.features):
            w.writerow([int(idx)] + [repr(float(v)) for v in row])
