"""Frame-level feature extraction and video scoring."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backbone import BackboneHandle, extract_activation_maps
from .cache import FeatureCache
from .errors import NoFrames
from .ingest import FrameStream, SamplingPolicy, open_image_sequence, open_y4m, sample_frames, to_backbone_input
from .nss import FeatureMode, GaussianWindow, build_window, frame_features
from .regressor import MLPModel, mlp_forward, video_score


@dataclass
class Timings:
    decode: float = 0.0
    inference: float = 0.0
    nss: float = 0.0
    regression: float = 0.0
    per_frame: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"decode_s": self.decode, "inference_s": self.inference, "nss_s": self.nss,
                "regression_s": self.regression, "per_frame": self.per_frame}


def open_input(path: str, pattern: str = "*.png", fps=None) -> FrameStream:
    if os.path.isdir(path):
        return open_image_sequence(path, pattern, fps)
    return open_y4m(path)


def extract_features(stream: FrameStream, handle: BackboneHandle, policy: SamplingPolicy,
                     mode: FeatureMode = FeatureMode.GGD, window: Optional[GaussianWindow] = None,
                     jobs: int = 1, timings: Optional[Timings] = None) -> FeatureCache:
    """Sample frames, run the backbone and NSS on each; results are in frame order for any ``jobs``."""
    timings = timings if timings is not None else Timings()
    window = window or build_window()
    t0 = time.perf_counter()
    frames = sample_frames(stream, policy)
    timings.decode += time.perf_counter() - t0
    if not frames:
        raise NoFrames("stream contains no frames")

    def one(frame):
        t1 = time.perf_counter()
        maps = extract_activation_maps(handle, to_backbone_input(frame))
        t2 = time.perf_counter()
        vec = frame_features(maps, mode, window)
        t3 = time.perf_counter()
        return vec, t2 - t1, t3 - t2

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, frames))
    else:
        results = [one(f) for f in frames]
    vectors = []
    for frame, (vec, t_inf, t_nss) in zip(frames, results):
        vectors.append(vec)
        timings.inference += t_inf
        timings.nss += t_nss
        timings.per_frame.append({"frame_index": frame.frame_index, "inference_s": t_inf, "nss_s": t_nss,
                                  "diagnostics": len(vec.diagnostics)})
    return FeatureCache.from_vectors(vectors, handle.expected_channels, mode)


def score_features(model: MLPModel, cache: FeatureCache, timings: Optional[Timings] = None):
    t0 = time.perf_counter()
    frame_scores = np.atleast_1d(mlp_forward(model, cache.features.astype(np.float64)))
    score = video_score(frame_scores)
    if timings is not None:
        timings.regression += time.perf_counter() - t0
    return [float(s) for s in frame_scores], score
