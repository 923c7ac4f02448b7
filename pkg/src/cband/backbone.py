"""Truncated CNN backbones served from ONNX files plus a JSON manifest."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputTooSmall, ManifestMismatch, ManifestMissing, ModelLoadError

MIN_INPUT_SIZE = 32
PROBE_SIZE = 64
MANIFEST_KEYS = ("name", "stage_index", "expected_channels", "cumulative_stride")


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def downsampled_size(size: int, stride: int, rounding: str = "ceil") -> int:
    """Spatial size after log2(stride) halvings, each rounded per the manifest."""
    halvings = int(round(math.log2(stride)))
    for _ in range(halvings):
        size = (size + 1) // 2 if rounding == "ceil" else size // 2
    return size


@dataclass(frozen=True)
class ActivationMaps:
    data: np.ndarray  # float32, (C, H', W')
    frame_index: int = 0

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


class BackboneHandle:
    """A loaded, validated backbone. Safe to share across threads once constructed."""

    def __init__(self, session, manifest: dict, model_path: str):
        self._session = session
        self._input_name = session.get_inputs()[0].name
        self.manifest = dict(manifest)
        self.model_path = model_path
        self.name = manifest["name"]
        self.stage_index = int(manifest["stage_index"])
        self.expected_channels = int(manifest["expected_channels"])
        self.cumulative_stride = int(manifest["cumulative_stride"])
        self.rounding = manifest.get("downsample_rounding", "ceil")

    def output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        return (self.expected_channels,
                downsampled_size(height, self.cumulative_stride, self.rounding),
                downsampled_size(width, self.cumulative_stride, self.rounding))

    def run(self, batch: np.ndarray) -> np.ndarray:
        return self._session.run(None, {self._input_name: batch})[0]

    def __repr__(self) -> str:
        return f"BackboneHandle({self.name!r}, stage={self.stage_index}, C={self.expected_channels})"


def read_manifest(manifest_path: str) -> dict:
    if not os.path.isfile(manifest_path):
        raise ManifestMissing(f"manifest not found: {manifest_path}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestMismatch(f"unreadable manifest {manifest_path}: {exc}") from exc
    missing = [k for k in MANIFEST_KEYS if k not in manifest]
    if missing:
        raise ManifestMismatch(f"manifest lacks {missing}")
    return manifest


def default_model_path(manifest_path: str, manifest: dict) -> str:
    rel = manifest.get("model_file", manifest["name"] + ".onnx")
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), rel)


def load_backbone(model_path: Optional[str], manifest_path: str, intra_threads: int = 0) -> BackboneHandle:
    manifest = read_manifest(manifest_path)
    if model_path is None:
        model_path = default_model_path(manifest_path, manifest)
    if not os.path.isfile(model_path):
        raise ModelLoadError(f"model file not found: {model_path}")
    if manifest.get("sha256") and manifest["sha256"] != file_sha256(model_path):
        raise ManifestMismatch(f"sha256 of {model_path} does not match the manifest")

    import onnxruntime as ort

    opts = ort.SessionOptions()
    opts.log_severity_level = 3
    if intra_threads:
        opts.intra_op_num_threads = intra_threads
    try:
        session = ort.InferenceSession(model_path, sess_options=opts, providers=["CPUExecutionProvider"])
    except Exception as exc:  # onnxruntime raises several unrelated types
        raise ModelLoadError(f"cannot load {model_path}: {exc}") from exc
    handle = BackboneHandle(session, manifest, model_path)
    probe = np.zeros((1, 3, PROBE_SIZE, PROBE_SIZE), np.float32)
    try:
        out = handle.run(probe)
    except Exception as exc:
        raise ModelLoadError(f"probe inference failed for {model_path}: {exc}") from exc
    if out.ndim != 4 or out.shape[1] != handle.expected_channels:
        raise ManifestMismatch(
            f"{handle.name}: graph emits {out.shape[1] if out.ndim == 4 else out.shape} channels, "
            f"manifest declares {handle.expected_channels}"
        )
    if out.shape[2:] != handle.output_shape(PROBE_SIZE, PROBE_SIZE)[1:]:
        raise ManifestMismatch(
            f"{handle.name}: probe output {out.shape[2:]} disagrees with stride {handle.cumulative_stride}"
        )
    return handle


def extract_activation_maps(handle: BackboneHandle, inp) -> ActivationMaps:
    data = inp.data
    if data.shape[0] != 3 or data.ndim != 3:
        raise ValueError(f"backbone input must be (3, H, W), got {data.shape}")
    if data.shape[1] < MIN_INPUT_SIZE or data.shape[2] < MIN_INPUT_SIZE:
        raise InputTooSmall(f"input {data.shape[2]}x{data.shape[1]} below {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}")
    out = handle.run(np.ascontiguousarray(data[None], dtype=np.float32))[0]
    return ActivationMaps(out, getattr(inp, "frame_index", 0))
