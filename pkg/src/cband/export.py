"""Offline export of truncated torchvision backbones to ONNX + manifest.

Needs torch/torchvision (``pip install .[export]``); the runtime only needs onnxruntime.
Stage boundaries follow the resolution-reduction convention: ResNet50 stage 1
ends after ``layer1``, stage s>1 after ``layer{s}``; VGG16 stage s ends at its
s-th max-pool.
"""

from __future__ import annotations

import json
import os
from typing import Optional

from .backbone import file_sha256

RESNET50_CHANNELS = {1: 256, 2: 512, 3: 1024, 4: 2048}
VGG16_CHANNELS = {1: 64, 2: 128, 3: 256, 4: 512, 5: 512}
# index one past each max-pool in torchvision's vgg16().features
VGG16_STAGE_END = {1: 5, 2: 10, 3: 17, 4: 24, 5: 31}
ARCHS = {"resnet50": RESNET50_CHANNELS, "vgg16": VGG16_CHANNELS}


def build_truncated(arch: str, stage: int, weights: Optional[str] = None, seed: int = 0):
    """Return (module, weights_note). ``weights`` is "imagenet", a state-dict path, or None for seeded init."""
    import torch
    import torchvision

    if arch not in ARCHS or stage not in ARCHS[arch]:
        raise ValueError(f"unknown backbone {arch}-stage{stage}")
    torch.manual_seed(seed)
    ctor = getattr(torchvision.models, arch)
    if weights == "imagenet":
        model = ctor(weights="IMAGENET1K_V1")
        note = "imagenet:IMAGENET1K_V1"
    else:
        model = ctor(weights=None)
        note = f"random-init:seed={seed}"
        if weights:
            model.load_state_dict(torch.load(weights, map_location="cpu"))
            note = f"state-dict:{os.path.basename(weights)}"
    model.eval()
    if arch == "resnet50":
        layers = [model.conv1, model.bn1, model.relu, model.maxpool, model.layer1]
        layers += [getattr(model, f"layer{s}") for s in range(2, stage + 1)]
        module = torch.nn.Sequential(*layers)
    else:
        module = torch.nn.Sequential(*list(model.features.children())[:VGG16_STAGE_END[stage]])
    return module.eval(), note


def export_backbone(arch: str, stage: int, out_dir: str, weights: Optional[str] = None,
                    seed: int = 0, opset: int = 17) -> str:
    """Write ``{arch}-stage{stage}.onnx`` and its manifest; return the manifest path."""
    import torch

    module, note = build_truncated(arch, stage, weights, seed)
    name = f"{arch}-stage{stage}"
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, name + ".onnx")
    probe = torch.zeros(1, 3, 64, 64)
    with torch.no_grad():
        torch.onnx.export(
            module, probe, model_path, opset_version=opset,
            input_names=["input"], output_names=["maps"],
            dynamic_axes={"input": {0: "batch", 2: "height", 3: "width"},
                          "maps": {0: "batch", 2: "out_height", 3: "out_width"}},
            dynamo=False,
        )
    manifest = {
        "name": name,
        "stage_index": stage,
        "expected_channels": ARCHS[arch][stage],
        "cumulative_stride": 2 ** (stage + 1) if arch == "resnet50" else 2 ** stage,
        "downsample_rounding": "ceil" if arch == "resnet50" else "floor",
        "model_file": os.path.basename(model_path),
        "weights": note,
        "opset": opset,
        "sha256": file_sha256(model_path),
    }
    manifest_path = os.path.join(out_dir, name + ".json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest_path
