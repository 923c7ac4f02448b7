#!/usr/bin/env python3
"""Export truncated ResNet50/VGG16 backbones to ONNX with manifests.

Needs the ``export`` extra (torch, torchvision, onnx).  Without ``--weights``
the graphs carry seeded random initialisation; pass ``--weights imagenet`` to
pull torchvision's pretrained weights, or a path to a saved state dict.
"""

import argparse

from cband.export import ARCHS, export_backbone


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="backbones")
    ap.add_argument("--arch", nargs="+", default=sorted(ARCHS), choices=sorted(ARCHS))
    ap.add_argument("--stage", nargs="+", type=int, default=[2])
    ap.add_argument("--weights", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--opset", type=int, default=17)
    args = ap.parse_args()
    for arch in args.arch:
        for stage in args.stage:
            print(export_backbone(arch, stage, args.out, args.weights, args.seed, args.opset))


if __name__ == "__main__":
    main()
