#!/usr/bin/env python3
"""Print channel-mean GGD shape along a bit-depth ladder for each gradient orientation."""

import argparse

from cband.backbone import extract_activation_maps, load_backbone
from cband.ingest import to_backbone_input
from cband.nss import build_window, fitted_alpha_means, frame_features, monotone_steps
from cband.synth import Gradient, SynthSpec, severity_ladder


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("manifest", help="backbone manifest JSON")
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--bits", type=int, nargs="+", default=[8, 7, 6, 5, 4, 3])
    args = ap.parse_args()
    handle = load_backbone(None, args.manifest)
    window = build_window()
    print("orientation   " + "  ".join(f"b{b:<5d}" for b in args.bits))
    for grad in Gradient:
        spec = SynthSpec(args.size, args.size, grad)
        vectors = [frame_features(extract_activation_maps(handle, to_backbone_input(f)), window=window)
                   for f in severity_ladder(spec, args.bits)]
        trace = fitted_alpha_means(vectors)
        print(f"{grad.value:<12s}  " + "  ".join(f"{x:6.3f}" for x in trace)
              + f"   monotone steps {monotone_steps(trace)}/{len(trace) - 1}")


if __name__ == "__main__":
    main()
