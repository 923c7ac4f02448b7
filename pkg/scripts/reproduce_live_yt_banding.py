#!/usr/bin/env python3
"""Full benchmark on LIVE-YT-Banding: extract features for every video, then 50 split repeats.

The dataset ships AV1 MP4s; convert them to Y4M first, e.g.

    for f in videos/*.mp4; do ffmpeg -i "$f" -pix_fmt yuv420p "y4m/$(basename "${f%.mp4}").y4m"; done

The MOS csv needs columns video_id (file stem), content_id, crf, mos.
Feature extraction is the slow part and is skipped for caches that already exist.
"""

import argparse
import glob
import json
import os
import sys
import time

from cband.cli import main as cband

REFERENCE_SROCC = 0.8012


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--videos", required=True, help="directory of .y4m files")
    ap.add_argument("--mos", required=True)
    ap.add_argument("--backbone", required=True, help="resnet50-stage2 manifest (pretrained weights)")
    ap.add_argument("--work", default="live_yt_banding_run")
    ap.add_argument("--sampling", default="per-second")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    feats = os.path.join(args.work, "features")
    os.makedirs(feats, exist_ok=True)
    videos = sorted(glob.glob(os.path.join(args.videos, "*.y4m")))
    if not videos:
        print(f"no .y4m files in {args.videos}", file=sys.stderr)
        return 2
    t0 = time.time()
    for i, path in enumerate(videos):
        out = os.path.join(feats, os.path.splitext(os.path.basename(path))[0] + ".cbnd")
        if os.path.exists(out):
            continue
        rc = cband(["extract", "--input", path, "--backbone", args.backbone, "--sampling", args.sampling,
                    "--jobs", str(args.jobs), "--out", out, "--quiet"])
        if rc:
            return rc
        print(f"[{i + 1}/{len(videos)}] {path}  {time.time() - t0:.0f}s elapsed", file=sys.stderr)

    splits = os.path.join(args.work, "splits.json")
    with open(splits, "w") as fh:
        json.dump({"repeats": args.repeats, "train_fraction": 0.8, "seed": args.seed}, fh)
    report = os.path.join(args.work, "report.json")
    rc = cband(["benchmark", "--features-dir", feats, "--mos", args.mos, "--splits", splits,
                "--out", report, "--summary", os.path.join(args.work, "summary.csv")])
    if rc:
        return rc
    with open(report) as fh:
        mean = json.load(fh)["mean"]
    print(json.dumps(mean, indent=2))
    print(f"mean SROCC {mean['srocc']:.4f} vs reference {REFERENCE_SROCC}"
          f" (diff {mean['srocc'] - REFERENCE_SROCC:+.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
