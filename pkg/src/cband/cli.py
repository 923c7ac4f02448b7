"""Command-line entry point: ``cband {extract,score,train,benchmark,sureal,synth}``."""

from __future__ import annotations

import argparse
import csv
import glob
import json
import math
import os
import sys
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .backbone import file_sha256, load_backbone, read_manifest
from .cache import export_csv, read_cache, write_cache
from .errors import CbandError, DataIntegrityError, ManifestMissing, ShapeError
from .evaluation import make_splits, read_mos_csv, run_benchmark
from .ingest import SamplingPolicy, write_y4m
from .nss import FeatureMode, build_window
from .pipeline import Timings, extract_features, open_input, score_features
from .regressor import LabeledFeatureSet, TrainConfig, load_model, mlp_init, save_model, train
from .sureal import RatingsTable, estimate
from .synth import SynthSpec, severity_ladder

SCHEMA_VERSION = 1
CACHE_ENV = "CBAND_CACHE_DIR"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad combination of arguments or a referenced file that does not exist."""


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _write_json(path: Optional[str], obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _read_json(path: str) -> dict:
    with open(_require_file(path, "config")) as fh:
        return json.load(fh)


def _video_id(path: str) -> str:
    base = os.path.basename(os.path.normpath(path))
    return os.path.splitext(base)[0] if os.path.isfile(path) else base


def _sidecar(cache_path: str) -> str:
    return os.path.splitext(cache_path)[0] + ".json"


def _resolve_manifest(path: str, stage: Optional[int]) -> str:
    """Manifest to use; ``--stage`` swaps to the sibling ``{arch}-stage{N}.json``."""
    if not os.path.isfile(path):
        raise ManifestMissing(f"backbone manifest not found: {path}")
    if stage is None:
        return path
    manifest = read_manifest(path)
    if manifest["stage_index"] == stage:
        return path
    arch = manifest["name"].rsplit("-stage", 1)[0]
    sibling = os.path.join(os.path.dirname(os.path.abspath(path)), f"{arch}-stage{stage}.json")
    if not os.path.isfile(sibling):
        raise ManifestMissing(f"no manifest for {arch} stage {stage}: {sibling}")
    return sibling


# ---------------------------------------------------------------------------
# extraction shared by extract and score --input


def _extract(args, timings: Timings):
    _require_file(args.input, "input")
    manifest_path = _resolve_manifest(args.backbone, args.stage)
    handle = load_backbone(args.onnx, manifest_path, intra_threads=args.threads)
    fps = Fraction(args.fps) if args.fps else None
    stream = open_input(args.input, args.pattern, fps)
    policy = SamplingPolicy.parse(args.sampling)
    window = build_window(sigma=args.mscn_sigma)
    cache = extract_features(stream, handle, policy, FeatureMode.parse(args.feature_mode), window,
                             jobs=args.jobs, timings=timings)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "video_id": _video_id(args.input),
        "backbone": handle.name,
        "backbone_sha256": file_sha256(handle.model_path),
        "sampling": str(policy),
        "feature_mode": cache.mode.name,
        "mscn_sigma": window.sigma,
        "frames": len(cache.frame_indices),
    }
    return cache, meta


def _default_cache_path(video_id: str) -> str:
    return os.path.join(os.environ.get(CACHE_ENV, "."), video_id + ".cbnd")


def _print_frame_timings(timings: Timings) -> None:
    for row in timings.per_frame:
        print(f"frame {row['frame_index']:6d}  inference {row['inference_s'] * 1e3:8.2f} ms"
              f"  nss {row['nss_s'] * 1e3:8.2f} ms")


def cmd_extract(args) -> int:
    timings = Timings()
    cache, meta = _extract(args, timings)
    out = args.out or _default_cache_path(meta["video_id"])
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_cache(out, cache)
    _write_json(_sidecar(out), meta)
    if args.csv:
        export_csv(cache, args.csv)
    if not args.quiet:
        _print_frame_timings(timings)
    if args.timings:
        _write_json(args.timings, timings.to_json())
    return EXIT_OK


def cmd_score(args) -> int:
    timings = Timings()
    model = load_model(_require_file(args.model, "model"))
    if args.features:
        cache = read_cache(_require_file(args.features, "feature cache"))
        side = _sidecar(args.features)
        meta = _read_json(side) if os.path.isfile(side) else {}
        video_id = meta.get("video_id", _video_id(args.features))
        sampling = meta.get("sampling")
    else:
        cache, meta = _extract(args, timings)
        video_id, sampling = meta["video_id"], meta["sampling"]
        if os.environ.get(CACHE_ENV):
            path = _default_cache_path(video_id)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            write_cache(path, cache)
            _write_json(_sidecar(path), meta)
    if cache.mode is not model.feature_mode or cache.dim != model.input_dim:
        raise ShapeError(f"features are {cache.mode.name} x {cache.dim}, model expects "
                               f"{model.feature_mode.name} x {model.input_dim}")
    frame_scores, score = score_features(model, cache, timings)
    _write_json(args.out, {
        "schema_version": SCHEMA_VERSION,
        "video_id": video_id,
        "frame_indices": [int(i) for i in cache.frame_indices],
        "frame_scores": frame_scores,
        "video_score": score,
        "model_id": file_sha256(args.model),
        "sampling": sampling,
    })
    if args.timings:
        _write_json(args.timings, timings.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# training and benchmarking over a directory of caches


def _load_feature_dir(directory: str) -> tuple[dict, dict]:
    if not os.path.isdir(directory):
        raise UsageError(f"features directory not found: {directory}")
    caches, metas = {}, {}
    for path in sorted(glob.glob(os.path.join(directory, "*.cbnd"))):
        side = _sidecar(path)
        meta = _read_json(side) if os.path.isfile(side) else {}
        vid = meta.get("video_id", _video_id(path))
        if vid in caches:
            raise DataIntegrityError(f"video {vid!r} appears twice in {directory}")
        caches[vid], metas[vid] = read_cache(path), meta
    if not caches:
        raise DataIntegrityError(f"no .cbnd caches in {directory}")
    modes = {(c.mode, c.dim) for c in caches.values()}
    if len(modes) != 1:
        raise DataIntegrityError(f"caches disagree on feature mode/dimension: {sorted(modes)}")
    return caches, metas


def _train_config(path: Optional[str]) -> TrainConfig:
    return TrainConfig.from_json(_read_json(path)) if path else TrainConfig()


def cmd_train(args) -> int:
    caches, metas = _load_feature_dir(args.features_dir)
    mos = read_mos_csv(_require_file(args.mos, "MOS csv"))
    missing = sorted(set(caches) - set(mos))
    if missing:
        raise DataIntegrityError(f"no MOS for videos {missing[:5]}")
    cfg = _train_config(args.cfg)
    videos = sorted(caches)
    X = np.concatenate([caches[v].features.astype(np.float64) for v in videos])
    y = np.concatenate([np.full(len(caches[v].features), mos[v].mos) for v in videos])
    first = caches[videos[0]]
    backbone = metas[videos[0]].get("backbone", "")
    history: list = []
    model = train(mlp_init(first.dim, cfg.seed, first.mode, backbone), LabeledFeatureSet(X, y), cfg, history)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_model(model, args.out)
    log = args.log or os.path.splitext(args.out)[0] + ".log.csv"
    with open(log, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows((e, repr(float(loss))) for e, loss in history)
    if not args.quiet:
        print(f"trained on {len(y)} frames from {len(videos)} videos; final L1 "
              f"{model.train_meta['final_loss']:.4f}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    caches, _ = _load_feature_dir(args.features_dir)
    mos = read_mos_csv(_require_file(args.mos, "MOS csv"))
    split_cfg = _read_json(args.splits) if args.splits else {}
    contents = [mos[v].content_id for v in caches if v in mos]
    plan = make_splits(contents, repeats=int(split_cfg.get("repeats", 50)),
                       train_fraction=float(split_cfg.get("train_fraction", 0.8)),
                       seed=int(split_cfg.get("seed", 0)))

    def progress(i, rep):
        if not args.quiet:
            print(f"repeat {i:3d}  srocc {rep.srocc:.4f}  plcc {rep.plcc:.4f}", file=sys.stderr)

    result = run_benchmark({v: c.features.astype(np.float64) for v, c in caches.items()}, mos, plan,
                           _train_config(args.cfg), args.logistic_form, progress)
    report = result.to_json()
    report["logistic_form"] = args.logistic_form
    report["split"] = {"repeats": len(plan), "train_fraction": plan.train_fraction, "seed": plan.seed}
    _write_json(args.out, report)
    if args.summary:
        with open(args.summary, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "mean", "median", "std"])
            for key in ("srocc", "krocc", "plcc", "rmse"):
                vals = result.values(key)
                vals = vals[~np.isnan(vals)]
                stats = (vals.mean(), np.median(vals), vals.std()) if vals.size else (math.nan,) * 3
                w.writerow([key, *map(float, stats)])
    return EXIT_OK


def cmd_sureal(args) -> int:
    ratings = RatingsTable.from_csv(_require_file(args.ratings, "ratings csv"))
    est = estimate(ratings, max_iter=args.max_iter, tol=args.tol, v_floor=args.v_floor,
                   with_ambiguity=args.with_ambiguity)
    out = est.to_json()
    out["with_ambiguity"] = args.with_ambiguity
    _write_json(args.out, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synthetic stimuli

DEFAULT_LADDER = (8, 7, 6, 5, 4, 3)


def synthetic_mos(bits: int) -> float:
    """Label for synthetic training: 10 MOS points per bit of depth, 80 at 8 bits."""
    return 10.0 * bits


def cmd_synth(args) -> int:
    cfg = _read_json(args.spec)
    bits_list = [int(b) for b in cfg.get("bits_list", DEFAULT_LADDER)]
    n_frames = int(cfg.get("frames", 1))
    fps = Fraction(cfg.get("fps", 30))
    if n_frames < 1:
        raise ValueError("frames must be >= 1")
    base = {k: v for k, v in cfg.items() if k in SynthSpec.__dataclass_fields__}
    contents = cfg.get("contents") or [{}]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for ci, override in enumerate(contents):
        spec = SynthSpec.from_json({**base, **override})
        content_id = f"c{ci:02d}"
        for bits, frame in zip(bits_list, severity_ladder(spec, bits_list)):
            video_id = f"{content_id}_b{bits}"
            frames = [frame.with_index(i) for i in range(n_frames)]
            write_y4m(os.path.join(args.out, video_id + ".y4m"), frames, fps)
            if args.png:
                from PIL import Image

                seq_dir = os.path.join(args.out, video_id)
                os.makedirs(seq_dir, exist_ok=True)
                for f in frames:
                    Image.fromarray(f.planes[0]).save(os.path.join(seq_dir, f"{f.frame_index:05d}.png"))
            rows.append((video_id, content_id, bits, synthetic_mos(bits)))
    with open(os.path.join(args.out, "spec.json"), "w") as fh:
        json.dump({**cfg, "bits_list": bits_list, "frames": n_frames, "fps": str(fps)}, fh,
                  indent=2, sort_keys=True)
    with open(os.path.join(args.out, "mos.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "content_id", "crf", "mos"])
        w.writerows(rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_extraction_flags(p: argparse.ArgumentParser, input_required: bool) -> None:
    p.add_argument("--input", required=input_required, help="Y4M file or directory of images")
    p.add_argument("--pattern", default="*.png", help="glob for image sequences (default %(default)s)")
    p.add_argument("--fps", help="frame rate of an image sequence, e.g. 30 or 30000/1001")
    p.add_argument("--backbone", default=None, help="backbone manifest JSON")
    p.add_argument("--onnx", default=None, help="ONNX file; defaults to the manifest's model_file")
    p.add_argument("--stage", type=int, default=None, help="use the sibling manifest for this stage")
    p.add_argument("--sampling", default="every-frame", help="every-frame | every-n:N | per-second")
    p.add_argument("--feature-mode", default="ggd", choices=[m.name.lower() for m in FeatureMode])
    p.add_argument("--mscn-sigma", type=float, default=None, help="MSCN window sigma (default K/3)")
    p.add_argument("--jobs", type=int, default=1, help="frame-parallel workers")
    p.add_argument("--threads", type=int, default=0, help="onnxruntime intra-op threads (0 = default)")
    p.add_argument("--timings", default=None, help="write per-stage wall times as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cband", description="No-reference banding quality toolkit.")
    parser.add_argument("--version", action="version", version=f"cband {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="per-frame NSS features from a video")
    _add_extraction_flags(p, input_required=True)
    p.add_argument("--out", default=None, help=f"cache path (default ${CACHE_ENV} or cwd)")
    p.add_argument("--csv", default=None, help="also export the features as CSV")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("score", help="predict a video score")
    _add_extraction_flags(p, input_required=False)
    p.add_argument("--features", default=None, help="precomputed .cbnd cache instead of --input")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None, help="JSON output (default stdout)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="fit the regressor on cached features")
    p.add_argument("--features-dir", required=True)
    p.add_argument("--mos", required=True, help="CSV with video_id, content_id, crf, mos")
    p.add_argument("--cfg", default=None, help="training config JSON")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--log", default=None, help="training log CSV (default next to the model)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("benchmark", help="repeated content-disjoint train/test evaluation")
    p.add_argument("--features-dir", required=True)
    p.add_argument("--mos", required=True)
    p.add_argument("--splits", default=None, help="JSON {repeats, train_fraction, seed}")
    p.add_argument("--cfg", default=None, help="training config JSON")
    p.add_argument("--logistic-form", default="standard", choices=["standard", "printed"])
    p.add_argument("--out", default=None, help="JSON report (default stdout)")
    p.add_argument("--summary", default=None, help="CSV summary")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sureal", help="recover scores from raw opinion ratings")
    p.add_argument("--ratings", required=True, help="CSV with subject_id, stimulus_id, content_id, score")
    p.add_argument("--out", default=None)
    p.add_argument("--with-ambiguity", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--v-floor", type=float, default=1e-3)
    p.set_defaults(func=cmd_sureal)

    p = sub.add_parser("synth", help="write a bit-depth banding ladder")
    p.add_argument("--spec", required=True, help="JSON: SynthSpec fields plus bits_list, frames, fps, contents")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--png", action="store_true", help="also write PNG sequences")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "score" and bool(args.features) == bool(args.input):
            raise UsageError("score needs exactly one of --input or --features")
        if getattr(args, "input", None) and args.backbone is None:
            raise UsageError("--backbone is required with --input")
        return args.func(args)
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
        return EXIT_USAGE
    except ManifestMissing as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_USAGE
    except CbandError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_FAILURE
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
