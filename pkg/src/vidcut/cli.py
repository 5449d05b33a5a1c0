"""Command-line interface: mask discovery, video synthesis, and evaluation.

Exit codes are a stable contract: 0 success, 2 I/O error, 3 configuration
error, 4 prediction/ground-truth mismatch.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .crf import CrfParams, crf_refine
from .maskcut import DEFAULT_T, maskcut, upsample_mask
from .metrics import EvalDataError, evaluate_ap, evaluate_davis
from .spectral import DEFAULT_TAU
from .synthesis import SynthConfig, SynthesisError, derive_pair_rng, synthesize

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_DATA = 4

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class ConfigError(ValueError):
    pass


def _jobs(args):
    env = os.environ.get("VIDCUT_JOBS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"VIDCUT_JOBS must be an integer, got {env!r}") from exc
    return max(1, args.jobs)


def _map_jobs(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


class _OutputTracker:
    """Records files written by a command so failures leave no partial output."""

    def __init__(self):
        self.paths = []

    def add(self, path):
        self.paths.append(Path(path))
        return path

    def discard_all(self):
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _find_image(images_dir, stem):
    for ext in IMAGE_EXTENSIONS:
        candidate = images_dir / f"{stem}{ext}"
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no image named {stem}.* in {images_dir}")


def cmd_maskcut(args) -> int:
    if args.t < 1:
        raise ConfigError("t must be >= 1")
    if not 0.0 <= args.tau < 1.0:
        raise ConfigError("tau must be in [0, 1)")
    features_dir = Path(args.features)
    images_dir = Path(args.images)
    out_dir = Path(args.out)
    for d in (features_dir, images_dir):
        if not d.is_dir():
            raise ConfigError(f"not a directory: {d}")
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_files = sorted(features_dir.glob("*.npy"))
    tracker = _OutputTracker()
    crf_params = CrfParams(
        iterations=args.crf_iterations,
        neighborhood_radius=args.crf_radius,
    )

    def process(feat_path):
        fm = io.load_feature_map(feat_path)
        image_path = _find_image(images_dir, feat_path.stem)
        patch_masks = maskcut(fm, t=args.t, tau=args.tau)
        pixel_masks = [
            upsample_mask(m, fm.patch_size, fm.image_height, fm.image_width)
            for m in patch_masks.masks
        ]
        if not args.no_crf and pixel_masks:
            image = io.load_image(image_path)
            pixel_masks = [crf_refine(image, m, crf_params) for m in pixel_masks]
        keep = [(m, s) for m, s in zip(pixel_masks, patch_masks.scores) if m.any()]
        maskset = io.MaskSet([m for m, _ in keep], [s for _, s in keep])
        return feat_path.stem, image_path, maskset

    try:
        results = _map_jobs(process, feature_files, _jobs(args))
        entries = []
        for stem, image_path, maskset in results:
            if maskset.masks:
                png_path = out_dir / f"{stem}.png"
                io.save_instance_png(tracker.add(png_path), maskset.masks)
            entries.append((stem, image_path, maskset))
        io.save_mask_manifest(entries, tracker.add(out_dir / "masks.json"))
    except BaseException:
        tracker.discard_all()
        raise
    print(f"maskcut: wrote {len(feature_files)} manifest entries to {out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.frames < 2:
        raise ConfigError("frames must be >= 2")
    if args.seed is None:
        raise ConfigError("synth requires --seed")
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise ConfigError(f"not a directory: {images_dir}")
    if not Path(args.masks).is_file():
        raise ConfigError(f"mask manifest not found: {args.masks}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(frames=args.frames, seed=args.seed)

    entries = io.load_mask_manifest(args.masks)
    usable = []
    for image_id, image_path, maskset in entries:
        if not maskset.masks:
            print(f"warning: image {image_id!r} has no masks, skipped", file=sys.stderr)
            continue
        usable.append((image_id, image_path, maskset))
    if not usable:
        raise ConfigError("no images with masks in manifest")

    order = np.random.default_rng(args.seed).permutation(len(usable))
    tracker = _OutputTracker()

    def build(pair_index):
        ti = order[pair_index]
        si = order[(pair_index + 1) % len(order)]
        target_id, target_path, target_masks = usable[ti]
        _, source_path, source_masks = usable[si]
        rng = derive_pair_rng(args.seed, pair_index)
        frames, record = synthesize(
            io.load_image(target_path),
            target_masks,
            io.load_image(source_path),
            source_masks,
            cfg,
            rng=rng,
            video_id=target_id,
        )
        return frames, record

    try:
        results = _map_jobs(build, list(range(len(usable))), _jobs(args))
        records = []
        for frames, record in results:
            video_dir = out_dir / record.video_id
            video_dir.mkdir(parents=True, exist_ok=True)
            paths = []
            for f, frame in enumerate(frames):
                frame_path = video_dir / f"frame_{f:04d}.png"
                io.save_image_png(tracker.add(frame_path), frame)
                paths.append(os.path.relpath(frame_path, out_dir))
            record.frame_paths = paths
            records.append(record)
        records.sort(key=lambda r: r.video_id)
        io.save_predictions(records, tracker.add(out_dir / "trajectories.json"))
    except BaseException:
        tracker.discard_all()
        raise
    print(f"synth: wrote {len(records)} videos to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = io.load_video_manifest(args.pred)
    gts = io.load_video_manifest(args.gt)
    pred_ids = {r.video_id for r in preds}
    for rec in gts:
        if rec.video_id not in pred_ids:
            print(
                f"warning: video {rec.video_id!r} has no predictions, scored as miss",
                file=sys.stderr,
            )
    if args.protocol == "ytvis":
        report = evaluate_ap(preds, gts)
    else:
        report = evaluate_davis(preds, gts)
    print(report.format_table())
    if args.out:
        io.atomic_write_text(args.out, json.dumps(report.to_json(), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidcut")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("maskcut", help="discover instance masks from patch features")
    p.add_argument("--features", required=True, help="directory of NPY feature files")
    p.add_argument("--images", required=True, help="directory of source images")
    p.add_argument("--out", required=True)
    p.add_argument("--t", type=int, default=DEFAULT_T, help="max masks per image")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--no-crf", action="store_true")
    p.add_argument("--crf-iterations", type=int, default=10)
    p.add_argument("--crf-radius", type=int, default=11)
    p.set_defaults(func=cmd_maskcut)

    p = sub.add_parser("synth", help="synthesize videos from image pairs")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True, help="mask manifest JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--protocol", choices=("ytvis", "davis"), default="ytvis")
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EvalDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, io.ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
