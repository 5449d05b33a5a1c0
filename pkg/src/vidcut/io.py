"""Data model and file I/O: feature tensors, masks, RLE, and video manifests.

All loaders and encoders are pure functions on immutable inputs and are safe
to call concurrently.
"""

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .validation import as_bool_mask, as_feature_grid, as_rgb_image

SCORE_DECIMALS = 6


class ManifestError(ValueError):
    """Raised when a manifest or sidecar file violates the schema."""


@dataclass(frozen=True)
class FeatureMap:
    """Grid of per-patch feature vectors with its source-image geometry."""

    data: np.ndarray  # (rows, cols, dim) float64
    patch_size: int
    image_height: int
    image_width: int

    def __post_init__(self):
        data = as_feature_grid(self.data)
        object.__setattr__(self, "data", data)
        exp_rows = math.ceil(self.image_height / self.patch_size)
        exp_cols = math.ceil(self.image_width / self.patch_size)
        if (self.rows, self.cols) != (exp_rows, exp_cols):
            raise ValueError(
                f"feature grid {self.rows}x{self.cols} inconsistent with image "
                f"{self.image_height}x{self.image_width} at patch {self.patch_size}"
            )

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def dim(self):
        return self.data.shape[2]


@dataclass
class MaskSet:
    """Ordered binary instance masks for one image, with per-mask scores."""

    masks: list  # list of (H, W) bool arrays, all same shape
    scores: list  # one float in [0, 1] per mask

    def __post_init__(self):
        self.masks = [as_bool_mask(m) for m in self.masks]
        self.scores = [float(s) for s in self.scores]
        if len(self.masks) != len(self.scores):
            raise ValueError("masks and scores must have equal length")
        shapes = {m.shape for m in self.masks}
        if len(shapes) > 1:
            raise ValueError(f"masks have inconsistent shapes: {shapes}")
        for s in self.scores:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score {s} outside [0, 1]")


@dataclass
class Trajectory:
    """One instance's per-frame masks through a video (None = not visible)."""

    instance_id: str
    frames: list  # per-frame (H, W) bool array or None
    score: float = 1.0


@dataclass
class VideoRecord:
    video_id: str
    height: int
    width: int
    trajectories: list = field(default_factory=list)
    frame_paths: list = None  # optional; frame_count wins when absent
    frame_count: int = None

    def __post_init__(self):
        if self.frame_count is None:
            if self.frame_paths is None:
                raise ValueError("VideoRecord needs frame_paths or frame_count")
            self.frame_count = len(self.frame_paths)
        if self.frame_paths is not None and len(self.frame_paths) != self.frame_count:
            raise ValueError("frame_paths length disagrees with frame_count")
        for traj in self.trajectories:
            if len(traj.frames) != self.frame_count:
                raise ValueError(
                    f"trajectory {traj.instance_id!r} has {len(traj.frames)} frame "
                    f"slots, video {self.video_id!r} has {self.frame_count}"
                )


@dataclass(frozen=True)
class RleMask:
    """Column-major run-length encoding; counts start with a background run."""

    height: int
    width: int
    counts: tuple

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError("negative run length")
        if sum(self.counts) != self.height * self.width:
            raise ValueError(
                f"run lengths sum to {sum(self.counts)}, "
                f"expected {self.height * self.width}"
            )


def rle_encode(mask) -> RleMask:
    """Encode a binary mask as column-major RLE.

    The first count is the leading background run (0 if the mask starts
    with foreground), so decode(encode(m)) == m always holds.
    """
    mask = as_bool_mask(mask)
    h, w = mask.shape
    flat = mask.flatten(order="F")
    if flat.size == 0:
        return RleMask(h, w, ())
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(starts).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return RleMask(h, w, tuple(int(c) for c in counts))


def rle_decode(rle: RleMask) -> np.ndarray:
    """Inverse of rle_encode."""
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, np.asarray(rle.counts, dtype=np.int64))
    return flat.reshape((rle.height, rle.width), order="F")


# ---------------------------------------------------------------------------
# Feature tensors (NPY + JSON sidecar)
# ---------------------------------------------------------------------------

def sidecar_path(feature_path) -> Path:
    return Path(feature_path).with_suffix(".json")


def load_feature_map(path) -> FeatureMap:
    """Load a (rows, cols, dim) NPY tensor plus its JSON sidecar.

    Float32 data is widened to float64; values are otherwise untouched.
    """
    path = Path(path)
    side = sidecar_path(path)
    if not path.is_file():
        raise FileNotFoundError(f"feature file not found: {path}")
    if not side.is_file():
        raise ManifestError(f"missing sidecar JSON: {side}")
    try:
        data = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise ManifestError(f"malformed NPY file {path}: {exc}") from exc
    if data.ndim != 3:
        raise ManifestError(f"{path}: expected rank-3 tensor, got shape {data.shape}")
    if data.dtype not in (np.float32, np.float64):
        raise ManifestError(f"{path}: expected float32/float64, got {data.dtype}")
    if not np.isfinite(data).all():
        raise ManifestError(f"{path}: non-finite feature")
    with open(side) as fh:
        meta = json.load(fh)
    try:
        patch = int(meta["patch_size"])
        img_h = int(meta["image_height"])
        img_w = int(meta["image_width"])
    except KeyError as exc:
        raise ManifestError(f"{side}: missing key {exc}") from exc
    return FeatureMap(
        data=np.ascontiguousarray(data, dtype=np.float64),
        patch_size=patch,
        image_height=img_h,
        image_width=img_w,
    )


def save_feature_map(fm: FeatureMap, path):
    """Write the NPY tensor and sidecar JSON consumed by load_feature_map."""
    path = Path(path)
    np.save(path, fm.data)
    meta = {
        "patch_size": fm.patch_size,
        "image_height": fm.image_height,
        "image_width": fm.image_width,
    }
    atomic_write_text(sidecar_path(path), json.dumps(meta, sort_keys=True))


# ---------------------------------------------------------------------------
# Video manifests (predictions and ground truth)
# ---------------------------------------------------------------------------

def _rle_to_json(mask):
    if mask is None:
        return None
    rle = rle_encode(mask)
    return {"size": [rle.height, rle.width], "counts": list(rle.counts)}


def _rle_from_json(obj, height, width, where):
    if obj is None:
        return None
    try:
        size = obj["size"]
        counts = obj["counts"]
    except (TypeError, KeyError) as exc:
        raise ManifestError(f"{where}: bad RLE object") from exc
    if list(size) != [height, width]:
        raise ManifestError(
            f"{where}: RLE size {size} does not match video {[height, width]}"
        )
    try:
        rle = RleMask(height, width, tuple(int(c) for c in counts))
    except ValueError as exc:
        raise ManifestError(f"{where}: {exc}") from exc
    return rle_decode(rle)


def records_to_json(records) -> dict:
    videos = []
    for rec in records:
        trajs = []
        for traj in rec.trajectories:
            trajs.append(
                {
                    "instance_id": str(traj.instance_id),
                    "score": round(float(traj.score), SCORE_DECIMALS),
                    "frames": [_rle_to_json(m) for m in traj.frames],
                }
            )
        entry = {
            "video_id": str(rec.video_id),
            "height": rec.height,
            "width": rec.width,
            "trajectories": trajs,
        }
        if rec.frame_paths is not None:
            entry["frames"] = [str(p) for p in rec.frame_paths]
        else:
            entry["frame_count"] = rec.frame_count
        videos.append(entry)
    return {"videos": videos}


def records_from_json(doc) -> list:
    if not isinstance(doc, dict) or "videos" not in doc:
        raise ManifestError("manifest must be an object with a 'videos' list")
    records = []
    for vid in doc["videos"]:
        try:
            video_id = str(vid["video_id"])
            height = int(vid["height"])
            width = int(vid["width"])
        except (TypeError, KeyError) as exc:
            raise ManifestError(f"video entry missing key: {exc}") from exc
        frame_paths = vid.get("frames")
        if frame_paths is None:
            frame_count = vid.get("frame_count")
            if frame_count is None:
                raise ManifestError(f"video {video_id!r}: needs frames or frame_count")
            frame_count = int(frame_count)
        else:
            frame_paths = [str(p) for p in frame_paths]
            frame_count = len(frame_paths)
        trajs = []
        for tr in vid.get("trajectories", []):
            where = f"video {video_id!r} trajectory {tr.get('instance_id')!r}"
            frames = tr.get("frames")
            if frames is None or len(frames) != frame_count:
                raise ManifestError(f"{where}: expected {frame_count} frame slots")
            masks = [_rle_from_json(fr, height, width, where) for fr in frames]
            score = float(tr.get("score", 1.0))
            if not 0.0 <= score <= 1.0:
                raise ManifestError(f"{where}: score {score} outside [0, 1]")
            trajs.append(Trajectory(str(tr["instance_id"]), masks, score))
        records.append(
            VideoRecord(
                video_id=video_id,
                height=height,
                width=width,
                trajectories=trajs,
                frame_paths=frame_paths,
                frame_count=frame_count,
            )
        )
    return records


def load_video_manifest(path) -> list:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    return records_from_json(doc)


def save_predictions(records, path):
    atomic_write_text(path, json.dumps(records_to_json(records), sort_keys=True))


# ---------------------------------------------------------------------------
# Per-image mask manifests (maskcut output, synthesis input)
# ---------------------------------------------------------------------------

def save_mask_manifest(entries, path):
    """Write {"images": [{"image_id", "path", "height", "width", "masks"}]}.

    `entries` is a list of (image_id, image_path, MaskSet) triples.
    """
    images = []
    for image_id, image_path, maskset in entries:
        if maskset.masks:
            h, w = maskset.masks[0].shape
        else:
            h = w = 0
        images.append(
            {
                "image_id": str(image_id),
                "path": str(image_path),
                "height": h,
                "width": w,
                "masks": [
                    {
                        "score": round(float(s), SCORE_DECIMALS),
                        "rle": _rle_to_json(m),
                    }
                    for m, s in zip(maskset.masks, maskset.scores)
                ],
            }
        )
    atomic_write_text(path, json.dumps({"images": images}, sort_keys=True))


def load_mask_manifest(path) -> list:
    """Inverse of save_mask_manifest; returns (image_id, path, MaskSet) triples."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "images" not in doc:
        raise ManifestError("mask manifest must be an object with an 'images' list")
    entries = []
    for img in doc["images"]:
        try:
            image_id = str(img["image_id"])
            image_path = str(img["path"])
            h, w = int(img["height"]), int(img["width"])
        except (TypeError, KeyError) as exc:
            raise ManifestError(f"image entry missing key: {exc}") from exc
        masks, scores = [], []
        for m in img.get("masks", []):
            masks.append(_rle_from_json(m["rle"], h, w, f"image {image_id!r}"))
            scores.append(float(m["score"]))
        entries.append((image_id, image_path, MaskSet(masks, scores)))
    return entries


# ---------------------------------------------------------------------------
# PNG helpers
# ---------------------------------------------------------------------------

def save_instance_png(path, masks):
    """Write disjoint masks as one 8-bit PNG: 0 = background, k = mask k."""
    if not masks:
        raise ValueError("no masks to save")
    label = np.zeros(masks[0].shape, dtype=np.uint8)
    for k, mask in enumerate(masks, start=1):
        label[as_bool_mask(mask)] = k
    Image.fromarray(label, mode="L").save(path, format="PNG")


def load_instance_png(path) -> list:
    """Inverse of save_instance_png; returns masks ordered by label."""
    label = np.asarray(Image.open(path).convert("L"))
    n = int(label.max())
    return [label == k for k in range(1, n + 1)]


def save_image_png(path, image):
    Image.fromarray(as_rgb_image(image), mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def atomic_write_text(path, text):
    """Write via a temp file + rename so readers never see partial content."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
