"""Synthetic video generation from image pairs with mask trajectories.

A target image is duplicated across frames; objects cropped from a source
image are transformed (resize, shift, rotate, brightness/contrast) and
pasted onto every frame, compositing per

    frame = target * (1 - M) + source * M

with M the union of the transformed masks. Pasted objects occlude the
target's own masks, whose trajectories are clipped per frame.
"""

from dataclasses import dataclass, replace

import numpy as np

from .io import MaskSet, Trajectory, VideoRecord
from .validation import as_bool_mask, as_rgb_image, check_same_shape

PASTE_RETRIES = 20
CONTRAST_PIVOT = 127.5


class SynthesisError(ValueError):
    pass


class EmptyPasteError(SynthesisError):
    """Transformed mask landed entirely out of frame; caller may resample."""


@dataclass(frozen=True)
class PasteTransform:
    scale: float = 1.0
    dx: float = 0.0
    dy: float = 0.0
    rotation_deg: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0


@dataclass(frozen=True)
class SynthConfig:
    frames: int = 2
    scale_range: tuple = (0.8, 1.0)
    rotation_max: float = 30.0
    brightness_range: tuple = (0.8, 1.2)
    contrast_range: tuple = (0.8, 1.2)
    max_shift_fraction: float = 0.25
    min_visible_fraction: float = 0.2
    independent_frames: bool = False  # ablation: no start/end interpolation
    seed: int = 0

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if not 0.0 < self.min_visible_fraction <= 1.0:
            raise ValueError("min_visible_fraction must be in (0, 1]")


def _sample_pose(rng, cfg, height, width):
    return (
        rng.uniform(*cfg.scale_range),
        rng.uniform(-cfg.max_shift_fraction, cfg.max_shift_fraction) * width,
        rng.uniform(-cfg.max_shift_fraction, cfg.max_shift_fraction) * height,
        rng.uniform(-cfg.rotation_max, cfg.rotation_max),
    )


def sample_trajectory_transforms(rng, cfg: SynthConfig, height, width):
    """Sample one trajectory's per-frame transforms.

    Pose (scale, shift, rotation) is sampled at the start and end frames and
    linearly interpolated in between; brightness/contrast are fixed for the
    whole trajectory. With cfg.independent_frames, each frame's pose is
    sampled independently instead.
    """
    brightness = rng.uniform(*cfg.brightness_range)
    contrast = rng.uniform(*cfg.contrast_range)
    if cfg.independent_frames:
        poses = [_sample_pose(rng, cfg, height, width) for _ in range(cfg.frames)]
    else:
        start = np.array(_sample_pose(rng, cfg, height, width))
        end = np.array(_sample_pose(rng, cfg, height, width))
        alphas = np.linspace(0.0, 1.0, cfg.frames)
        poses = [tuple((1 - a) * start + a * end) for a in alphas]
    return [
        PasteTransform(
            scale=float(s),
            dx=float(dx),
            dy=float(dy),
            rotation_deg=float(rot),
            brightness=float(brightness),
            contrast=float(contrast),
        )
        for s, dx, dy, rot in poses
    ]


def _inverse_map(t: PasteTransform, out_h, out_w, src_h, src_w):
    """Map output pixel centers to source coordinates (inverse warp).

    Forward model: resize source to target dims, then scale/rotate about the
    target center and translate by (dx, dy).
    """
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    cy, cx = (out_h - 1) / 2.0, (out_w - 1) / 2.0
    px = xs - cx - t.dx
    py = ys - cy - t.dy
    theta = np.deg2rad(t.rotation_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # Inverse of rotate-then-scale: divide by scale, rotate by -theta.
    ux = (cos_t * px + sin_t * py) / t.scale + cx
    uy = (-sin_t * px + cos_t * py) / t.scale + cy
    # Undo the resize (pixel-center convention).
    sx = src_w / out_w
    sy = src_h / out_h
    return (uy + 0.5) * sy - 0.5, (ux + 0.5) * sx - 0.5


def _bilinear_sample(image, sy, sx):
    """Bilinear sampling with edge clamping; returns float64 (H, W, C)."""
    h, w = image.shape[:2]
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(sy - y0, 0.0, 1.0)[..., None]
    fx = np.clip(sx - x0, 0.0, 1.0)[..., None]
    img = image.astype(np.float64)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _nearest_mask_sample(mask, sy, sx):
    h, w = mask.shape
    yi = np.rint(sy).astype(np.int64)
    xi = np.rint(sx).astype(np.int64)
    inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    out = np.zeros(sy.shape, dtype=bool)
    out[inside] = mask[yi[inside], xi[inside]]
    return out


def _adjust_photometry(values, t: PasteTransform):
    v = (values - CONTRAST_PIVOT) * t.contrast + CONTRAST_PIVOT
    v = v * t.brightness
    return np.clip(v, 0.0, 255.0)


def apply_paste(target, source, mask, t: PasteTransform):
    """Paste the masked source region onto the target under transform t.

    Returns (composited image, transformed mask). Pixels outside the
    transformed mask are bit-identical to the target; pixels inside are the
    bilinearly resampled, photometrically adjusted source. Raises
    EmptyPasteError if the transformed mask leaves the frame entirely.
    """
    target = as_rgb_image(target)
    source = as_rgb_image(source)
    mask = as_bool_mask(mask)
    check_same_shape(source, mask, "source", "mask")
    out_h, out_w = target.shape[:2]
    sy, sx = _inverse_map(t, out_h, out_w, source.shape[0], source.shape[1])
    warped_mask = _nearest_mask_sample(mask, sy, sx)
    if not warped_mask.any():
        raise EmptyPasteError("transformed mask is empty")
    sampled = _bilinear_sample(source, sy, sx)
    sampled = _adjust_photometry(sampled, t)
    out = target.copy()
    out[warped_mask] = np.rint(sampled[warped_mask]).astype(np.uint8)
    return out, warped_mask


def synthesize(
    target_img,
    target_masks: MaskSet,
    source_img,
    source_masks: MaskSet,
    cfg: SynthConfig,
    rng=None,
    video_id="video",
):
    """Build one synthetic video; returns (frames, VideoRecord).

    Trajectories: one static trajectory per target mask (clipped by pasted
    objects, dropped when its visible fraction stays below
    cfg.min_visible_fraction in every frame) and one mobile trajectory per
    source mask. Masks within a frame are pairwise disjoint; later-pasted
    objects occlude earlier ones.
    """
    target_img = as_rgb_image(target_img)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if not target_masks.masks and not source_masks.masks:
        raise SynthesisError("zero usable trajectories")
    h, w = target_img.shape[:2]
    frames = [target_img.copy() for _ in range(cfg.frames)]
    pasted = []  # (source mask index, per-frame warped masks)
    for j, smask in enumerate(source_masks.masks):
        for _ in range(PASTE_RETRIES):
            transforms = sample_trajectory_transforms(rng, cfg, h, w)
            try:
                results = [
                    apply_paste(frames[f], source_img, smask, transforms[f])
                    for f in range(cfg.frames)
                ]
            except EmptyPasteError:
                continue
            frames = [img for img, _ in results]
            pasted.append((j, [m for _, m in results]))
            break
        # mask unplaceable after retries: skipped

    trajectories = []
    for idx, tmask in enumerate(target_masks.masks):
        area = tmask.sum()
        occluders = [
            np.logical_or.reduce([m[f] for _, m in pasted])
            if pasted
            else np.zeros((h, w), dtype=bool)
            for f in range(cfg.frames)
        ]
        clipped = [tmask & ~occ for occ in occluders]
        fractions = [c.sum() / area if area else 0.0 for c in clipped]
        if all(fr < cfg.min_visible_fraction for fr in fractions):
            continue
        trajectories.append(
            Trajectory(
                instance_id=f"{video_id}_static_{idx}",
                frames=[c if c.any() else None for c in clipped],
                score=target_masks.scores[idx],
            )
        )
    for pos, (j, masks_per_frame) in enumerate(pasted):
        later = [m for _, m in pasted[pos + 1 :]]
        visible = []
        for f in range(cfg.frames):
            m = masks_per_frame[f]
            for other in later:
                m = m & ~other[f]
            visible.append(m if m.any() else None)
        if not any(m is not None for m in visible):
            continue
        trajectories.append(
            Trajectory(
                instance_id=f"{video_id}_mobile_{j}",
                frames=visible,
                score=source_masks.scores[j],
            )
        )
    if not trajectories:
        raise SynthesisError("zero usable trajectories")
    record = VideoRecord(
        video_id=video_id,
        height=h,
        width=w,
        trajectories=trajectories,
        frame_count=cfg.frames,
    )
    return frames, record


def derive_pair_rng(seed, pair_index):
    """Stable per-pair RNG so pairs can be synthesized in parallel."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(pair_index)]))


def with_frames(cfg: SynthConfig, frames) -> SynthConfig:
    return replace(cfg, frames=frames)
