"""Input validation helpers shared across the package."""

import numpy as np


def as_bool_mask(mask, name="mask"):
    """Coerce to a 2-D boolean array, rejecting anything else."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype != bool:
        arr = arr.astype(bool)
    return arr


def as_rgb_image(image, name="image"):
    """Coerce to an (H, W, 3) uint8 array."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating):
            arr = np.clip(np.rint(arr), 0, 255)
        arr = arr.astype(np.uint8)
    return arr


def check_same_shape(a, b, name_a="a", name_b="b"):
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(
            f"{name_a} shape {a.shape[:2]} does not match {name_b} shape {b.shape[:2]}"
        )


def as_feature_grid(features, name="features"):
    """Coerce to a finite (rows, cols, dim) float64 array."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3-D (rows, cols, dim), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite feature in {name}")
    return arr
