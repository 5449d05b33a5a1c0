"""Dense-CRF mask refinement via truncated-neighborhood mean-field inference.

Two labels (foreground/background), Potts pairwise potentials with a spatial
Gaussian kernel and a bilateral (spatial + color) kernel. Messages are exact
within `neighborhood_radius`; no lattice approximation.
"""

from dataclasses import dataclass

import numpy as np

from .validation import as_bool_mask, as_rgb_image, check_same_shape


@dataclass(frozen=True)
class CrfParams:
    iterations: int = 10
    unary_fg_prob: float = 0.9
    gauss_sigma_xy: float = 3.0
    gauss_weight: float = 3.0
    bilateral_sigma_xy: float = 60.0
    bilateral_sigma_rgb: float = 10.0
    bilateral_weight: float = 5.0
    neighborhood_radius: int = 11

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.5 < self.unary_fg_prob < 1.0:
            raise ValueError("unary_fg_prob must be in (0.5, 1)")
        for name in ("gauss_sigma_xy", "bilateral_sigma_xy", "bilateral_sigma_rgb"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.neighborhood_radius < 1:
            raise ValueError("neighborhood_radius must be >= 1")


def _half_offsets(radius):
    """Offsets (dy, dx) covering half the disc; symmetry supplies the rest."""
    offsets = []
    for dy in range(radius + 1):
        for dx in range(-radius, radius + 1):
            if (dy, dx) <= (0, 0):
                continue
            if dy * dy + dx * dx <= radius * radius:
                offsets.append((dy, dx))
    return offsets


class _PairwiseKernel:
    """Precomputed per-offset pairwise weights for one image."""

    def __init__(self, image, params: CrfParams):
        img = as_rgb_image(image).astype(np.float32)
        h, w = img.shape[:2]
        self.shape = (h, w)
        self.terms = []  # (dy, dx, (h', w') weight array over the overlap)
        inv2_g = 1.0 / (2.0 * params.gauss_sigma_xy**2)
        inv2_b = 1.0 / (2.0 * params.bilateral_sigma_xy**2)
        inv2_rgb = 1.0 / (2.0 * params.bilateral_sigma_rgb**2)
        for dy, dx in _half_offsets(params.neighborhood_radius):
            if abs(dy) >= h or abs(dx) >= w:
                continue  # offset larger than the image
            d2 = float(dy * dy + dx * dx)
            core, shifted = _overlap_slices(h, w, dy, dx)
            k = np.full(
                (h - abs(dy), w - abs(dx)),
                params.gauss_weight * np.exp(-d2 * inv2_g),
                dtype=np.float32,
            )
            if params.bilateral_weight != 0.0:
                diff = img[core] - img[shifted]
                color2 = np.einsum("ijk,ijk->ij", diff, diff)
                k = k + params.bilateral_weight * np.float32(
                    np.exp(-d2 * inv2_b)
                ) * np.exp(-color2 * inv2_rgb)
            self.terms.append((core, shifted, k))
        self.ksum = np.zeros((h, w), dtype=np.float64)
        for core, shifted, k in self.terms:
            self.ksum[core] += k
            self.ksum[shifted] += k

    def message(self, q):
        """Return S with S_i = sum_j k_ij q_j over the truncated neighborhood."""
        s = np.zeros(self.shape, dtype=np.float64)
        for core, shifted, k in self.terms:
            s[core] += k * q[shifted]
            s[shifted] += k * q[core]
        return s


def _overlap_slices(h, w, dy, dx):
    ys = slice(0, h - dy), slice(dy, h)
    if dx >= 0:
        xs = slice(0, w - dx), slice(dx, w)
    else:
        xs = slice(-dx, w), slice(0, w + dx)
    return (ys[0], xs[0]), (ys[1], xs[1])


def mean_field_step(kernel: _PairwiseKernel, unary_fg, unary_bg, q_fg):
    """One normalized mean-field update of the foreground marginal."""
    s = kernel.message(q_fg)
    # Potts energy: label fg pays kernel mass on bg neighbors and vice versa.
    e_fg = unary_fg + (kernel.ksum - s)
    e_bg = unary_bg + s
    return 1.0 / (1.0 + np.exp(np.clip(e_fg - e_bg, -500, 500)))


def mean_field(image, prob_fg, params: CrfParams):
    """Run mean-field inference; returns the final foreground marginal."""
    kernel = _PairwiseKernel(image, params)
    unary_fg = -np.log(prob_fg)
    unary_bg = -np.log(1.0 - prob_fg)
    q = prob_fg.astype(np.float64)
    for _ in range(params.iterations):
        q = mean_field_step(kernel, unary_fg, unary_bg, q)
    return q


def crf_refine(image, mask, params: CrfParams = CrfParams()) -> np.ndarray:
    """Refine a binary mask against image evidence; returns the argmax labeling."""
    image = as_rgb_image(image)
    mask = as_bool_mask(mask)
    check_same_shape(image, mask, "image", "mask")
    p = np.where(mask, params.unary_fg_prob, 1.0 - params.unary_fg_prob)
    q = mean_field(image, p, params)
    return q >= 0.5
