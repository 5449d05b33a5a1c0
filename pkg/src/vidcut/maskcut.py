"""Iterative multi-instance mask discovery on patch features.

Each round runs a Normalized Cut on the affinity restricted to patches not
claimed by earlier masks (suppressing claimed rows/columns of the affinity
matrix, which for binary masks is equivalent to zeroing their features),
extracts the foreground side as one instance mask, and repeats up to t times.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .io import FeatureMap, MaskSet
from .spectral import (
    DEFAULT_TAU,
    EPSILON_WEIGHT,
    AffinityGraph,
    DegeneratePartitionError,
    bipartition,
    build_affinity,
    fiedler,
)
from .validation import as_bool_mask

#: Stop iterating once fewer than this many patches remain unclaimed.
MIN_REMAINING_PATCHES = 4

DEFAULT_T = 3


def maskcut(fm: FeatureMap, t: int = DEFAULT_T, tau: float = DEFAULT_TAU) -> MaskSet:
    """Discover up to t disjoint patch-resolution instance masks.

    After each round the affinity rows/columns of claimed patches are
    suppressed to the epsilon weight (diagonal kept), so claimed patches form
    a low-degree background cloud for later cuts; each new mask is the
    foreground side minus already-claimed patches. Per-mask scores are the
    mean eigenvector value over the mask's patches (from the round that
    produced it), min-max normalized to [0, 1] across the set; a lone mask
    scores 1.0.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    rows, cols = fm.rows, fm.cols
    n = rows * cols
    weights = build_affinity(fm, tau).weights.copy()
    diag = np.diag(weights).copy()
    claimed = np.zeros(n, dtype=bool)
    masks, raw_scores = [], []
    for _ in range(t):
        if n - claimed.sum() < MIN_REMAINING_PATCHES:
            break
        if _is_uniform(weights, claimed):
            break  # no structure left to cut
        # Suppression preserves symmetry, so skip re-validation here.
        fr = fiedler(AffinityGraph(weights=weights, degrees=weights.sum(axis=1)))
        try:
            mask = bipartition(fr, rows, cols)
        except DegeneratePartitionError:
            break
        flat = mask.reshape(-1) & ~claimed
        if not flat.any():
            break
        masks.append(flat.reshape(rows, cols))
        raw_scores.append(float(fr.eigenvector[flat].mean()))
        claimed |= flat
        weights[claimed, :] = EPSILON_WEIGHT
        weights[:, claimed] = EPSILON_WEIGHT
        np.fill_diagonal(weights, diag)
    return MaskSet(masks, _normalize_scores(raw_scores))


def _is_uniform(weights, claimed, tol=1e-12):
    """True when every off-diagonal weight is (numerically) identical.

    Suppressed (claimed) rows and columns sit exactly at the epsilon floor,
    so only the unclaimed submatrix needs inspecting: the full off-diagonal
    range is its range widened to include the floor once anything is claimed.
    """
    idx = np.flatnonzero(~claimed)
    sub = weights[np.ix_(idx, idx)]
    off = sub[~np.eye(idx.size, dtype=bool)]
    lo, hi = float(off.min()), float(off.max())
    if claimed.any():
        lo, hi = min(lo, EPSILON_WEIGHT), max(hi, EPSILON_WEIGHT)
    return hi - lo <= tol


def _normalize_scores(raw):
    if not raw:
        return []
    lo, hi = min(raw), max(raw)
    if hi - lo < 1e-12:
        return [1.0] * len(raw)
    return [(r - lo) / (hi - lo) for r in raw]


def upsample_mask(mask, patch_size, image_h, image_w) -> np.ndarray:
    """Nearest-neighbor expansion of a patch mask to pixel resolution."""
    mask = as_bool_mask(mask)
    rows, cols = mask.shape
    if rows != -(-image_h // patch_size) or cols != -(-image_w // patch_size):
        raise ValueError(
            f"patch grid {rows}x{cols} does not tile image {image_h}x{image_w} "
            f"at patch {patch_size}"
        )
    full = np.repeat(np.repeat(mask, patch_size, axis=0), patch_size, axis=1)
    return full[:image_h, :image_w]


class MaskCutSegmenter(BaseEstimator):
    """Estimator-style wrapper around maskcut.

    predict(X) accepts a FeatureMap or a (rows, cols, dim) array plus grid
    geometry and returns a MaskSet. Stateless apart from hyperparameters, so
    fit only validates and records input dimensionality.
    """

    def __init__(self, t=DEFAULT_T, tau=DEFAULT_TAU):
        self.t = t
        self.tau = tau

    def fit(self, X, y=None):
        fm = self._as_feature_map(X)
        self.n_features_in_ = fm.dim
        self.grid_shape_ = (fm.rows, fm.cols)
        return self

    def predict(self, X) -> MaskSet:
        return maskcut(self._as_feature_map(X), t=self.t, tau=self.tau)

    def fit_predict(self, X, y=None) -> MaskSet:
        return self.fit(X).predict(X)

    @staticmethod
    def _as_feature_map(X):
        if isinstance(X, FeatureMap):
            return X
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"expected (rows, cols, dim) features, got {arr.shape}")
        rows, cols = arr.shape[:2]
        # Synthesize pixel geometry for raw arrays: one pixel per patch.
        return FeatureMap(arr, patch_size=1, image_height=rows, image_width=cols)
