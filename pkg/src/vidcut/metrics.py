"""Class-agnostic video instance segmentation metrics.

Covers the YouTubeVIS-style protocol (spatio-temporal IoU, AP over 10 IoU
thresholds, AR@k, size-stratified AP) and the DAVIS protocol (region measure
J, boundary measure F, and their mean J&F).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.optimize import linear_sum_assignment

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2).tolist())
DEFAULT_AR_KS = (1, 10, 100)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)

SMALL_AREA = 32**2
MEDIUM_AREA = 96**2

#: Boundary-match tolerance as a fraction of the frame diagonal.
BOUNDARY_TOLERANCE = 0.008


class EvalDataError(ValueError):
    """Prediction/ground-truth structure mismatch (ids, dimensions)."""


@dataclass
class EvalReport:
    ap_per_threshold: dict = None  # threshold -> AP (None when no GT in bucket)
    ap_mean: float = None
    ap50: float = None
    ap75: float = None
    ap_small: float = None
    ap_medium: float = None
    ap_large: float = None
    ar_at: dict = field(default_factory=dict)  # k -> AR
    j_mean: float = None
    f_mean: float = None
    jf_mean: float = None

    def to_json(self) -> dict:
        doc = {}
        if self.ap_per_threshold is not None:
            doc["ap_per_threshold"] = {
                f"{t:.2f}": v for t, v in self.ap_per_threshold.items()
            }
            doc["ap_mean"] = self.ap_mean
            doc["ap50"] = self.ap50
            doc["ap75"] = self.ap75
            doc["ap_small"] = self.ap_small
            doc["ap_medium"] = self.ap_medium
            doc["ap_large"] = self.ap_large
            doc["ar_at"] = {str(k): v for k, v in self.ar_at.items()}
        if self.j_mean is not None:
            doc["j_mean"] = self.j_mean
            doc["f_mean"] = self.f_mean
            doc["jf_mean"] = self.jf_mean
        return doc

    def format_table(self) -> str:
        def fmt(v):
            return "    -" if v is None else f"{v:.3f}"

        lines = []
        if self.ap_per_threshold is not None:
            lines.append(f"{'metric':<12}{'value':>8}")
            lines.append("-" * 20)
            for t in sorted(self.ap_per_threshold):
                lines.append(f"{'AP@%.2f' % t:<12}{fmt(self.ap_per_threshold[t]):>8}")
            lines.append(f"{'AP':<12}{fmt(self.ap_mean):>8}")
            for name, v in (
                ("AP_small", self.ap_small),
                ("AP_medium", self.ap_medium),
                ("AP_large", self.ap_large),
            ):
                lines.append(f"{name:<12}{fmt(v):>8}")
            for k in sorted(self.ar_at):
                lines.append(f"{'AR@%d' % k:<12}{fmt(self.ar_at[k]):>8}")
        if self.j_mean is not None:
            lines.append(f"{'metric':<12}{'value':>8}")
            lines.append("-" * 20)
            lines.append(f"{'J':<12}{fmt(self.j_mean):>8}")
            lines.append(f"{'F':<12}{fmt(self.f_mean):>8}")
            lines.append(f"{'J&F':<12}{fmt(self.jf_mean):>8}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Spatio-temporal IoU
# ---------------------------------------------------------------------------

def st_iou(a, b) -> float:
    """Frame-summed intersection over frame-summed union of two trajectories.

    Absent frames count as empty masks; an all-empty pair scores 0.
    """
    if len(a.frames) != len(b.frames):
        raise ValueError(
            f"frame-count mismatch: {len(a.frames)} vs {len(b.frames)}"
        )
    inter = 0
    union = 0
    for ma, mb in zip(a.frames, b.frames):
        if ma is None and mb is None:
            continue
        if ma is None:
            union += int(mb.sum())
        elif mb is None:
            union += int(ma.sum())
        else:
            if ma.shape != mb.shape:
                raise ValueError(f"mask shape mismatch: {ma.shape} vs {mb.shape}")
            inter += int((ma & mb).sum())
            union += int((ma | mb).sum())
    return inter / union if union else 0.0


# ---------------------------------------------------------------------------
# AP / AR (YouTubeVIS protocol)
# ---------------------------------------------------------------------------

def _check_alignment(preds, gts):
    gt_ids = [r.video_id for r in gts]
    pred_ids = [r.video_id for r in preds]
    for name, ids in (("ground truth", gt_ids), ("predictions", pred_ids)):
        if len(set(ids)) != len(ids):
            dupes = sorted({v for v in ids if ids.count(v) > 1})
            raise EvalDataError(f"duplicate video_ids in {name}: {dupes}")
    missing = sorted(set(pred_ids) - set(gt_ids))
    if missing:
        raise EvalDataError(f"predicted videos missing from ground truth: {missing}")


def _gt_area(traj) -> float:
    areas = [int(m.sum()) for m in traj.frames if m is not None]
    return sum(areas) / len(areas) if areas else 0.0


def _size_bucket(area) -> str:
    if area < SMALL_AREA:
        return "small"
    if area < MEDIUM_AREA:
        return "medium"
    return "large"


def _sorted_predictions(preds):
    """All predictions sorted by score descending; stable order breaks ties."""
    entries = []
    for vi, rec in enumerate(preds):
        for pi, traj in enumerate(rec.trajectories):
            entries.append((traj.score, vi, pi))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    return entries


def _greedy_match(entries, ious, gt_of_video, gt_ignore, threshold):
    """Greedy score-ordered matching against unmatched ground truth.

    Returns (flags, n_gt): per-prediction 1 = TP, 0 = FP, -1 = ignored
    (matches only out-of-bucket GT). Ignored GT never blocks and never
    counts toward recall.
    """
    matched = set()
    flags = []
    for _, vi, pi in entries:
        best_iou = -1.0
        best_gt = None
        ignore_hit = False
        for gi in gt_of_video.get(vi, ()):
            iou = ious[vi][pi, gi]
            if iou < threshold:
                continue
            if gt_ignore[(vi, gi)]:
                ignore_hit = True
                continue
            if (vi, gi) in matched:
                continue
            if iou > best_iou:
                best_iou = iou
                best_gt = gi
        if best_gt is not None:
            matched.add((vi, best_gt))
            flags.append(1)
        elif ignore_hit:
            flags.append(-1)
        else:
            flags.append(0)
    n_gt = sum(1 for ig in gt_ignore.values() if not ig)
    return flags, n_gt, len(matched)


def _interpolated_ap(flags, n_gt) -> float:
    """101-point interpolated average precision from ordered TP/FP flags."""
    kept = [f for f in flags if f >= 0]
    if n_gt == 0:
        return None
    if not kept:
        return 0.0
    tp = np.cumsum([f == 1 for f in kept])
    fp = np.cumsum([f == 0 for f in kept])
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # Monotone envelope, then sample at the 101 recall points.
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(sampled.mean())


def evaluate_ap(
    preds,
    gts,
    thresholds=DEFAULT_THRESHOLDS,
    ar_ks=DEFAULT_AR_KS,
) -> EvalReport:
    """YouTubeVIS-style class-agnostic AP/AR evaluation.

    Predictions are matched greedily in global score order; AP uses 101-point
    interpolation per IoU threshold and averages over thresholds. Size-bucket
    APs treat out-of-bucket GT as ignore regions (COCO convention). AR@k keeps
    each video's top-k predictions and averages recall over the thresholds.
    """
    _check_alignment(preds, gts)
    pred_by_id = {r.video_id: r for r in preds}
    gt_list = list(gts)
    pred_list = []
    for rec in gt_list:
        pred = pred_by_id.get(rec.video_id)
        if pred is None:
            pred = type(rec)(
                video_id=rec.video_id,
                height=rec.height,
                width=rec.width,
                trajectories=[],
                frame_count=rec.frame_count,
            )
        pred_list.append(pred)

    ious = {}
    gt_of_video = {}
    areas = {}
    for vi, (pred, gt) in enumerate(zip(pred_list, gt_list)):
        mat = np.zeros((len(pred.trajectories), len(gt.trajectories)))
        for pi, pt in enumerate(pred.trajectories):
            for gi, gtraj in enumerate(gt.trajectories):
                mat[pi, gi] = st_iou(pt, gtraj)
        ious[vi] = mat
        gt_of_video[vi] = list(range(len(gt.trajectories)))
        for gi, gtraj in enumerate(gt.trajectories):
            areas[(vi, gi)] = _gt_area(gtraj)

    entries = _sorted_predictions(pred_list)
    buckets = {
        "all": {k: False for k in areas},
        "small": {k: _size_bucket(a) != "small" for k, a in areas.items()},
        "medium": {k: _size_bucket(a) != "medium" for k, a in areas.items()},
        "large": {k: _size_bucket(a) != "large" for k, a in areas.items()},
    }
    ap_by_bucket = {}
    for bucket, ignore in buckets.items():
        per_thr = {}
        for thr in thresholds:
            flags, n_gt, _ = _greedy_match(entries, ious, gt_of_video, ignore, thr)
            per_thr[thr] = _interpolated_ap(flags, n_gt)
        ap_by_bucket[bucket] = per_thr

    def mean_ap(per_thr):
        vals = [v for v in per_thr.values() if v is not None]
        return float(np.mean(vals)) if vals else None

    ap_all = ap_by_bucket["all"]
    ar_at = {}
    total_gt = len(areas)
    for k in ar_ks:
        topk = _topk_entries(entries, k)
        recalls = []
        for thr in thresholds:
            _, n_gt, n_matched = _greedy_match(
                topk, ious, gt_of_video, buckets["all"], thr
            )
            recalls.append(n_matched / n_gt if n_gt else 0.0)
        ar_at[k] = float(np.mean(recalls)) if total_gt else None
    return EvalReport(
        ap_per_threshold=ap_all,
        ap_mean=mean_ap(ap_all),
        ap50=ap_all.get(0.5),
        ap75=ap_all.get(0.75),
        ap_small=mean_ap(ap_by_bucket["small"]),
        ap_medium=mean_ap(ap_by_bucket["medium"]),
        ap_large=mean_ap(ap_by_bucket["large"]),
        ar_at=ar_at,
    )


def _topk_entries(entries, k):
    seen = {}
    kept = []
    for e in entries:
        vi = e[1]
        seen[vi] = seen.get(vi, 0) + 1
        if seen[vi] <= k:
            kept.append(e)
    return kept


# ---------------------------------------------------------------------------
# DAVIS J / F
# ---------------------------------------------------------------------------

def boundary_pixels(mask) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbor.

    The image border counts as background.
    """
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return mask & ~interior


def _disc(radius):
    y, x = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return (y * y + x * x) <= radius * radius


def boundary_tolerance_radius(height, width) -> int:
    return max(1, math.ceil(BOUNDARY_TOLERANCE * math.hypot(height, width)))


def boundary_f_measure(pred, gt, radius=None) -> float:
    """Boundary F-score with dilation-based matching at the given radius."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    if radius is None:
        radius = boundary_tolerance_radius(*pred.shape)
    pb = boundary_pixels(pred)
    gb = boundary_pixels(gt)
    if not pb.any() and not gb.any():
        return 1.0
    if not pb.any() or not gb.any():
        return 0.0
    selem = _disc(radius)
    precision = (pb & binary_dilation(gb, selem)).sum() / pb.sum()
    recall = (gb & binary_dilation(pb, selem)).sum() / gb.sum()
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _frame_iou(a, b):
    if a is None and b is None:
        return 1.0
    ea = a is None or not a.any()
    eb = b is None or not b.any()
    if ea and eb:
        return 1.0
    if ea or eb:
        return 0.0
    return int((a & b).sum()) / int((a | b).sum())


def _frame_f(a, b, radius):
    if a is None and b is None:
        return 1.0
    h, w = (a if a is not None else b).shape
    a = a if a is not None else np.zeros((h, w), dtype=bool)
    b = b if b is not None else np.zeros((h, w), dtype=bool)
    return boundary_f_measure(a, b, radius)


def _pair_scores(pred_traj, gt_traj, radius):
    js = [_frame_iou(a, b) for a, b in zip(pred_traj.frames, gt_traj.frames)]
    fs = [_frame_f(a, b, radius) for a, b in zip(pred_traj.frames, gt_traj.frames)]
    return float(np.mean(js)), float(np.mean(fs))


def davis_assignment(pred_trajs, gt_trajs, radius):
    """Optimal 1-1 assignment maximizing mean (J+F)/2 via the Hungarian method.

    Returns (assignment dict gt_index -> pred_index or None, pair score cache).
    """
    np_, ng = len(pred_trajs), len(gt_trajs)
    scores = {}
    quality = np.zeros((np_, ng))
    for pi in range(np_):
        for gi in range(ng):
            j, f = _pair_scores(pred_trajs[pi], gt_trajs[gi], radius)
            scores[(pi, gi)] = (j, f)
            quality[pi, gi] = (j + f) / 2.0
    assignment = {gi: None for gi in range(ng)}
    if np_ and ng:
        rows, cols = linear_sum_assignment(-quality)
        for pi, gi in zip(rows, cols):
            assignment[gi] = pi
    return assignment, scores


def evaluate_davis(preds, gts) -> EvalReport:
    """DAVIS-style J/F/J&F, averaged over ground-truth instances."""
    _check_alignment(preds, gts)
    pred_by_id = {r.video_id: r for r in preds}
    j_scores, f_scores = [], []
    for gt in gts:
        pred = pred_by_id.get(gt.video_id)
        pred_trajs = pred.trajectories if pred is not None else []
        if pred is not None and (pred.height, pred.width) != (gt.height, gt.width):
            raise EvalDataError(
                f"video {gt.video_id!r}: prediction dims "
                f"{(pred.height, pred.width)} != GT dims {(gt.height, gt.width)}"
            )
        radius = boundary_tolerance_radius(gt.height, gt.width)
        assignment, scores = davis_assignment(pred_trajs, gt.trajectories, radius)
        for gi in range(len(gt.trajectories)):
            pi = assignment[gi]
            if pi is None:
                j_scores.append(0.0)
                f_scores.append(0.0)
            else:
                j, f = scores[(pi, gi)]
                j_scores.append(j)
                f_scores.append(f)
    j_mean = float(np.mean(j_scores)) if j_scores else None
    f_mean = float(np.mean(f_scores)) if f_scores else None
    jf = (j_mean + f_mean) / 2.0 if j_scores else None
    return EvalReport(j_mean=j_mean, f_mean=f_mean, jf_mean=jf)
