"""Spectral mask discovery, copy-paste video synthesis, and VIS metrics."""

from .crf import CrfParams, crf_refine
from .io import (
    FeatureMap,
    MaskSet,
    RleMask,
    Trajectory,
    VideoRecord,
    load_feature_map,
    load_video_manifest,
    rle_decode,
    rle_encode,
    save_predictions,
)
from .maskcut import MaskCutSegmenter, maskcut, upsample_mask
from .metrics import (
    EvalReport,
    boundary_f_measure,
    boundary_pixels,
    evaluate_ap,
    evaluate_davis,
    st_iou,
)
from .spectral import (
    AffinityGraph,
    FiedlerResult,
    bipartition,
    build_affinity,
    fiedler,
    ncut_value,
)
from .synthesis import (
    PasteTransform,
    SynthConfig,
    apply_paste,
    sample_trajectory_transforms,
    synthesize,
)

__version__ = "0.1.0"

__all__ = [
    "AffinityGraph",
    "CrfParams",
    "EvalReport",
    "FeatureMap",
    "FiedlerResult",
    "MaskCutSegmenter",
    "MaskSet",
    "PasteTransform",
    "RleMask",
    "SynthConfig",
    "Trajectory",
    "VideoRecord",
    "apply_paste",
    "bipartition",
    "boundary_f_measure",
    "boundary_pixels",
    "build_affinity",
    "crf_refine",
    "evaluate_ap",
    "evaluate_davis",
    "fiedler",
    "load_feature_map",
    "load_video_manifest",
    "maskcut",
    "ncut_value",
    "rle_decode",
    "rle_encode",
    "sample_trajectory_transforms",
    "save_predictions",
    "st_iou",
    "synthesize",
    "upsample_mask",
]
