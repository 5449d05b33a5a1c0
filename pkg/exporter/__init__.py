"""Patch-feature exporter: runs a ViT-B/8 over images and writes NPY+JSON."""

from .vit import VisionTransformer, build_vit_b8, interpolate_pos_embed
from .export import ExportSpec, export_features, load_image, main

__all__ = [
    "ExportSpec",
    "VisionTransformer",
    "build_vit_b8",
    "export_features",
    "interpolate_pos_embed",
    "load_image",
    "main",
]
