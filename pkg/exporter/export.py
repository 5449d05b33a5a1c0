"""Export per-patch vision-transformer key features for a directory of images.

Runs a ViT-B/8 over each image and writes one float32 NPY tensor of shape
(rows, cols, dim) per image plus a JSON sidecar with the patch geometry —
the exact on-disk format the segmentation CLI reads. Keys are taken from
the final attention layer with all heads concatenated, and are exported
raw (no L2 normalization); downstream affinity construction owns the
normalization.

Usage:
    python3 export.py --images DIR --out DIR --resolution 480 --patch 8 \
        [--weights CKPT | --untrained-seed N]

Without --weights the script tries to download the reference checkpoint;
--untrained-seed N instead uses a deterministic random initialization (for
offline smoke testing of the file contract — the features are input-
dependent but carry no learned semantics).
"""

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

if __package__:
    from .vit import build_vit_b8
else:  # executed as a script: python3 exporter/export.py
    sys.path.insert(0, str(Path(__file__).resolve().parent))
    from vit import build_vit_b8

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3

PRETRAINED_URL = (
    "https://dl.fbaipublicfiles.com/dino/dino_vitbase8_pretrain/"
    "dino_vitbase8_pretrain.pth"
)
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
# Standard ImageNet channel statistics used by the pretrained model.
MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExportSpec:
    resolution: int
    patch_size: int
    out_dir: Path
    weights: Path | None = None
    untrained_seed: int | None = None

    def __post_init__(self):
        if self.patch_size <= 0:
            raise ExportError(f"patch size must be positive: {self.patch_size}")
        if self.resolution <= 0 or self.resolution % self.patch_size:
            raise ExportError(
                f"resolution {self.resolution} is not divisible by "
                f"patch size {self.patch_size}"
            )


def load_image(path, resolution):
    """Load an image as a normalized (1, 3, res, res) float32 tensor."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize(
                (resolution, resolution), Image.Resampling.BICUBIC
            )
    except (OSError, ValueError) as exc:
        raise ExportError(f"unreadable image {path}: {exc}") from exc
    pixels = np.asarray(rgb, dtype=np.float32) / 255.0
    pixels = (pixels - MEAN) / STD
    return torch.from_numpy(pixels.transpose(2, 0, 1)).unsqueeze(0)


def build_model(spec):
    """Construct the ViT and resolve its weights per the spec."""
    if spec.untrained_seed is not None:
        torch.manual_seed(spec.untrained_seed)
        model = build_vit_b8(patch_size=spec.patch_size)
    else:
        model = build_vit_b8(patch_size=spec.patch_size)
        if spec.weights is not None:
            state = torch.load(spec.weights, map_location="cpu",
                               weights_only=True)
        else:
            try:
                state = torch.hub.load_state_dict_from_url(
                    PRETRAINED_URL, map_location="cpu"
                )
            except Exception as exc:
                raise ExportError(
                    f"pretrained weight download failed ({exc}); pass "
                    "--weights CKPT or --untrained-seed N"
                ) from exc
        model.load_state_dict(state)
    model.eval()
    return model


def export_features(image_paths, spec, model=None, log=print):
    """Write one NPY + sidecar pair per image; returns the NPY paths."""
    if model is None:
        model = build_model(spec)
    if spec.untrained_seed is not None:
        log(f"note: untrained weights (seed {spec.untrained_seed}); "
            "features are input-dependent but not semantic")
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in image_paths:
        tensor = load_image(path, spec.resolution)
        keys = model.last_layer_keys(tensor)[0].numpy().astype(np.float32)
        out_npy = spec.out_dir / f"{Path(path).stem}.npy"
        np.save(out_npy, keys)
        meta = {
            "patch_size": spec.patch_size,
            "image_height": spec.resolution,
            "image_width": spec.resolution,
        }
        out_npy.with_suffix(".json").write_text(
            json.dumps(meta, sort_keys=True)
        )
        log(f"{path} -> {out_npy} {keys.shape}")
        written.append(out_npy)
    return written


def find_images(images_dir):
    return sorted(
        p for p in Path(images_dir).iterdir()
        if p.suffix.lower() in IMAGE_EXTENSIONS
    )


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Export ViT-B/8 key features as NPY + JSON sidecars."
    )
    parser.add_argument("--images", required=True, help="input image directory")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--resolution", type=int, default=480)
    parser.add_argument("--patch", type=int, default=8)
    parser.add_argument("--weights", type=Path, default=None,
                        help="local checkpoint (state dict) path")
    parser.add_argument("--untrained-seed", type=int, default=None,
                        help="skip pretrained weights; deterministic random "
                             "init for offline format testing")
    args = parser.parse_args(argv)

    try:
        spec = ExportSpec(
            resolution=args.resolution,
            patch_size=args.patch,
            out_dir=Path(args.out),
            weights=args.weights,
            untrained_seed=args.untrained_seed,
        )
        images_dir = Path(args.images)
        if not images_dir.is_dir():
            raise ExportError(f"image directory not found: {images_dir}")
        paths = find_images(images_dir)
        if not paths:
            raise ExportError(f"no images in {images_dir}")
        export_features(paths, spec, log=lambda m: print(m, file=sys.stderr))
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
