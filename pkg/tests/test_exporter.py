"""Feature-exporter tests: shape contract, sidecar format, CLI errors.

The exporter talks to the segmentation pipeline only through files, so the
tests verify the on-disk handshake (NPY + sidecar) rather than any shared
code. Fast tests run the full-depth model at small resolutions; the
acceptance test runs the stated 480x480 / patch-8 configuration once.
"""

import json

import numpy as np
import pytest
import torch
from PIL import Image

from exporter.export import (
    EXIT_CONFIG,
    EXIT_OK,
    ExportError,
    ExportSpec,
    build_model,
    export_features,
    load_image,
    main,
)
from exporter.vit import Attention, build_vit_b8, interpolate_pos_embed
from vidcut import io as vidcut_io
from vidcut.cli import main as vidcut_main


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(7)
    m = build_vit_b8()
    m.eval()
    return m


def write_image(path, h, w, seed=0):
    rng = np.random.default_rng(seed)
    Image.fromarray(
        rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    ).save(path)


def spec_for(tmp_path, resolution=64, patch=8):
    return ExportSpec(resolution=resolution, patch_size=patch,
                      out_dir=tmp_path / "feat", untrained_seed=7)


class TestExportSpec:
    def test_indivisible_resolution_rejected(self, tmp_path):
        with pytest.raises(ExportError, match="not divisible"):
            ExportSpec(resolution=100, patch_size=8, out_dir=tmp_path)

    def test_nonpositive_patch_rejected(self, tmp_path):
        with pytest.raises(ExportError, match="patch size"):
            ExportSpec(resolution=64, patch_size=0, out_dir=tmp_path)


class TestExportFeatures:
    def test_shape_sidecar_and_primary_load(self, tmp_path, model):
        image = tmp_path / "a.png"
        write_image(image, 50, 70)  # any size; exporter resizes
        spec = spec_for(tmp_path)
        (out,) = export_features([image], spec, model=model, log=lambda m: None)

        data = np.load(out)
        assert data.shape == (8, 8, 768)
        assert data.dtype == np.float32
        assert np.isfinite(data).all()

        sidecar = out.with_suffix(".json")
        meta = {"patch_size": 8, "image_height": 64, "image_width": 64}
        assert sidecar.read_text() == json.dumps(meta, sort_keys=True)

        fm = vidcut_io.load_feature_map(out)
        assert fm.data.shape == (8, 8, 768)
        assert fm.patch_size == 8
        assert fm.image_height == fm.image_width == 64

    def test_same_image_twice_byte_identical(self, tmp_path, model):
        image = tmp_path / "a.png"
        write_image(image, 64, 64)
        spec_a = ExportSpec(resolution=64, patch_size=8,
                            out_dir=tmp_path / "fa", untrained_seed=7)
        spec_b = ExportSpec(resolution=64, patch_size=8,
                            out_dir=tmp_path / "fb", untrained_seed=7)
        (a,) = export_features([image], spec_a, model=model, log=lambda m: None)
        (b,) = export_features([image], spec_b, model=model, log=lambda m: None)
        assert a.read_bytes() == b.read_bytes()

    def test_untrained_seed_reproducible(self, tmp_path):
        spec = spec_for(tmp_path)
        m1 = build_model(spec)
        m2 = build_model(spec)
        for p1, p2 in zip(m1.parameters(), m2.parameters()):
            assert torch.equal(p1, p2)

    def test_unreadable_image_raises(self, tmp_path, model):
        bad = tmp_path / "bad.png"
        bad.write_text("not an image")
        with pytest.raises(ExportError, match="unreadable"):
            export_features([bad], spec_for(tmp_path), model=model,
                            log=lambda m: None)

    def test_load_image_shape_and_determinism(self, tmp_path):
        image = tmp_path / "a.png"
        write_image(image, 30, 40)
        t1 = load_image(image, 64)
        t2 = load_image(image, 64)
        assert t1.shape == (1, 3, 64, 64)
        assert torch.equal(t1, t2)


class TestModel:
    def test_keys_concatenate_heads(self):
        torch.manual_seed(0)
        attn = Attention(dim=16, num_heads=4)
        x = torch.randn(1, 5, 16)
        keys = attn.keys(x)
        qkv = attn.qkv(x).reshape(1, 5, 3, 4, 4)
        manual = torch.cat([qkv[:, :, 1, h] for h in range(4)], dim=-1)
        assert torch.allclose(keys, manual)

    def test_pos_embed_interpolation(self):
        pe = torch.randn(1, 1 + 28 * 28, 32)
        assert interpolate_pos_embed(pe, 28) is pe
        resized = interpolate_pos_embed(pe, 60)
        assert resized.shape == (1, 1 + 60 * 60, 32)
        assert torch.equal(resized[:, 0], pe[:, 0])  # cls slot untouched
        with pytest.raises(ValueError, match="square"):
            interpolate_pos_embed(torch.randn(1, 6, 32), 4)

    def test_indivisible_input_rejected(self, model):
        with pytest.raises(ValueError, match="divisible"):
            model.last_layer_keys(torch.randn(1, 3, 60, 60))


class TestCli:
    def test_indivisible_resolution_fails_before_inference(self, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        write_image(images / "a.png", 16, 16)
        code = main(["--images", str(images), "--out", str(tmp_path / "o"),
                     "--resolution", "100", "--patch", "8",
                     "--untrained-seed", "1"])
        assert code == EXIT_CONFIG

    def test_missing_image_dir(self, tmp_path):
        code = main(["--images", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o"), "--untrained-seed", "1"])
        assert code == EXIT_CONFIG

    def test_empty_image_dir(self, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        code = main(["--images", str(images), "--out", str(tmp_path / "o"),
                     "--untrained-seed", "1"])
        assert code == EXIT_CONFIG

    def test_unavailable_pretrained_weights_is_config_error(
        self, tmp_path, capsys
    ):
        images = tmp_path / "imgs"
        images.mkdir()
        write_image(images / "a.png", 16, 16)
        code = main(["--images", str(images), "--out", str(tmp_path / "o"),
                     "--resolution", "16", "--patch", "8"])
        assert code == EXIT_CONFIG
        assert "--weights" in capsys.readouterr().err

    def test_happy_path_small(self, tmp_path, capsys):
        images = tmp_path / "imgs"
        images.mkdir()
        write_image(images / "a.png", 32, 32)
        out = tmp_path / "feat"
        code = main(["--images", str(images), "--out", str(out),
                     "--resolution", "32", "--patch", "8",
                     "--untrained-seed", "3"])
        assert code == EXIT_OK
        assert np.load(out / "a.npy").shape == (4, 4, 768)
        assert "untrained" in capsys.readouterr().err


def salient_scene():
    """Textured background with one clearly distinct textured object."""
    yy, xx = np.mgrid[0:480, 0:480].astype(np.float32)
    scene = np.stack([
        90 + 18 * np.sin(xx / 23) + 10 * np.cos(yy / 31),
        130 + 15 * np.sin((xx + yy) / 27),
        70 + 12 * np.cos(xx / 19),
    ], axis=-1)
    scene += np.random.default_rng(0).normal(0, 6, scene.shape)
    obj = ((yy - 220) ** 2 + (xx - 260) ** 2) < 110 ** 2
    scene[obj, 0] = 205 + 20 * np.sin(xx[obj] / 9)
    scene[obj, 1] = 60 + 10 * np.cos(yy[obj] / 11)
    scene[obj, 2] = 55
    return np.clip(scene, 0, 255).astype(np.uint8), obj


def test_acceptance_shape_contract_and_end_to_end(tmp_path, model):
    images = tmp_path / "images"
    images.mkdir()
    scene, obj = salient_scene()
    Image.fromarray(scene).save(images / "scene.png")

    spec = ExportSpec(resolution=480, patch_size=8,
                      out_dir=tmp_path / "feat", untrained_seed=7)
    (npy,) = export_features([images / "scene.png"], spec, model=model,
                             log=lambda m: None)
    data = np.load(npy)
    assert data.shape == (60, 60, 768)
    meta = json.loads(npy.with_suffix(".json").read_text())
    assert meta == {"patch_size": 8, "image_height": 480, "image_width": 480}

    # The segmentation CLI consumes the files end-to-end. Untrained keys
    # have uniformly high pairwise cosine similarity, so the default
    # threshold would binarize to a complete graph; 0.75 sits in the gap
    # between within-region (~0.93+) and cross-region (~0.54) similarity.
    out = tmp_path / "out"
    code = vidcut_main(["maskcut", "--features", str(tmp_path / "feat"),
                        "--images", str(images), "--out", str(out),
                        "--tau", "0.75"])
    assert code == 0
    entries = vidcut_io.load_mask_manifest(out / "masks.json")
    assert len(entries) == 1
    maskset = entries[0][2]
    assert len(maskset.masks) >= 1
    assert all(m.shape == (480, 480) for m in maskset.masks)
    best_iou = max(
        (m & obj).sum() / float((m | obj).sum()) for m in maskset.masks
    )
    print(
        "ACCEPTANCE PASS (secondary): 480x480/patch-8 export is 60x60x768 "
        "with matching sidecar; maskcut consumed it end-to-end and found "
        f"{len(maskset.masks)} mask(s), best IoU {best_iou:.2f} vs the "
        "salient object"
    )
