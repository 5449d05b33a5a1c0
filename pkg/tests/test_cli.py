"""Command-line interface tests: subcommands, exit codes, determinism."""

import filecmp
import json

import numpy as np
import pytest

from _helpers import planted_grid, rect_mask
from vidcut import io
from vidcut.cli import EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_OK, main
from vidcut.io import MaskSet, Trajectory, VideoRecord


def write_feature_fixture(tmp_path, stem="img0", size=8, seed=0):
    """Planted feature grid + matching image on disk; returns the dirs."""
    features = tmp_path / "features"
    images = tmp_path / "images"
    features.mkdir(exist_ok=True)
    images.mkdir(exist_ok=True)
    fm, _ = planted_grid(size, size, np.random.default_rng(seed))
    # Re-wrap with pixel geometry: patch 8 over a (8*size)^2 image.
    fm8 = io.FeatureMap(fm.data, patch_size=8, image_height=8 * size,
                        image_width=8 * size)
    io.save_feature_map(fm8, features / f"{stem}.npy")
    rng = np.random.default_rng(seed + 100)
    image = rng.integers(0, 256, size=(8 * size, 8 * size, 3), dtype=np.uint8)
    io.save_image_png(images / f"{stem}.png", image)
    return features, images


def write_manifest_fixture(path, video_ids=("v0",), score=1.0):
    records = []
    for vid in video_ids:
        m = rect_mask(8, 8, 1, 1, 4, 4)
        records.append(
            VideoRecord(vid, 8, 8, [Trajectory(f"{vid}_i", [m, m], score)],
                        frame_count=2)
        )
    io.save_predictions(records, path)


class TestMaskcutCommand:
    def test_writes_masks_and_manifest(self, tmp_path):
        features, images = write_feature_fixture(tmp_path)
        out = tmp_path / "out"
        code = main(["maskcut", "--features", str(features), "--images", str(images),
                     "--out", str(out), "--no-crf"])
        assert code == EXIT_OK
        entries = io.load_mask_manifest(out / "masks.json")
        assert len(entries) == 1
        image_id, _, maskset = entries[0]
        assert image_id == "img0"
        assert 1 <= len(maskset.masks) <= 3
        assert (out / "img0.png").is_file()
        pngs = io.load_instance_png(out / "img0.png")
        assert len(pngs) == len(maskset.masks)

    def test_crf_refinement_runs(self, tmp_path):
        features, images = write_feature_fixture(tmp_path, size=6)
        out = tmp_path / "out"
        code = main(["maskcut", "--features", str(features), "--images", str(images),
                     "--out", str(out), "--crf-iterations", "2", "--crf-radius", "3"])
        assert code == EXIT_OK
        entries = io.load_mask_manifest(out / "masks.json")
        assert entries and entries[0][2].masks

    def test_deterministic_across_runs(self, tmp_path):
        features, images = write_feature_fixture(tmp_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["maskcut", "--features", str(features), "--images",
                         str(images), "--out", str(out), "--no-crf"]) == EXIT_OK
        assert (out_a / "masks.json").read_bytes() == (out_b / "masks.json").read_bytes()
        assert filecmp.cmp(out_a / "img0.png", out_b / "img0.png", shallow=False)

    def test_invalid_t(self, tmp_path):
        features, images = write_feature_fixture(tmp_path)
        code = main(["maskcut", "--features", str(features), "--images", str(images),
                     "--out", str(tmp_path / "o"), "--t", "0"])
        assert code == EXIT_CONFIG

    def test_missing_sidecar(self, tmp_path):
        features, images = write_feature_fixture(tmp_path)
        (features / "img0.json").unlink()
        code = main(["maskcut", "--features", str(features), "--images", str(images),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG

    def test_missing_features_dir(self, tmp_path):
        _, images = write_feature_fixture(tmp_path)
        code = main(["maskcut", "--features", str(tmp_path / "nope"), "--images",
                     str(images), "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG

    def test_unwritable_out_path(self, tmp_path):
        features, images = write_feature_fixture(tmp_path)
        blocker = tmp_path / "blocked"
        blocker.write_text("a file, not a directory")
        code = main(["maskcut", "--features", str(features), "--images", str(images),
                     "--out", str(blocker / "sub")])
        assert code == EXIT_IO

    def test_jobs_env_override(self, tmp_path, monkeypatch):
        features, images = write_feature_fixture(tmp_path)
        monkeypatch.setenv("VIDCUT_JOBS", "2")
        out = tmp_path / "out"
        assert main(["maskcut", "--features", str(features), "--images", str(images),
                     "--out", str(out), "--no-crf"]) == EXIT_OK
        monkeypatch.setenv("VIDCUT_JOBS", "banana")
        assert main(["maskcut", "--features", str(features), "--images", str(images),
                     "--out", str(tmp_path / "out2"), "--no-crf"]) == EXIT_CONFIG


class TestSynthCommand:
    def make_mask_manifest(self, tmp_path, n_images=2):
        features = tmp_path / "features"
        images = tmp_path / "images"
        images.mkdir(exist_ok=True)
        entries = []
        rng = np.random.default_rng(0)
        for i in range(n_images):
            stem = f"img{i}"
            image = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
            io.save_image_png(images / f"{stem}.png", image)
            maskset = MaskSet([rect_mask(32, 32, 4 + i, 4, 10, 10)], [0.9])
            entries.append((stem, images / f"{stem}.png", maskset))
        manifest = tmp_path / "masks.json"
        io.save_mask_manifest(entries, manifest)
        return images, manifest

    def test_writes_videos_and_trajectories(self, tmp_path):
        images, manifest = self.make_mask_manifest(tmp_path)
        out = tmp_path / "videos"
        code = main(["synth", "--images", str(images), "--masks", str(manifest),
                     "--out", str(out), "--frames", "2", "--seed", "7"])
        assert code == EXIT_OK
        records = io.load_video_manifest(out / "trajectories.json")
        assert len(records) == 2
        for rec in records:
            assert rec.frame_count == 2
            for rel in rec.frame_paths:
                assert (out / rel).is_file()

    def test_rerun_byte_identical(self, tmp_path):
        images, manifest = self.make_mask_manifest(tmp_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["synth", "--images", str(images), "--masks", str(manifest),
                         "--out", str(out), "--frames", "2", "--seed", "7"]) == EXIT_OK
        assert (out_a / "trajectories.json").read_bytes() == (
            out_b / "trajectories.json"
        ).read_bytes()
        for rel in sorted(p.relative_to(out_a) for p in out_a.rglob("*.png")):
            assert filecmp.cmp(out_a / rel, out_b / rel, shallow=False)

    def test_maskless_image_skipped_with_warning(self, tmp_path, capsys):
        images, manifest = self.make_mask_manifest(tmp_path)
        entries = io.load_mask_manifest(manifest)
        entries.append(("empty", str(images / "img0.png"), MaskSet([], [])))
        io.save_mask_manifest(entries, manifest)
        out = tmp_path / "videos"
        code = main(["synth", "--images", str(images), "--masks", str(manifest),
                     "--out", str(out), "--frames", "2", "--seed", "3"])
        assert code == EXIT_OK
        assert "no masks" in capsys.readouterr().err

    def test_frames_below_two(self, tmp_path):
        images, manifest = self.make_mask_manifest(tmp_path)
        code = main(["synth", "--images", str(images), "--masks", str(manifest),
                     "--out", str(tmp_path / "o"), "--frames", "1", "--seed", "1"])
        assert code == EXIT_CONFIG

    def test_missing_manifest(self, tmp_path):
        images, _ = self.make_mask_manifest(tmp_path)
        code = main(["synth", "--images", str(images), "--masks",
                     str(tmp_path / "nope.json"), "--out", str(tmp_path / "o"),
                     "--seed", "1"])
        assert code == EXIT_CONFIG


class TestEvalCommand:
    def test_identical_predictions_full_marks(self, tmp_path, capsys):
        gt = tmp_path / "gt.json"
        write_manifest_fixture(gt)
        report_path = tmp_path / "report.json"
        code = main(["eval", "--pred", str(gt), "--gt", str(gt),
                     "--protocol", "ytvis", "--out", str(report_path)])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "AP@0.50" in out and "1.000" in out
        doc = json.loads(report_path.read_text())
        assert doc["ap_mean"] == 1.0

    def test_davis_protocol(self, tmp_path, capsys):
        gt = tmp_path / "gt.json"
        write_manifest_fixture(gt)
        code = main(["eval", "--pred", str(gt), "--gt", str(gt),
                     "--protocol", "davis"])
        assert code == EXIT_OK
        assert "J&F" in capsys.readouterr().out

    def test_missing_video_warns_and_scores_miss(self, tmp_path, capsys):
        gt = tmp_path / "gt.json"
        pred = tmp_path / "pred.json"
        write_manifest_fixture(gt, video_ids=("v0", "v1"))
        write_manifest_fixture(pred, video_ids=("v0",))
        code = main(["eval", "--pred", str(pred), "--gt", str(gt)])
        assert code == EXIT_OK
        assert "no predictions" in capsys.readouterr().err

    def test_stray_prediction_video_is_data_error(self, tmp_path):
        gt = tmp_path / "gt.json"
        pred = tmp_path / "pred.json"
        write_manifest_fixture(gt, video_ids=("v0",))
        write_manifest_fixture(pred, video_ids=("v0", "stray"))
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == EXIT_DATA

    def test_report_json_deterministic(self, tmp_path):
        gt = tmp_path / "gt.json"
        write_manifest_fixture(gt)
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        for path in (a, b):
            assert main(["eval", "--pred", str(gt), "--gt", str(gt),
                         "--out", str(path)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()
