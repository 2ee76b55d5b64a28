"""Tests for the synthetic dataset forge."""

import dataclasses
import json
import logging
import os

import helpers
import numpy as np
import pytest
import scipy.ndimage

from flowcd import config, core, files
from flowcd.exceptions import FormatError, ValidationError
from flowcd.forge import base, dataset, procedural, sources


@pytest.fixture
def forge_cfg():
    return config.load_config("tiny", ["forge.samples=4"]).forge


def _blob_image():
    seg = np.zeros((12, 16), dtype=np.int64)
    seg[1:4, 1:5] = 15
    seg[6:10, 10:15] = 15
    seg[8:11, 2:4] = 7
    image = np.random.RandomState(0).rand(12, 16, 3).astype(np.float32)
    return image, seg


def test_extract_cutouts_per_region():
    image, seg = _blob_image()
    cutouts = base.extract_cutouts(image, seg, [15, 7])
    assert [c.class_tag for c in cutouts] == ["car", "person", "person"]
    assert [c.shape for c in cutouts] == [(3, 2), (3, 4), (4, 5)]
    np.testing.assert_array_equal(cutouts[1].rgb, image[1:4, 1:5])
    assert np.all(cutouts[1].alpha == 1)


def test_extract_cutouts_ignores_other_classes():
    image, seg = _blob_image()
    assert base.extract_cutouts(image, seg, [3]) == []


def test_cutout_rejects_empty_alpha():
    with pytest.raises(ValidationError):
        base.ObjectCutout(np.zeros((4, 4, 4), dtype=np.float32), "person")


def test_identity_transform_keeps_cutout(forge_cfg):
    image, seg = _blob_image()
    cutout = base.extract_cutouts(image, seg, [15])[1]
    cfg = dataclasses.replace(
        forge_cfg, scale_range=(1.0, 1.0), rotation_range=(0.0, 0.0), channel_shuffle_prob=0.0
    )
    out = base.transform_cutout(cutout, cfg, np.random.default_rng(0))
    np.testing.assert_allclose(out.rgba, cutout.rgba, atol=1e-6)


def test_transform_consumes_four_draws(forge_cfg):
    image, seg = _blob_image()
    cutout = base.extract_cutouts(image, seg, [15])[1]
    rng = np.random.default_rng(5)
    base.transform_cutout(cutout, forge_cfg, rng)
    ref = np.random.default_rng(5)
    ref.uniform(), ref.uniform(), ref.random(), ref.permutation(3)
    assert rng.random() == ref.random()


def test_oversized_cutout_is_shrunk_to_fit(forge_cfg, caplog):
    cutout = base.ObjectCutout(np.ones((40, 40, 4), dtype=np.float32), "person")
    cfg = dataclasses.replace(forge_cfg, scale_range=(2.0, 2.0), rotation_range=(45.0, 45.0))
    with caplog.at_level(logging.WARNING, logger="flowcd"):
        out = base.transform_cutout(cutout, cfg, np.random.default_rng(0), frame_size=(32, 32))
    assert out.shape[0] <= 32 and out.shape[1] <= 32
    assert "rescaling" in caplog.text


@pytest.mark.parametrize("size,angle", [((40, 40), 45.0), ((25, 60), 30.0), ((61, 17), -70.0), ((33, 33), 10.0)])
def test_shrunk_cutout_keeps_its_whole_mass(forge_cfg, size, angle):
    cutout = base.ObjectCutout(np.ones((*size, 4), dtype=np.float32), "car")
    cfg = dataclasses.replace(forge_cfg, scale_range=(2.0, 2.0), rotation_range=(angle, angle))
    out = base.transform_cutout(cutout, cfg, np.random.default_rng(0), frame_size=(32, 32))
    assert out.shape[0] <= 32 and out.shape[1] <= 32
    theta = np.radians(angle)
    cos, sin = abs(np.cos(theta)), abs(np.sin(theta))
    h, w = size
    # The largest scale whose rotated bounds fit the frame.
    scale = min(32 / (h * cos + w * sin), 32 / (w * cos + h * sin))
    assert out.alpha.sum() == pytest.approx(scale**2 * h * w, rel=0.15)


def test_brightness_contrast_identity(data_generator):
    img = data_generator.random_image()
    np.testing.assert_allclose(base.adjust_brightness_contrast(img, 1.0, 1.0), img, atol=1e-7)


def test_brightness_contrast_pivot():
    img = np.full((2, 2, 3), 0.5)
    np.testing.assert_allclose(base.adjust_brightness_contrast(img, 1.0, 1.7), img)
    np.testing.assert_allclose(base.adjust_brightness_contrast(img, 1.2, 1.0), 0.6)


def test_sample_rng_streams_are_independent():
    a = base.sample_rng(0, 3, "train").random(4)
    b = base.sample_rng(0, 3, "test").random(4)
    c = base.sample_rng(0, 4, "train").random(4)
    np.testing.assert_array_equal(a, base.sample_rng(0, 3, "train").random(4))
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ValidationError):
        base.sample_rng(0, 0, "val")


def test_change_label_is_replayed_alpha_union(forge_cfg):
    pool = procedural.ProceduralCutoutPool(size=(64, 64), classes=forge_cfg.classes, seed=0, count=4)
    bgs = procedural.ProceduralBackgrounds(10, size=(64, 64), seed=0)
    for index in range(10):
        pair = bgs[index]
        chosen = [pool[i % len(pool)] for i in range(index % 3 + 1)]
        sample = base.composite_sample(
            core.Image(pair.t0),
            core.Image(pair.t1),
            core.FlowField(pair.flow),
            chosen,
            forge_cfg,
            np.random.default_rng(index),
        )
        replay = np.random.default_rng(index)
        expected = np.zeros((64, 64), dtype=bool)
        for cutout in chosen:
            pasted = base.transform_cutout(cutout, forge_cfg, replay, frame_size=(64, 64))
            h, w = pasted.shape
            row = int(replay.integers(0, 64 - h + 1))
            col = int(replay.integers(0, 64 - w + 1))
            expected[row : row + h, col : col + w] |= pasted.alpha >= forge_cfg.alpha_threshold
        np.testing.assert_array_equal(sample.change_label.data, expected.astype(np.float32))
        np.testing.assert_array_equal(sample.flow_label.data, pair.flow)


def test_paste_into_t0_leaves_t1_background(forge_cfg):
    cfg = dataclasses.replace(
        forge_cfg, paste_into="t0", brightness_range=(1.0, 1.0), contrast_range=(1.0, 1.0)
    )
    pool = procedural.ProceduralCutoutPool(size=(64, 64), seed=1, count=2)
    pair = procedural.ProceduralBackgrounds(1, size=(64, 64), seed=1)[0]
    sample = base.composite_sample(
        core.Image(pair.t0), core.Image(pair.t1), core.FlowField(pair.flow), [pool[0]], cfg,
        np.random.default_rng(0),
    )
    np.testing.assert_array_equal(sample.t1.data, pair.t1)
    assert sample.change_label.data.sum() > 0


def test_procedural_flow_matches_background_motion():
    """Away from the moving object t0(x) is t1 sampled at x + flow(x)."""
    bgs = procedural.ProceduralBackgrounds(6, size=(64, 64), seed=2)
    rows, cols = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
    checked = 0
    for index in range(len(bgs)):
        pair = bgs[index]
        vectors, counts = np.unique(pair.flow.reshape(-1, 2), axis=0, return_counts=True)
        assert len(vectors) <= 2
        if len(vectors) == 1:
            # The object left the frame in t0, its position in t1 is unknown.
            continue
        (gx, gy), (dx, dy) = vectors[np.argmax(counts)], vectors[np.argmin(counts)]
        object_t0 = np.all(pair.flow == (dx, dy), axis=-1)
        object_t1 = scipy.ndimage.shift(object_t0.astype(float), (dy, dx), order=0) > 0
        object_t1 = scipy.ndimage.binary_dilation(object_t1, iterations=3)

        r, c = rows + gy, cols + gx
        inside = (r >= 0) & (r <= 63) & (c >= 0) & (c <= 63)
        hits_object = object_t1[
            np.clip(np.round(r).astype(int), 0, 63), np.clip(np.round(c).astype(int), 0, 63)
        ]
        # The object may be partly outside t0, keep clear of the frame border.
        interior = (r >= 12) & (r <= 51) & (c >= 12) & (c <= 51)
        check = inside & interior & ~object_t0 & ~hits_object
        warped = np.stack(
            [
                scipy.ndimage.map_coordinates(pair.t1[..., ch], [r, c], order=1, mode="nearest")
                for ch in range(3)
            ],
            axis=-1,
        )
        np.testing.assert_allclose(pair.t0[check], warped[check], atol=2.0 / 255)
        checked += int(check.sum())
    assert checked > 0


def test_procedural_backgrounds_are_reproducible():
    a = procedural.ProceduralBackgrounds(2, size=(64, 48), seed=3)[1]
    b = procedural.ProceduralBackgrounds(2, size=(64, 48), seed=3)[1]
    assert a.t0.shape == (48, 64, 3)
    np.testing.assert_array_equal(a.t0, b.t0)
    np.testing.assert_array_equal(a.flow, b.flow)
    test = procedural.ProceduralBackgrounds(2, size=(64, 48), seed=3, split="test")[1]
    assert not np.array_equal(a.t0, test.t0)
    with pytest.raises(IndexError):
        procedural.ProceduralBackgrounds(2, size=(64, 48))[2]


def test_procedural_cutouts_use_requested_classes():
    pool = procedural.ProceduralCutoutPool(size=(64, 64), classes=(7, 15), seed=0, count=12)
    assert len(pool) == 12
    assert {pool[i].class_tag for i in range(len(pool))} <= {"car", "person"}


def _forge(cfg, out_dir, max_concurrency=None):
    bgs, cutouts = sources.get_sources(cfg, "train")
    return dataset.forge_dataset(bgs, cutouts, cfg, str(out_dir), "train", max_concurrency)


def test_forge_is_byte_identical(tmp_path, forge_cfg):
    a = _forge(forge_cfg, tmp_path / "a", max_concurrency=1)
    _forge(forge_cfg, tmp_path / "b", max_concurrency=-1)
    assert len(a) == 4
    assert helpers.utils.tree_bytes(tmp_path / "a") == helpers.utils.tree_bytes(tmp_path / "b")


def test_forge_manifest_matches_files(tmp_path, forge_cfg):
    manifest = _forge(forge_cfg, tmp_path)
    assert manifest.ids == [f"train_{i:05d}" for i in range(4)]
    for i, entry in enumerate(manifest.entries):
        assert entry.paste_count == dataset.paste_count(forge_cfg, i)
        assert entry.paths == dataset.sample_paths(entry.id)
    assert manifest.counts["pastes"] == sum(dataset.paste_count(forge_cfg, i) for i in range(4))

    loaded = dataset.DatasetManifest.load(str(tmp_path))
    assert loaded.ids == manifest.ids
    assert config.ForgeConfig.from_dict(loaded.config) == forge_cfg
    sample = loaded.read(0)
    assert sample.shape == (forge_cfg.height, forge_cfg.width)
    assert core.is_binary(sample.change_label.data)


def test_forged_sample_matches_in_memory_one(tmp_path, forge_cfg):
    manifest = _forge(forge_cfg, tmp_path)
    bgs, cutouts = sources.get_sources(forge_cfg, "train")
    fresh = dataset.forge_sample(bgs, cutouts, forge_cfg, 2)
    stored = manifest.read(2)
    np.testing.assert_array_equal(stored.t0.data, fresh.t0.data)
    np.testing.assert_array_equal(stored.t1.data, fresh.t1.data)
    np.testing.assert_array_equal(stored.flow_label.data, fresh.flow_label.data)
    np.testing.assert_array_equal(stored.change_label.data, fresh.change_label.data)


def test_no_pastes_means_no_change(tmp_path, forge_cfg):
    cfg = dataclasses.replace(forge_cfg, paste_count_range=(0, 0))
    manifest = _forge(cfg, tmp_path)
    assert manifest.counts["pastes"] == 0
    for i in range(len(manifest)):
        assert manifest.read(i).change_label.data.sum() == 0


def test_manifest_load_errors(tmp_path, forge_cfg):
    with pytest.raises(FileNotFoundError):
        dataset.DatasetManifest.load(str(tmp_path / "missing.json"))

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError, match="bad.json"):
        dataset.DatasetManifest.load(str(bad))

    _forge(forge_cfg, tmp_path / "split")
    path = tmp_path / "split" / dataset.MANIFEST_NAME
    d = json.loads(path.read_text())
    d["entries"].append(dict(d["entries"][0]))
    path.write_text(json.dumps(d))
    with pytest.raises(FormatError, match="duplicate"):
        dataset.DatasetManifest.load(str(path))

    d["entries"] = d["entries"][:1]
    os.remove(tmp_path / "split" / d["entries"][0]["flow"])
    path.write_text(json.dumps(d))
    with pytest.raises(FileNotFoundError):
        dataset.DatasetManifest.load(str(path))


def test_manifest_backgrounds(tmp_path, data_generator):
    sample = data_generator.random_sample(32, 48, "pair")
    files.write_image(str(tmp_path / "a.png"), sample.t0.data)
    files.write_image(str(tmp_path / "b.png"), sample.t1.data)
    files.write_flo(str(tmp_path / "f.flo"), sample.flow_label)
    manifest = tmp_path / "pairs.json"
    manifest.write_text(json.dumps({"pairs": [{"id": "p0", "t0": "a.png", "t1": "b.png", "flow": "f.flo"}]}))

    bgs = sources.ManifestBackgrounds(str(manifest), size=(48, 32))
    pair = bgs[0]
    assert (len(bgs), pair.id) == (1, "p0")
    np.testing.assert_array_equal(pair.t0, sample.t0.data)
    np.testing.assert_array_equal(pair.flow, sample.flow_label.data)
    with pytest.raises(ValidationError, match="expected 64x64"):
        sources.ManifestBackgrounds(str(manifest), size=(64, 64))[0]


def test_manifest_cutout_pool(tmp_path):
    image, seg = _blob_image()
    files.write_image(str(tmp_path / "img.png"), image)
    seg_path = tmp_path / "seg.png"
    from PIL import Image as PILImage

    PILImage.fromarray(seg.astype(np.uint8)).save(seg_path)
    manifest = tmp_path / "images.json"
    manifest.write_text(json.dumps({"images": [{"image": "img.png", "segmentation": "seg.png"}]}))
    assert len(sources.ManifestCutoutPool(str(manifest), [15])) == 2
    assert len(sources.ManifestCutoutPool(str(manifest), [15], min_pixels=15)) == 1


def test_source_manifest_missing_field(tmp_path):
    manifest = tmp_path / "pairs.json"
    manifest.write_text(json.dumps({"pairs": [{"t0": "a.png"}]}))
    with pytest.raises(FormatError, match="lacks"):
        sources.ManifestBackgrounds(str(manifest))


def test_configured_source_must_exist(forge_cfg, tmp_path):
    cfg = dataclasses.replace(forge_cfg, backgrounds=str(tmp_path / "nope.json"))
    with pytest.raises(ValidationError, match="nope.json"):
        sources.get_sources(cfg)
