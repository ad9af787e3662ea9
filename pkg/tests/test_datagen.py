import dataclasses
import json

import numpy as np
import pytest

from loga.config import ConfigError, DatasetConfig, NoiseSpec, load_config, save_config
from loga.datagen import (
    CHUNK_MAGIC,
    FORMAT_VERSION,
    HEADER,
    ChecksumError,
    Dataset,
    DatasetVersionError,
    ManifestError,
    TruncatedChunkError,
    generate_dataset,
    identity_template,
    load_dataset,
    pk_batch_sampler,
    read_chunk,
    render_clean_frame,
    shift_frame,
    split_into_clips,
    validate_splits,
)

TINY = DatasetConfig(
    num_identities=6, train_identities=3, tracklets_per_identity=4, frames_per_tracklet=15, height=16, width=8, clips_per_chunk=5, seed=11
)


def with_noise(**kw):
    return dataclasses.replace(TINY, noise=NoiseSpec(**kw))


def _frame_pairs(root, cfg):
    """(stored frame, clean render, corruption event) for every stored frame."""
    ds = Dataset.load(root)
    for r in ds.manifest["clips"]:
        t = r["tracklet_id"] - r["identity"] * cfg.tracklets_per_identity
        start = (r["clip_id"] - _first_clip(ds.manifest, r["tracklet_id"])) * cfg.clip_len
        for j, event in enumerate(r["corruptions"]):
            f = min(start + j, cfg.frames_per_tracklet - 1)
            yield ds.frames[r["clip_id"], j], render_clean_frame(cfg, r["identity"], t, f), event


def _first_clip(manifest, tracklet_id):
    return min(r["clip_id"] for r in manifest["clips"] if r["tracklet_id"] == tracklet_id)


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_generation_is_byte_identical_per_seed(tmp_path):
    a, b = generate_dataset(TINY, tmp_path / "a"), generate_dataset(TINY, tmp_path / "b")
    assert _tree_bytes(a) == _tree_bytes(b)
    c = generate_dataset(dataclasses.replace(TINY, seed=12), tmp_path / "c")
    assert _tree_bytes(a) != _tree_bytes(c)


def test_round_trip_pixels(tmp_path):
    root = generate_dataset(TINY, tmp_path / "d")
    manifest, clips = load_dataset(root)
    clips = list(clips)
    assert len(clips) == manifest["num_clips"] == 6 * 4 * 2
    ds = Dataset.load(root)
    for c in clips:
        np.testing.assert_array_equal(ds.frames[c.clip_id], c.frames)
        assert c.frames.dtype == np.float32


def test_no_noise_means_all_clean_and_clean_renders(tmp_path):
    cfg = dataclasses.replace(TINY, noise=NoiseSpec(p_occlude=0, p_misalign=0, p_idswitch=0))
    root = generate_dataset(cfg, tmp_path / "clean")
    for frame, clean, event in _frame_pairs(root, cfg):
        assert event["flag"] == "clean"
        np.testing.assert_array_equal(frame, clean)


def test_flag_soundness_default_noise(tmp_path):
    root = generate_dataset(TINY, tmp_path / "noisy")
    kinds = set()
    for frame, clean, event in _frame_pairs(root, TINY):
        kinds.add(event["flag"])
        if event["flag"] == "clean":
            np.testing.assert_array_equal(frame, clean)
        elif event["flag"] == "misaligned":
            np.testing.assert_array_equal(frame, shift_frame(clean, *event["shift"]))
        else:
            assert not np.array_equal(frame, clean)
    assert kinds == {"clean", "occluded", "misaligned", "id_switch"}


def test_occluder_pixel_diff_oracle(tmp_path):
    cfg = dataclasses.replace(TINY, noise=NoiseSpec(p_occlude=1.0, p_misalign=0, p_idswitch=0))
    root = generate_dataset(cfg, tmp_path / "occ")
    n = 0
    for frame, clean, event in _frame_pairs(root, cfg):
        assert event["flag"] == "occluded"
        y, x, h, w = event["rect"]
        mask = np.zeros(frame.shape, bool)
        mask[:, y : y + h, x : x + w] = True
        np.testing.assert_array_equal(frame[~mask], clean[~mask])
        np.testing.assert_array_equal(frame[mask], np.float32(event["fill"]))
        assert (frame != clean).any()
        n += 1
    assert n == 6 * 4 * 2 * cfg.clip_len


def test_templates_distinct_and_identities_separable():
    cfg = dataclasses.replace(TINY, num_identities=12, noise=NoiseSpec(p_occlude=0, p_misalign=0, p_idswitch=0))
    t = [identity_template(cfg, i) for i in range(12)]
    assert min(np.linalg.norm(t[i] - t[j]) for i in range(12) for j in range(i + 1, 12)) > 0
    rng = np.random.default_rng(0)
    samples = [(int(i), int(tr), int(f)) for i, tr, f in zip(rng.integers(0, 12, 100), rng.integers(0, 4, 100), rng.integers(0, 15, 100))]
    frames = [render_clean_frame(cfg, *s).ravel() for s in samples]
    intra, inter = [], []
    for a in range(100):
        for b in range(a + 1, 100):
            (intra if samples[a][0] == samples[b][0] else inter).append(np.linalg.norm(frames[a] - frames[b]))
    assert np.mean(intra) < np.mean(inter)


def test_manifest_records_and_splits(tmp_path):
    ds = Dataset.load(generate_dataset(TINY, tmp_path / "m"))
    assert set(ds.split) == {"train", "query", "gallery"}
    assert set(ds.identity[ds.indices("train")]) == {0, 1, 2}
    for r in ds.manifest["clips"]:
        assert r["camera"] == (r["tracklet_id"] % 4) % 2
        assert len(r["flags"]) == TINY.clip_len
    idx, labels = ds.train_labels()
    assert ds.num_train_classes == 3 and set(labels) == {0, 1, 2}
    assert all(len(g) == 2 for g in ds.tracklets("query"))


def test_checksum_error_names_chunk(tmp_path):
    root = generate_dataset(TINY, tmp_path / "x")
    path = root / "chunk_00002.bin"
    raw = bytearray(path.read_bytes())
    raw[HEADER.size + 7] ^= 0x40
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError, match="chunk_00002.bin"):
        Dataset.load(root)


def test_truncated_chunk(tmp_path):
    root = generate_dataset(TINY, tmp_path / "t")
    path = root / "chunk_00000.bin"
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(TruncatedChunkError):
        read_chunk(path, (10, 1, 16, 8))


def test_future_manifest_version(tmp_path):
    root = generate_dataset(TINY, tmp_path / "v")
    m = json.loads((root / "manifest.json").read_text())
    m["format_version"] = FORMAT_VERSION + 1
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DatasetVersionError):
        load_dataset(root)


def test_future_chunk_version(tmp_path):
    root = generate_dataset(TINY, tmp_path / "cv")
    path = root / "chunk_00000.bin"
    raw = path.read_bytes()
    path.write_bytes(HEADER.pack(CHUNK_MAGIC, FORMAT_VERSION + 1, HEADER.unpack_from(raw)[2]) + raw[HEADER.size :])
    with pytest.raises(DatasetVersionError):
        read_chunk(path, (10, 1, 16, 8))


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError):
        load_dataset(tmp_path)


def test_query_without_cross_camera_gallery_is_rejected():
    records = [
        {"clip_id": 0, "identity": 5, "camera": 0, "split": "query"},
        {"clip_id": 1, "identity": 5, "camera": 0, "split": "gallery"},
    ]
    with pytest.raises(ManifestError):
        validate_splits(records)


@pytest.mark.parametrize(
    "change",
    [
        dict(noise=NoiseSpec(p_occlude=0.6, p_misalign=0.6)),
        dict(noise=NoiseSpec(p_idswitch=1.5)),
        dict(tracklets_per_identity=3),
        dict(num_cameras=1),
        dict(train_identities=0),
    ],
)
def test_invalid_dataset_configs(change, tmp_path):
    with pytest.raises(ConfigError):
        generate_dataset(dataclasses.replace(TINY, **change), tmp_path / "bad")


def test_config_json_round_trip(tmp_path):
    save_config(TINY, tmp_path / "d.json")
    assert load_config(DatasetConfig, tmp_path / "d.json") == TINY
    (tmp_path / "bad.json").write_text('{"num_identity": 3}')
    with pytest.raises(ConfigError):
        load_config(DatasetConfig, tmp_path / "bad.json")


@pytest.mark.parametrize("n,expected_clips,padding", [(25, 3, 5), (10, 1, 0), (3, 1, 7)])
def test_split_into_clips(n, expected_clips, padding):
    frames = np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1)
    flags = ["clean"] * n
    flags[-1] = "occluded"
    clips = split_into_clips(frames, 10, flags)
    assert len(clips) == expected_clips
    last = clips[-1]
    assert np.all(last.frames[10 - padding :] == n - 1)
    assert all(f == "occluded" for f in last.flags[10 - padding - 1 :])
    np.testing.assert_array_equal(np.concatenate([c.frames for c in clips])[:n].ravel(), np.arange(n))


def test_split_empty_tracklet():
    with pytest.raises(ValueError):
        split_into_clips(np.zeros((0, 1, 2, 2)), 10)


def test_pk_sampler_batches():
    labels = np.repeat(np.arange(6), 5)
    it = pk_batch_sampler(labels, 4, 8, 3)
    batch = next(it)
    assert len(batch) == 32
    groups = labels[batch].reshape(4, 8)
    assert len(set(groups[:, 0])) == 4 and (groups == groups[:, :1]).all()
    again = pk_batch_sampler(labels, 4, 8, 3)
    next(again)
    np.testing.assert_array_equal(next(it), next(again))


def test_pk_sampler_unique_partition():
    batch = next(pk_batch_sampler([0, 1], 2, 1, 0))
    assert sorted(batch.tolist()) == [0, 1]


def test_pk_sampler_too_few_identities():
    with pytest.raises(ConfigError):
        next(pk_batch_sampler([0, 0, 1], 4, 2, 0))
