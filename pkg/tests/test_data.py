"""Data model: pre-sampling, synthetic generation, interchange formats."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsqnet.data import (
    Dataset,
    FeatureSequence,
    ObjectScoreSequence,
    SelectionBudget,
    SynthConfig,
    VideoRecord,
    WordEmbeddingTable,
    generate_synthetic_dataset,
    presample_and_pad,
    read_embedding_table,
    read_manifest,
    split_dataset,
    write_manifest,
)
from tsqnet.exceptions import ConfigError, FormatError


class TestPresampleAndPad:
    def test_identity_case(self):
        assert presample_and_pad(10, 10) == list(range(10))

    def test_cyclic_padding(self):
        assert presample_and_pad(3, 7) == [0, 1, 2, 0, 1, 2, 0]

    def test_uniform_subsampling(self):
        # floor(j * 50 / 5)
        assert presample_and_pad(50, 5) == [0, 10, 20, 30, 40]

    def test_empty_video_rejected(self):
        with pytest.raises(ConfigError):
            presample_and_pad(0, 5)

    @given(raw=st.integers(1, 500), target=st.integers(1, 64))
    @settings(max_examples=200)
    def test_length_and_range(self, raw, target):
        out = presample_and_pad(raw, target)
        assert len(out) == target
        assert all(0 <= i < raw for i in out)

    @given(raw=st.integers(1, 500), target=st.integers(1, 64))
    @settings(max_examples=100)
    def test_monotone_when_subsampling(self, raw, target):
        if raw >= target:
            out = presample_and_pad(raw, target)
            assert all(a < b for a, b in zip(out, out[1:]))


class TestDomainTypes:
    def test_feature_sequence_rejects_nan(self):
        with pytest.raises(FormatError):
            FeatureSequence(np.array([[np.nan, 1.0]]), "v")

    def test_feature_sequence_rejects_empty(self):
        with pytest.raises(ConfigError):
            FeatureSequence(np.zeros((0, 3)), "v")

    def test_object_scores_must_be_probabilities(self):
        with pytest.raises(FormatError):
            ObjectScoreSequence(np.array([[0.5, 1.5]]))

    def test_video_record_checks_frame_counts(self):
        feats = FeatureSequence(np.zeros((4, 2)), "v")
        objs = ObjectScoreSequence(np.full((3, 2), 0.5))
        with pytest.raises(ConfigError):
            VideoRecord(feats, objs, label=0)

    def test_video_record_checks_planted_range(self):
        feats = FeatureSequence(np.zeros((4, 2)), "v")
        objs = ObjectScoreSequence(np.full((4, 2), 0.5))
        with pytest.raises(ConfigError):
            VideoRecord(feats, objs, label=0, planted_salient=(5,))

    def test_budget_bounds(self):
        with pytest.raises(ConfigError):
            SelectionBudget(presample_count=4, select_count=5)
        SelectionBudget(presample_count=4, select_count=4)

    def test_word_table_name_count(self):
        with pytest.raises(ConfigError):
            WordEmbeddingTable(np.zeros((3, 2)), names=("a", "b"))


class TestSyntheticGeneration:
    def test_zero_noise_full_salience_is_degenerate(self):
        cfg = SynthConfig(classes=3, frames=5, feature_dim=6, object_count=9,
                          embed_dim=4, per_class=2, salient_per_video=5, noise=0.0)
        ds = generate_synthetic_dataset(cfg, seed=0)
        for video in ds.videos:
            assert video.planted_salient == tuple(range(5))
            direction = ds.class_directions[video.label]
            frames = video.features.frames
            assert np.allclose(frames, np.broadcast_to(direction, frames.shape), atol=1e-6)

    def test_counting(self):
        cfg = SynthConfig(classes=3, frames=4, feature_dim=4, object_count=6,
                          embed_dim=3, per_class=2, salient_per_video=2)
        ds = generate_synthetic_dataset(cfg, seed=3)
        assert len(ds.videos) == 6
        assert sorted(v.label for v in ds.videos) == [0, 0, 1, 1, 2, 2]

    def test_determinism_byte_identical(self):
        cfg = SynthConfig(classes=4, frames=16, feature_dim=8, object_count=8,
                          embed_dim=5, per_class=3, salient_per_video=4)
        a = generate_synthetic_dataset(cfg, seed=17)
        b = generate_synthetic_dataset(cfg, seed=17)
        assert len(a.videos) == len(b.videos)
        for va, vb in zip(a.videos, b.videos):
            assert va.video_id == vb.video_id
            assert va.features.frames.tobytes() == vb.features.frames.tobytes()
            assert va.objects.scores.tobytes() == vb.objects.scores.tobytes()
            assert va.planted_salient == vb.planted_salient
        assert a.word_table.rows.tobytes() == b.word_table.rows.tobytes()
        assert a.class_embeddings.tobytes() == b.class_embeddings.tobytes()

    def test_different_seeds_differ(self):
        cfg = SynthConfig(classes=2, frames=4, feature_dim=4, object_count=4,
                          embed_dim=3, per_class=1, salient_per_video=1)
        a = generate_synthetic_dataset(cfg, seed=1)
        b = generate_synthetic_dataset(cfg, seed=2)
        assert a.videos[0].features.frames.tobytes() != b.videos[0].features.frames.tobytes()

    def test_object_scores_are_probabilities(self):
        ds = generate_synthetic_dataset(SynthConfig(classes=3, per_class=2), seed=9)
        for video in ds.videos:
            s = video.objects.scores
            assert (s >= 0).all() and (s <= 1).all()

    def test_salient_count_validation(self):
        with pytest.raises(ConfigError):
            SynthConfig(classes=2, frames=4, salient_per_video=5)

    def test_split_is_stratified_and_deterministic(self):
        ds = generate_synthetic_dataset(SynthConfig(classes=4, per_class=10), seed=2)
        tr1, he1 = split_dataset(ds.videos, 0.8, seed=5)
        tr2, he2 = split_dataset(ds.videos, 0.8, seed=5)
        assert [v.video_id for v in tr1] == [v.video_id for v in tr2]
        assert [v.video_id for v in he1] == [v.video_id for v in he2]
        for label in range(4):
            assert sum(1 for v in tr1 if v.label == label) == 8
            assert sum(1 for v in he1 if v.label == label) == 2


class TestManifestRoundTrip:
    @pytest.fixture
    def dataset(self):
        return generate_synthetic_dataset(
            SynthConfig(classes=3, frames=6, feature_dim=5, object_count=7,
                        embed_dim=4, per_class=1, salient_per_video=2), seed=11)

    def test_round_trip_bit_exact(self, tmp_path, dataset):
        write_manifest(dataset, tmp_path)
        loaded = read_manifest(tmp_path)
        assert len(loaded.videos) == len(dataset.videos)
        for a, b in zip(dataset.videos, loaded.videos):
            assert a.video_id == b.video_id
            assert a.label == b.label
            assert a.planted_salient == b.planted_salient
            assert a.features.frames.tobytes() == b.features.frames.tobytes()
            assert a.objects.scores.tobytes() == b.objects.scores.tobytes()
        assert loaded.word_table.rows.tobytes() == dataset.word_table.rows.tobytes()
        assert loaded.class_embeddings.tobytes() == dataset.class_embeddings.tobytes()
        assert loaded.class_names == dataset.class_names

    def test_second_write_is_byte_identical(self, tmp_path, dataset):
        write_manifest(dataset, tmp_path / "a")
        write_manifest(dataset, tmp_path / "b")
        for name in ("manifest.jsonl", "payload.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_empty_dataset_file(self, tmp_path):
        (tmp_path / "manifest.jsonl").write_text("")
        loaded = read_manifest(tmp_path)
        assert loaded.videos == []

    def test_empty_dataset_round_trip(self, tmp_path):
        write_manifest(Dataset(videos=[]), tmp_path)
        assert read_manifest(tmp_path).videos == []

    def test_malformed_header(self, tmp_path):
        (tmp_path / "manifest.jsonl").write_text("not json\n")
        with pytest.raises(FormatError, match="header"):
            read_manifest(tmp_path)

    def test_wrong_format_tag(self, tmp_path):
        (tmp_path / "manifest.jsonl").write_text(json.dumps({"format": "other"}) + "\n")
        with pytest.raises(FormatError):
            read_manifest(tmp_path)

    def test_dimension_mismatch_names_record(self, tmp_path, dataset):
        write_manifest(dataset, tmp_path)
        manifest = (tmp_path / "manifest.jsonl").read_text().splitlines()
        header = json.loads(manifest[0])
        header["d"] = header["d"] + 1  # payload rows are now one float short
        manifest[0] = json.dumps(header)
        (tmp_path / "manifest.jsonl").write_text("\n".join(manifest) + "\n")
        with pytest.raises(FormatError, match="dimension mismatch"):
            read_manifest(tmp_path)
        try:
            read_manifest(tmp_path)
        except FormatError as exc:
            assert dataset.videos[0].video_id in str(exc)

    def test_truncated_payload(self, tmp_path, dataset):
        write_manifest(dataset, tmp_path)
        payload = (tmp_path / "payload.bin").read_bytes()
        (tmp_path / "payload.bin").write_bytes(payload[:-8])
        with pytest.raises(FormatError, match="truncated"):
            read_manifest(tmp_path)

    def test_non_finite_payload_names_record(self, tmp_path, dataset):
        write_manifest(dataset, tmp_path)
        payload = bytearray((tmp_path / "payload.bin").read_bytes())
        payload[:4] = np.array([np.inf], dtype="<f4").tobytes()
        (tmp_path / "payload.bin").write_bytes(bytes(payload))
        with pytest.raises(FormatError, match=dataset.videos[0].video_id):
            read_manifest(tmp_path)


class TestEmbeddingTable:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic_dataset(SynthConfig(classes=3, per_class=1), seed=4)
        write_manifest(ds, tmp_path)
        word, cls, names = read_embedding_table(tmp_path)
        assert word.rows.tobytes() == ds.word_table.rows.tobytes()
        assert cls.tobytes() == ds.class_embeddings.tobytes()
        assert len(names) == word.count + cls.shape[0]

    def test_payload_length_checked(self, tmp_path):
        ds = generate_synthetic_dataset(SynthConfig(classes=3, per_class=1), seed=4)
        write_manifest(ds, tmp_path)
        payload = (tmp_path / "embeddings.bin").read_bytes()
        (tmp_path / "embeddings.bin").write_bytes(payload[:-4])
        with pytest.raises(FormatError):
            read_embedding_table(tmp_path)
