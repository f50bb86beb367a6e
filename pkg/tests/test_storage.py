import json

import numpy as np
import pytest

from hiercap.datagen import (
    DatasetError,
    FeatureStore,
    WorldSpec,
    build_world,
    dataset_stats,
    read_dataset,
    sample_video,
    split_of,
    write_dataset,
)
from hiercap.datagen.storage import RCF_HEADER, read_rcf, write_rcf
from hiercap.textproc import tokenize

from oracles import mean_pool_brute


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    world = build_world(WorldSpec(seed=7))
    videos = [sample_video(world, rng_seed=i) for i in range(10)]
    root = tmp_path_factory.mktemp("corpus")
    manifest = write_dataset(videos, root, spec=world.spec)
    return world, videos, root, manifest


class TestRoundTrip:
    def test_bit_equal(self, corpus):
        _, videos, root, _ = corpus
        loaded = {v.video_id: v for v in read_dataset(root)}
        assert len(loaded) == len(videos)
        for video in videos:
            got = loaded[video.video_id]
            assert [r.to_json() for r in got.gt] == [r.to_json() for r in video.gt]
            for c1, c2 in zip(got.clips, video.clips):
                assert np.array_equal(c1.dense, c2.dense)

    def test_payload_byte_arithmetic(self, tmp_path):
        dense = np.zeros((45, 4, 2, 2, 64), dtype=np.float32)
        path = tmp_path / "v.rcf"
        write_rcf(path, dense)
        assert path.stat().st_size == RCF_HEADER.size + 45 * 4 * 2 * 2 * 64 * 4
        assert RCF_HEADER.size == 24
        assert path.stat().st_size - 24 == 184320

    def test_truncated_file_names_video(self, corpus, tmp_path):
        _, videos, root, _ = corpus
        vid = videos[0].video_id
        src = (root / "features" / f"{vid}.rcf").read_bytes()
        bad = tmp_path / f"{vid}.rcf"
        bad.write_bytes(src[:-10])
        with pytest.raises(DatasetError, match=vid):
            read_rcf(bad, video_id=vid)

    def test_bad_magic(self, tmp_path):
        bad = tmp_path / "x.rcf"
        bad.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(DatasetError, match="magic"):
            read_rcf(bad)


class TestManifest:
    def test_splits_are_hash_stable(self, corpus):
        _, _, root, manifest = corpus
        for entry in manifest["videos"]:
            assert entry["split"] == split_of(entry["video_id"])
        assert split_of("vid000003") == split_of("vid000003")

    def test_split_fractions_roughly_correct(self):
        splits = [split_of(f"vid{i:06d}") for i in range(5000)]
        frac_train = splits.count("train") / len(splits)
        assert 0.75 < frac_train < 0.85
        assert 0.05 < splits.count("val") / len(splits) < 0.15
        assert 0.05 < splits.count("test") / len(splits) < 0.15


class TestFeatureStore:
    def test_window_reads_match_full_load(self, corpus):
        _, videos, root, _ = corpus
        store = FeatureStore(root)
        video = videos[0]
        full = np.stack([c.dense for c in video.clips])
        window = store.dense(video.video_id, 2, 5)
        assert np.array_equal(window, full[2:5])

    def test_cls_matches_brute_force_mean(self, corpus):
        _, videos, root, _ = corpus
        store = FeatureStore(root)
        video = videos[1]
        cls = store.cls(video.video_id, 0, 3)
        for i in range(3):
            want = mean_pool_brute(video.clips[i].dense.astype(np.float64))
            assert np.allclose(cls[i], want, atol=1e-6)

    def test_out_of_range_window(self, corpus):
        _, videos, root, _ = corpus
        store = FeatureStore(root)
        with pytest.raises(DatasetError):
            store.dense(videos[0].video_id, 0, videos[0].n_clips + 1)


class TestStats:
    def test_counts(self, corpus):
        _, videos, _, _ = corpus
        report = dataset_stats(videos)
        by_level = {s.level: s for s in report.levels}
        assert by_level[1].count == sum(len(v.records(1)) for v in videos)
        assert by_level[3].count == len(videos)
        assert report.n_clips == sum(v.n_clips for v in videos)

    def test_word_means_match_independent_count(self, corpus):
        # standalone counting oracle over the JSONL file
        _, _, root, _ = corpus
        words_by_level = {1: [], 2: [], 3: []}
        with open(root / "captions.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                words_by_level[rec["level"]].append(len(tokenize(rec["text"])))
        report = dataset_stats(read_dataset(root))
        for s in report.levels:
            counts = words_by_level[s.level]
            assert s.mean_words == pytest.approx(sum(counts) / len(counts))
            assert s.max_words == max(counts)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            dataset_stats([])
