"""Training corpora, sample assembly, and the alternate-batching schedule."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..datagen.records import CaptionRecord, SyntheticVideo
from ..datagen.storage import FeatureStore, read_manifest, read_records
from ..modeling.bundle import join_caption_ids
from ..modeling.generation import pad_feature_batch, pad_token_batch
from ..modeling.recursion import (
    InMemoryFeatures,
    StoreFeatures,
    VideoFeatureView,
    records_in_window,
)
from ..textproc import BOS, EOS, Tokenizer


@dataclass(frozen=True)
class Sample:
    """One training example: a caption target plus its conditioning window."""

    video_id: str
    level: int
    t_start: int
    t_end: int
    target: tuple[int, ...]  # BOS ... EOS token ids
    text: tuple[int, ...]    # joined lower-level caption ids (empty at level 1)


class TrainingCorpus:
    """Records plus lazy feature access, from disk or in memory.

    Ground-truth records come from the dataset directory; model-generated
    and pseudo records are registered with ``add_records`` and never shadow
    ground truth (the source tags stay disjoint).
    """

    def __init__(self, root: str | Path | None = None):
        self._records: list[CaptionRecord] = []
        self._views: dict[str, VideoFeatureView] = {}
        self._splits: dict[str, str] = {}
        if root is not None:
            root = Path(root)
            store = FeatureStore(root)
            for entry in read_manifest(root)["videos"]:
                vid = entry["video_id"]
                self._splits[vid] = entry["split"]
                self._views[vid] = StoreFeatures(store, vid)
            self._records = read_records(root / "captions.jsonl")

    @classmethod
    def in_memory(cls, videos: list[SyntheticVideo],
                  splits: dict[str, str] | None = None) -> "TrainingCorpus":
        corpus = cls()
        for video in videos:
            corpus._views[video.video_id] = InMemoryFeatures(video)
            corpus._splits[video.video_id] = (splits or {}).get(video.video_id, "train")
            corpus._records.extend(video.gt)
        return corpus

    def video_ids(self, split: str | None = None) -> list[str]:
        ids = [v for v in self._views if split is None or self._splits[v] == split]
        return sorted(ids)

    def split_of(self, video_id: str) -> str:
        return self._splits[video_id]

    def feature_view(self, video_id: str) -> VideoFeatureView:
        return self._views[video_id]

    def add_records(self, records: list[CaptionRecord]) -> None:
        for rec in records:
            if rec.source == "ground_truth":
                raise ValueError("only model/pseudo records may be added")
            if rec.video_id not in self._views:
                raise ValueError(f"unknown video {rec.video_id}")
        self._records.extend(records)

    def records(self, split: str | None = None, level: int | None = None,
                sources: tuple[str, ...] | None = None) -> list[CaptionRecord]:
        out = []
        for rec in self._records:
            if split is not None and self._splits[rec.video_id] != split:
                continue
            if level is not None and rec.level != level:
                continue
            if sources is not None and rec.source not in sources:
                continue
            out.append(rec)
        return sorted(out, key=lambda r: (r.video_id, r.level, r.t_start, r.t_end, r.source))


def build_samples(corpus: TrainingCorpus, tokenizer: Tokenizer, split: str,
                  level: int, max_text_len: int, max_align_text_tokens: int,
                  target_sources: tuple[str, ...] = ("ground_truth",),
                  text_sources: tuple[str, ...] = ("model",)) -> list[Sample]:
    """Assemble samples for one level: targets plus lower-level text inputs."""
    targets = corpus.records(split, level, target_sources)
    if not targets:
        raise ValueError(f"no level-{level} records with sources {target_sources} in {split}")
    prev_by_video: dict[str, list[CaptionRecord]] = {}
    if level > 1:
        for rec in corpus.records(split, level - 1, text_sources):
            prev_by_video.setdefault(rec.video_id, []).append(rec)
        if not prev_by_video:
            raise ValueError(
                f"level {level} needs level-{level - 1} text records "
                f"with sources {text_sources}")

    samples = []
    for rec in targets:
        body = tokenizer.encode(rec.text, add_special=False)[:max_text_len]
        text_ids: tuple[int, ...] = ()
        if level > 1:
            prev = records_in_window(prev_by_video.get(rec.video_id, []),
                                     rec.t_start, rec.t_end)
            text_ids = tuple(join_caption_ids(
                tokenizer, [p.text for p in prev], max_align_text_tokens))
        samples.append(Sample(
            video_id=rec.video_id, level=level, t_start=rec.t_start,
            t_end=rec.t_end, target=(BOS, *body, EOS), text=text_ids))
    return samples


def collate(samples: list[Sample], corpus: TrainingCorpus):
    """Pad a list of same-level samples into model-ready tensors."""
    level = samples[0].level
    if any(s.level != level for s in samples):
        raise ValueError("mixed levels in one batch")
    feats = []
    for s in samples:
        view = corpus.feature_view(s.video_id)
        if level == 1:
            dense = view.dense(s.t_start, s.t_end)
            feats.append(dense.reshape(-1, dense.shape[-1]))
        else:
            feats.append(view.cls(s.t_start, s.t_end))
    video_feats, video_mask = pad_feature_batch(feats)
    text_tokens = text_mask = None
    if level > 1:
        seqs = [list(s.text) for s in samples]
        padded = [seq if seq else [0] for seq in seqs]
        text_tokens, text_mask = pad_token_batch(padded)
        for j, seq in enumerate(seqs):
            if not seq:
                text_mask[j] = False
    targets, _ = pad_token_batch([list(s.target) for s in samples])
    return video_feats, video_mask, text_tokens, text_mask, targets


class BatchSource:
    """One shuffled stream of batches with an optional per-epoch sample cap.

    The source reshuffles whenever it wraps; ``reshuffles`` counts the wraps
    so the alternate-batching schedule is auditable.
    """

    def __init__(self, source_id: str, samples: list[Sample], batch_size: int,
                 seed: int = 0, cap: int | None = None):
        if not samples:
            raise ValueError(f"source {source_id!r} is empty")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.source_id = source_id
        self.batch_size = batch_size
        self._rng = np.random.default_rng([seed, len(samples)])
        if cap is not None and cap < len(samples):
            idx = sorted(self._rng.choice(len(samples), size=cap, replace=False))
            samples = [samples[i] for i in idx]
        self.samples = samples
        self.level = samples[0].level
        self.reshuffles = 0
        self.batches_served = 0
        self._order = self._rng.permutation(len(self.samples))
        self._pos = 0

    @property
    def n_batches(self) -> int:
        return -(-len(self.samples) // self.batch_size)

    def next_batch(self) -> list[Sample]:
        if self._pos >= len(self.samples):
            self._order = self._rng.permutation(len(self.samples))
            self._pos = 0
            self.reshuffles += 1
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        self.batches_served += 1
        return [self.samples[i] for i in idx]


def alternate_batches(sources: list[BatchSource]):
    """Round-robin over sources for one epoch of the longest source.

    Exhausted sources reshuffle and continue; every source contributes one
    batch per round, so an epoch yields ``max(n_batches) * len(sources)``
    (source_id, batch) pairs.
    """
    if not sources:
        raise ValueError("no batch sources")
    rounds = max(s.n_batches for s in sources)
    for _ in range(rounds):
        for source in sources:
            yield source.source_id, source.next_batch()
