"""Windowing and the recursive caption pipeline over hierarchy levels."""

from __future__ import annotations

import numpy as np
import torch

from ..datagen.records import SEGMENT_WINDOW_CLIPS, CaptionRecord, SyntheticVideo
from ..datagen.storage import FeatureStore
from .bundle import ModelBundle
from .generation import (
    GenerationContract,
    cls_features,
    generate,
    pad_feature_batch,
    pad_token_batch,
)

INFERENCE_BATCH = 128


class VideoFeatureView:
    """Uniform windowed feature access for in-memory or on-disk videos."""

    def __init__(self, video_id: str, n_clips: int):
        self.video_id = video_id
        self.n_clips = n_clips

    def dense(self, t_start: int, t_end: int) -> np.ndarray:
        raise NotImplementedError

    def cls(self, t_start: int, t_end: int) -> np.ndarray:
        dense = self.dense(t_start, t_end)
        return dense.mean(axis=(1, 2, 3))


class InMemoryFeatures(VideoFeatureView):
    def __init__(self, video: SyntheticVideo):
        super().__init__(video.video_id, video.n_clips)
        self._video = video

    def dense(self, t_start: int, t_end: int) -> np.ndarray:
        return np.stack([c.dense for c in self._video.clips[t_start:t_end]])


class StoreFeatures(VideoFeatureView):
    def __init__(self, store: FeatureStore, video_id: str):
        super().__init__(video_id, store.n_clips(video_id))
        self._store = store

    def dense(self, t_start: int, t_end: int) -> np.ndarray:
        return self._store.dense(self.video_id, t_start, t_end)

    def cls(self, t_start: int, t_end: int) -> np.ndarray:
        return self._store.cls(self.video_id, t_start, t_end)


def level_windows(n_clips: int, level: int,
                  segment_stride: int = SEGMENT_WINDOW_CLIPS) -> list[tuple[int, int]]:
    """Inference windows: per clip at level 1, fixed stride at level 2
    (ragged last window kept), the whole video at level 3."""
    if n_clips < 1:
        raise ValueError("video has no clips")
    if level == 1:
        return [(t, t + 1) for t in range(n_clips)]
    if level == 2:
        return [(s, min(s + segment_stride, n_clips))
                for s in range(0, n_clips, segment_stride)]
    if level == 3:
        return [(0, n_clips)]
    raise ValueError(f"bad level {level}")


def _dense_cells(dense: np.ndarray) -> np.ndarray:
    """Flatten (n, F, H, W, D) into a (n*F*H*W, D) token sequence."""
    return dense.reshape(-1, dense.shape[-1])


def records_in_window(records: list[CaptionRecord], t_start: int,
                      t_end: int) -> list[CaptionRecord]:
    hits = [r for r in records if r.t_start < t_end and t_start < r.t_end]
    return sorted(hits, key=lambda r: (r.t_start, r.t_end))


def caption_level(bundle: ModelBundle, feats: VideoFeatureView, level: int,
                  prev_records: list[CaptionRecord],
                  windows: list[tuple[int, int]] | None = None,
                  decoding: str = "greedy", beam_width: int = 1,
                  batch_size: int = INFERENCE_BATCH) -> list[CaptionRecord]:
    """Generate model captions for one level over inference windows.

    Windows are processed in batches and features are loaded per batch, so
    long videos never hold all dense features at once.
    """
    if level == 1 and prev_records:
        raise ValueError("level 1 takes no previous records")
    if level > 1:
        bad = [r for r in prev_records if r.level != level - 1]
        if bad:
            raise ValueError(f"expected level-{level - 1} records, got level {bad[0].level}")
    if windows is None:
        windows = level_windows(feats.n_clips, level)

    out: list[CaptionRecord] = []
    for i in range(0, len(windows), batch_size):
        chunk = windows[i : i + batch_size]
        feat_arrays = []
        token_seqs: list[list[int]] | None = [] if level > 1 else None
        for (s, e) in chunk:
            if level == 1:
                feat_arrays.append(_dense_cells(feats.dense(s, e)))
            else:
                feat_arrays.append(feats.cls(s, e))
                texts = [r.text for r in records_in_window(prev_records, s, e)]
                token_seqs.append(bundle.join_captions(texts))
        video_feats, video_mask = pad_feature_batch(feat_arrays)
        text_tokens = text_mask = None
        if level > 1 and any(token_seqs):
            padded = [seq if seq else [0] for seq in token_seqs]
            text_tokens, text_mask = pad_token_batch(padded)
            for j, seq in enumerate(token_seqs):
                if not seq:
                    text_mask[j] = False
        z = bundle.align(video_feats, video_mask, text_tokens, text_mask, level)
        contract = GenerationContract(level=level, max_len=bundle.cfg.max_text_len,
                                      decoding=decoding, beam_width=beam_width)
        sequences = generate(bundle, z, contract)
        for (s, e), seq in zip(chunk, sequences):
            text = bundle.tokenizer.decode(seq)
            out.append(CaptionRecord(
                video_id=feats.video_id, level=level, t_start=s, t_end=e,
                text=text if text.strip() else "<empty>", source="model"))
    return out


def recursive_caption(bundle: ModelBundle, feats: VideoFeatureView,
                      decoding: str = "greedy", beam_width: int = 1,
                      batch_size: int = INFERENCE_BATCH) -> list[CaptionRecord]:
    """Full three-level recursion: clips, then segments, then the summary."""
    level1 = caption_level(bundle, feats, 1, [], decoding=decoding,
                           beam_width=beam_width, batch_size=batch_size)
    level2 = caption_level(bundle, feats, 2, level1, decoding=decoding,
                           beam_width=beam_width, batch_size=batch_size)
    level3 = caption_level(bundle, feats, 3, level2, decoding=decoding,
                           beam_width=beam_width, batch_size=batch_size)
    return level1 + level2 + level3
