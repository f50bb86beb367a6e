"""Core corpus record types shared across the whole pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SOURCES = ("ground_truth", "model", "teacher_pseudo")
LEVELS = (1, 2, 3)

# One clip stands for 4 seconds of nominal video time.
SECONDS_PER_CLIP = 4
# Level-2 inference windows stride this many clips (nominal 3 minutes).
SEGMENT_WINDOW_CLIPS = 45


@dataclass
class CaptionRecord:
    """One caption at one hierarchy level over a half-open clip span."""

    video_id: str
    level: int
    t_start: int
    t_end: int
    text: str
    source: str = "ground_truth"
    teacher_score: float | None = None

    def validate(self) -> None:
        if self.level not in LEVELS:
            raise ValueError(f"level must be in {LEVELS}, got {self.level}")
        if not (0 <= self.t_start < self.t_end):
            raise ValueError(f"bad span [{self.t_start}, {self.t_end}) for {self.video_id}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if not self.text.strip():
            raise ValueError(f"empty caption text in {self.video_id}")

    def to_json(self) -> dict:
        d = {
            "video_id": self.video_id,
            "level": self.level,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "text": self.text,
            "source": self.source,
        }
        if self.teacher_score is not None:
            d["teacher_score"] = self.teacher_score
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CaptionRecord":
        rec = cls(
            video_id=d["video_id"],
            level=int(d["level"]),
            t_start=int(d["t_start"]),
            t_end=int(d["t_end"]),
            text=d["text"],
            source=d.get("source", "ground_truth"),
            teacher_score=d.get("teacher_score"),
        )
        rec.validate()
        return rec


@dataclass
class ClipFeatures:
    """Dense spatiotemporal features of one clip, shape F x H x W x D."""

    dense: np.ndarray

    def validate(self, shape: tuple[int, int, int, int] | None = None) -> None:
        if self.dense.ndim != 4:
            raise ValueError(f"dense features must be 4-D, got shape {self.dense.shape}")
        if shape is not None and tuple(self.dense.shape) != tuple(shape):
            raise ValueError(f"expected shape {shape}, got {self.dense.shape}")
        if not np.isfinite(self.dense).all():
            raise ValueError("non-finite entries in dense features")


@dataclass
class SyntheticVideo:
    """A long video: ordered clip feature blocks plus three-level ground truth."""

    video_id: str
    clips: list[ClipFeatures]
    gt: list[CaptionRecord] = field(default_factory=list)

    @property
    def n_clips(self) -> int:
        return len(self.clips)

    def records(self, level: int | None = None) -> list[CaptionRecord]:
        if level is None:
            return list(self.gt)
        return [r for r in self.gt if r.level == level]

    def validate(self) -> None:
        n = self.n_clips
        for rec in self.gt:
            rec.validate()
            if rec.t_end > n:
                raise ValueError(f"{self.video_id}: span end {rec.t_end} > {n} clips")
        l1 = sorted(self.records(1), key=lambda r: r.t_start)
        cursor = 0
        for rec in l1:
            if rec.t_start != cursor:
                raise ValueError(f"{self.video_id}: level-1 spans do not tile at clip {cursor}")
            cursor = rec.t_end
        if cursor != n:
            raise ValueError(f"{self.video_id}: level-1 spans cover {cursor} of {n} clips")
        l1_bounds = {r.t_start for r in l1} | {n}
        for rec in self.records(2):
            if rec.t_start not in l1_bounds or rec.t_end not in l1_bounds:
                raise ValueError(f"{self.video_id}: level-2 span not on level-1 boundaries")
        l3 = self.records(3)
        gt3 = [r for r in l3 if r.source == "ground_truth"]
        if len(gt3) != 1 or gt3[0].t_start != 0 or gt3[0].t_end != n:
            raise ValueError(f"{self.video_id}: expected exactly one full-span level-3 record")
