"""On-disk corpus format.

Layout of a dataset directory:

- ``captions.jsonl``       one caption record per line
- ``features/<vid>.rcf``   binary clip features: magic ``RCF1``, then
  ``|C| F H W D`` as little-endian u32 (24-byte header), then the payload
  as little-endian float32 in C order
- ``manifest.json``        video ids, clip counts, and split assignment
- ``world.json``           the WorldSpec the corpus was generated from
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .records import CaptionRecord, ClipFeatures, SyntheticVideo
from .world import WorldSpec

RCF_MAGIC = b"RCF1"
RCF_HEADER = struct.Struct("<4s5I")


class DatasetError(ValueError):
    """Structured load/validation failure for on-disk corpora."""


def split_of(video_id: str) -> str:
    """Stable train/val/test assignment (0.8/0.1/0.1) by hash of video_id."""
    digest = hashlib.md5(video_id.encode("utf-8")).hexdigest()
    bucket = int(digest, 16) % 10
    if bucket < 8:
        return "train"
    return "val" if bucket == 8 else "test"


def write_rcf(path: Path, dense: np.ndarray) -> None:
    """Write a (|C|, F, H, W, D) float array as one .rcf file."""
    if dense.ndim != 5:
        raise DatasetError(f"expected 5-D clip stack, got shape {dense.shape}")
    arr = np.ascontiguousarray(dense, dtype="<f4")
    header = RCF_HEADER.pack(RCF_MAGIC, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_rcf_header(path: Path) -> tuple[int, int, int, int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(RCF_HEADER.size)
    if len(raw) < RCF_HEADER.size:
        raise DatasetError(f"{path.name}: truncated header")
    magic, c, f, h, w, d = RCF_HEADER.unpack(raw)
    if magic != RCF_MAGIC:
        raise DatasetError(f"{path.name}: bad magic {magic!r}, expected {RCF_MAGIC!r}")
    return c, f, h, w, d


def read_rcf(path: Path, video_id: str | None = None) -> np.ndarray:
    vid = video_id or path.stem
    shape = read_rcf_header(path)
    expected = int(np.prod(shape)) * 4
    payload = path.read_bytes()[RCF_HEADER.size:]
    if len(payload) != expected:
        raise DatasetError(
            f"{vid}: feature payload is {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def write_dataset(videos: list[SyntheticVideo], dir_path: str | Path,
                  spec: WorldSpec | None = None) -> dict:
    """Write a corpus; returns the manifest dict."""
    root = Path(dir_path)
    (root / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    with open(root / "captions.jsonl", "w") as fh:
        for video in sorted(videos, key=lambda v: v.video_id):
            video.validate()
            dense = np.stack([c.dense for c in video.clips])
            write_rcf(root / "features" / f"{video.video_id}.rcf", dense)
            for rec in video.gt:
                fh.write(json.dumps(rec.to_json()) + "\n")
            entries.append({
                "video_id": video.video_id,
                "n_clips": video.n_clips,
                "split": split_of(video.video_id),
            })
    manifest = {"videos": entries}
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    if spec is not None:
        with open(root / "world.json", "w") as fh:
            json.dump(spec.to_dict(), fh, indent=1, sort_keys=True)
    return manifest


def read_manifest(dir_path: str | Path) -> dict:
    path = Path(dir_path) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"manifest not found in {dir_path}")
    with open(path) as fh:
        return json.load(fh)


def read_records(path: str | Path) -> list[CaptionRecord]:
    """Load one captions JSONL file."""
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(CaptionRecord.from_json(json.loads(line)))
    return records


def write_records(records: list[CaptionRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_dataset(dir_path: str | Path, split: str | None = None,
                 load_features: bool = True) -> list[SyntheticVideo]:
    """Load a corpus directory back into SyntheticVideo objects."""
    root = Path(dir_path)
    manifest = read_manifest(root)
    by_video: dict[str, list[CaptionRecord]] = {}
    for rec in read_records(root / "captions.jsonl"):
        by_video.setdefault(rec.video_id, []).append(rec)

    videos = []
    for entry in manifest["videos"]:
        vid = entry["video_id"]
        if split is not None and entry["split"] != split:
            continue
        path = root / "features" / f"{vid}.rcf"
        if load_features:
            dense = read_rcf(path, video_id=vid)
            if dense.shape[0] != entry["n_clips"]:
                raise DatasetError(
                    f"{vid}: manifest says {entry['n_clips']} clips, file has {dense.shape[0]}"
                )
            clips = [ClipFeatures(dense=dense[i]) for i in range(dense.shape[0])]
        else:
            n = read_rcf_header(path)[0]
            clips = [ClipFeatures(dense=np.empty((0, 0, 0, 0), dtype=np.float32))] * n
        video = SyntheticVideo(video_id=vid, clips=clips, gt=by_video.get(vid, []))
        if load_features:
            video.validate()
        videos.append(video)
    return videos


class FeatureStore:
    """Lazy, windowed access to per-video .rcf files.

    Only the requested clip range is read from disk, so hour-long videos
    never have all dense features resident at once.
    """

    def __init__(self, dir_path: str | Path):
        self.root = Path(dir_path)

    def path(self, video_id: str) -> Path:
        return self.root / "features" / f"{video_id}.rcf"

    def shape(self, video_id: str) -> tuple[int, int, int, int, int]:
        return read_rcf_header(self.path(video_id))

    def n_clips(self, video_id: str) -> int:
        return self.shape(video_id)[0]

    def dense(self, video_id: str, t_start: int, t_end: int) -> np.ndarray:
        """Dense features of clips [t_start, t_end), shape (n, F, H, W, D)."""
        c, f, h, w, d = self.shape(video_id)
        if not (0 <= t_start < t_end <= c):
            raise DatasetError(f"{video_id}: window [{t_start}, {t_end}) outside {c} clips")
        clip_bytes = f * h * w * d * 4
        offset = RCF_HEADER.size + t_start * clip_bytes
        count = (t_end - t_start) * f * h * w * d
        with open(self.path(video_id), "rb") as fh:
            fh.seek(offset)
            raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise DatasetError(f"{video_id}: feature file shorter than header promises")
        return np.frombuffer(raw, dtype="<f4").reshape(t_end - t_start, f, h, w, d).copy()

    def cls(self, video_id: str, t_start: int, t_end: int) -> np.ndarray:
        """Per-clip global vectors (mean over F*H*W cells), shape (n, D)."""
        dense = self.dense(video_id, t_start, t_end)
        return dense.mean(axis=(1, 2, 3))
