from .records import CaptionRecord, ClipFeatures, SyntheticVideo
from .world import World, WorldSpec, build_world, sample_video
from .storage import (
    DatasetError,
    FeatureStore,
    read_dataset,
    read_records,
    split_of,
    write_dataset,
)
from .stats import dataset_stats

__all__ = [
    "CaptionRecord",
    "ClipFeatures",
    "SyntheticVideo",
    "World",
    "WorldSpec",
    "build_world",
    "sample_video",
    "write_dataset",
    "read_dataset",
    "read_records",
    "split_of",
    "FeatureStore",
    "DatasetError",
    "dataset_stats",
]
