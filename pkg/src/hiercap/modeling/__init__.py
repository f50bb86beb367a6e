from .backbone import BidirectionalEncoder, CausalLM, PretrainFailure, pretrain_frozen_lm
from .bundle import AdapterSet, BranchDisabled, ModelBundle, ModelConfig
from .checkpoint import CheckpointError, load_bundle, read_header, save_bundle
from .generation import (
    GenerationContract,
    cls_features,
    decode_nll,
    generate,
    pad_feature_batch,
    pad_token_batch,
    unconditional_logprobs,
)
from .recursion import (
    InMemoryFeatures,
    StoreFeatures,
    VideoFeatureView,
    caption_level,
    level_windows,
    records_in_window,
    recursive_caption,
)

__all__ = [
    "AdapterSet",
    "BidirectionalEncoder",
    "BranchDisabled",
    "CausalLM",
    "CheckpointError",
    "GenerationContract",
    "InMemoryFeatures",
    "ModelBundle",
    "ModelConfig",
    "PretrainFailure",
    "StoreFeatures",
    "VideoFeatureView",
    "caption_level",
    "cls_features",
    "decode_nll",
    "generate",
    "level_windows",
    "load_bundle",
    "pad_feature_batch",
    "pad_token_batch",
    "pretrain_frozen_lm",
    "read_header",
    "records_in_window",
    "recursive_caption",
    "save_bundle",
    "unconditional_logprobs",
]
