"""Model configuration, adapter sets, and the frozen+trainable bundle."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from ..textproc import SEP, Tokenizer
from .backbone import BidirectionalEncoder, CausalLM
from .layers import CrossAttentionAdapter, GatedCrossAttentionBlock, TransformerBlock

ALIGNMENT_KINDS = ("lm_frozen_crossattn", "plain_resampler")
DECODER_ADAPTATIONS = ("gated_crossattn", "input_prefix_only")
VARIANTS = ("separate_per_level", "unified")
LEVEL_KEYS = {1: "level1", 2: "level2", 3: "level3"}


def join_caption_ids(tokenizer: Tokenizer, texts: list[str], cap: int) -> list[int]:
    """SEP-joined token ids of lower-level captions, truncated to ``cap``."""
    ids: list[int] = []
    for i, text in enumerate(texts):
        if i:
            ids.append(SEP)
        ids.extend(tokenizer.encode(text, add_special=False))
    return ids[:cap]


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 64           # D, video feature dim
    d_model: int = 128              # D_z, joint embedding dim
    n_video_queries: int = 16       # |Z_v|
    n_text_queries: int = 16        # |Z_t|
    decoder_layers: int = 4
    alignment_layers: int = 2
    heads: int = 4
    max_text_len: int = 48          # K_max, generation/teacher-forcing cap
    max_align_text_tokens: int = 512
    gate_init: float = 0.0
    alignment_kind: str = "lm_frozen_crossattn"
    decoder_adaptation: str = "gated_crossattn"
    variant: str = "separate_per_level"

    def validate(self) -> None:
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if not math.isfinite(self.gate_init):
            raise ValueError("gate_init must be finite")
        if self.alignment_kind not in ALIGNMENT_KINDS:
            raise ValueError(f"alignment_kind must be one of {ALIGNMENT_KINDS}")
        if self.decoder_adaptation not in DECODER_ADAPTATIONS:
            raise ValueError(f"decoder_adaptation must be one of {DECODER_ADAPTATIONS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        for name in ("feature_dim", "d_model", "n_video_queries", "n_text_queries",
                     "decoder_layers", "alignment_layers", "heads", "max_text_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_joint(self) -> int:
        return self.n_video_queries + self.n_text_queries

    @property
    def max_pos(self) -> int:
        # room for the input-prefix arm: |Z| prefix slots plus text
        return self.n_joint + self.max_text_len + 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


class AdapterSet(nn.Module):
    """All trainable parameters for one hierarchy level (or shared)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.cfg = cfg
        self.video_proj = nn.Linear(cfg.feature_dim, d)
        self.video_queries = nn.Parameter(torch.randn(cfg.n_video_queries, d) * 0.02)
        self.text_queries = nn.Parameter(torch.randn(cfg.n_text_queries, d) * 0.02)
        self.align_video_blocks = nn.ModuleList(
            CrossAttentionAdapter(d, cfg.heads) for _ in range(cfg.alignment_layers))
        self.align_text_blocks = nn.ModuleList(
            CrossAttentionAdapter(d, cfg.heads) for _ in range(cfg.alignment_layers))
        if cfg.alignment_kind == "plain_resampler":
            # Fresh trainable transformer replacing the frozen encoder.
            self.resampler_blocks = nn.ModuleList(
                TransformerBlock(d, cfg.heads) for _ in range(cfg.alignment_layers))
            self.resampler_ln = nn.LayerNorm(d)
        if cfg.decoder_adaptation == "gated_crossattn":
            self.dec_blocks = nn.ModuleList(
                GatedCrossAttentionBlock(d, cfg.heads, cfg.gate_init)
                for _ in range(cfg.decoder_layers))
        else:
            self.prefix_proj = nn.Linear(d, d)

    def set_gates(self, value: float) -> None:
        if self.cfg.decoder_adaptation != "gated_crossattn":
            return
        with torch.no_grad():
            for block in self.dec_blocks:
                block.gate_attn.fill_(value)
                block.gate_ff.fill_(value)


class BranchDisabled:
    """Marker for modality-ablation arms; disabled branches emit zero rows."""

    NONE = "none"
    VIDEO = "video"
    TEXT = "text"


class ModelBundle(nn.Module):
    """Frozen backbones plus per-level trainable adapters.

    The bundle is an nn.Module so checkpointing sees one flat parameter
    namespace; the freeze mask marks every backbone parameter frozen and
    every adapter parameter trainable.
    """

    def __init__(self, cfg: ModelConfig, tokenizer: Tokenizer,
                 decoder: CausalLM, encoder: BidirectionalEncoder,
                 seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.decoder = decoder
        self.encoder = encoder
        torch.manual_seed(seed)
        if cfg.variant == "separate_per_level":
            keys = list(LEVEL_KEYS.values())
        else:
            keys = ["shared"]
        self.adapters = nn.ModuleDict({k: AdapterSet(cfg) for k in keys})
        self.disabled_branch = BranchDisabled.NONE
        self.branch_calls = {"video": 0, "text": 0}
        self.provenance: list[str] = []

    # ------------------------------------------------------------------
    def adapter_for(self, level: int) -> AdapterSet:
        if self.cfg.variant == "unified":
            return self.adapters["shared"]
        return self.adapters[LEVEL_KEYS[level]]

    def clone_adapters(self, src_level: int, dst_level: int) -> None:
        """Curriculum hand-off: initialize one level's adapters from another's."""
        if self.cfg.variant == "unified":
            return
        src = self.adapter_for(src_level)
        dst = self.adapter_for(dst_level)
        dst.load_state_dict(src.state_dict())

    def reinit_adapters(self, level: int, seed: int) -> None:
        torch.manual_seed(seed)
        key = "shared" if self.cfg.variant == "unified" else LEVEL_KEYS[level]
        self.adapters[key] = AdapterSet(self.cfg)

    def freeze_mask(self) -> dict[str, bool]:
        """True = frozen backbone parameter, False = trainable adapter."""
        mask = {}
        for name, _ in self.named_parameters():
            mask[name] = name.startswith(("decoder.", "encoder."))
        return mask

    def trainable_parameters(self, levels: list[int] | None = None):
        keys = None
        if levels is not None and self.cfg.variant == "separate_per_level":
            keys = {LEVEL_KEYS[l] for l in levels}
        params = []
        for name, p in self.named_parameters():
            if name.startswith(("decoder.", "encoder.")):
                continue
            if keys is not None and not any(name.startswith(f"adapters.{k}.") for k in keys):
                continue
            params.append((name, p))
        return params

    # ------------------------------------------------------------------
    def _run_queries(self, adapter: AdapterSet, queries: torch.Tensor,
                     cross_blocks: nn.ModuleList, memory: torch.Tensor,
                     memory_mask: torch.Tensor | None) -> torch.Tensor:
        if self.cfg.alignment_kind == "plain_resampler":
            x = queries
            for i, block in enumerate(adapter.resampler_blocks):
                x = cross_blocks[i](x, memory, memory_mask=memory_mask)
                x = block(x)
            return adapter.resampler_ln(x)
        return self.encoder.forward_embeds(
            queries, cross_blocks=cross_blocks, memory=memory, memory_mask=memory_mask)

    def align(self, video_feats: torch.Tensor | None, video_mask: torch.Tensor | None,
              text_tokens: torch.Tensor | None, text_mask: torch.Tensor | None,
              level: int) -> torch.Tensor:
        """Produce the fixed-size joint embedding Z, shape (B, |Z|, D_z).

        Level 1 is the recursion base case: text input must be absent and Z
        carries only the video-query rows.  At levels 2-3 both branches run
        and their rows are concatenated.  A disabled branch (modality
        ablation) contributes zero rows of the same shape, so Z keeps its
        fixed row count.
        """
        cfg = self.cfg
        adapter = self.adapter_for(level)
        if level == 1 and text_tokens is not None:
            raise ValueError("level 1 is the recursion base case; text input must be empty")
        if video_feats is None or video_feats.shape[1] == 0:
            raise ValueError("empty video features")
        batch = video_feats.shape[0]

        if self.disabled_branch == BranchDisabled.VIDEO and level > 1:
            z_video = torch.zeros(batch, cfg.n_video_queries, cfg.d_model,
                                  dtype=video_feats.dtype, device=video_feats.device)
        else:
            self.branch_calls["video"] += 1
            memory = adapter.video_proj(video_feats)
            queries = adapter.video_queries[None].expand(batch, -1, -1)
            z_video = self._run_queries(adapter, queries, adapter.align_video_blocks,
                                        memory, video_mask)

        if level == 1:
            return z_video

        if self.disabled_branch == BranchDisabled.TEXT or text_tokens is None:
            z_text = torch.zeros(batch, cfg.n_text_queries, cfg.d_model,
                                 dtype=z_video.dtype, device=z_video.device)
        else:
            self.branch_calls["text"] += 1
            memory = self.encoder.embed_tokens(text_tokens, with_pos=False)
            queries = adapter.text_queries[None].expand(batch, -1, -1)
            z_text = self._run_queries(adapter, queries, adapter.align_text_blocks,
                                       memory, text_mask)
        return torch.cat([z_video, z_text], dim=1)

    def join_captions(self, texts: list[str]) -> list[int]:
        """SEP-joined token ids of lower-level captions, truncated to the cap."""
        return join_caption_ids(self.tokenizer, texts, self.cfg.max_align_text_tokens)
