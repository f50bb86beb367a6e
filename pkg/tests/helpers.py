"""Shared test fixtures: tiny untrained bundles and micro corpora."""

from __future__ import annotations

import torch

from hiercap.modeling import BidirectionalEncoder, CausalLM, ModelBundle, ModelConfig
from hiercap.textproc import Tokenizer

MICRO_WORDS = [
    "c", "picks", "places", "cuts", "the", "knife", "bowl", "pan",
    "cleans", "shelf", "using", "cloth", ".", "hosts", "a", "dinner",
]


def micro_tokenizer() -> Tokenizer:
    return Tokenizer.from_corpus([" ".join(MICRO_WORDS)])


def make_bundle(seed: int = 0, tokenizer: Tokenizer | None = None,
                **cfg_overrides) -> ModelBundle:
    """Untrained bundle with randomly initialized (then frozen) backbones."""
    tokenizer = tokenizer or micro_tokenizer()
    defaults = dict(
        feature_dim=8, d_model=16, n_video_queries=4, n_text_queries=4,
        decoder_layers=2, alignment_layers=1, heads=2, max_text_len=12,
    )
    defaults.update(cfg_overrides)
    cfg = ModelConfig(**defaults)
    torch.manual_seed(seed)
    decoder = CausalLM(tokenizer.vocab_size, cfg.d_model, cfg.decoder_layers,
                       cfg.heads, cfg.max_pos)
    encoder = BidirectionalEncoder(tokenizer.vocab_size, cfg.d_model,
                                   cfg.alignment_layers, cfg.heads, cfg.max_pos)
    for p in decoder.parameters():
        p.requires_grad_(False)
    for p in encoder.parameters():
        p.requires_grad_(False)
    decoder.eval()
    encoder.eval()
    return ModelBundle(cfg, tokenizer, decoder, encoder, seed=seed)
