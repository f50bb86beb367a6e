"""Teacher-forced likelihood and greedy/beam caption generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..textproc import BOS, EOS, PAD
from .bundle import ModelBundle


def cls_features(clips) -> np.ndarray:
    """Per-clip global vector: mean of the dense features over all cells."""
    if len(clips) == 0:
        raise ValueError("empty clip list")
    dense = np.stack([c.dense for c in clips])
    if dense.ndim != 5:
        raise ValueError(f"expected clip stack of dense 4-D features, got {dense.shape}")
    return dense.mean(axis=(1, 2, 3))


def pad_token_batch(seqs: list[list[int]], device=None) -> tuple[torch.Tensor, torch.Tensor]:
    max_len = max(len(s) for s in seqs)
    out = torch.full((len(seqs), max_len), PAD, dtype=torch.long, device=device)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long, device=device)
    return out, out != PAD


def pad_feature_batch(feats: list[np.ndarray], dtype=torch.float32,
                      device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack (n_i, D) arrays into (B, max_n, D) plus a keep-mask."""
    max_n = max(f.shape[0] for f in feats)
    d = feats[0].shape[1]
    out = torch.zeros(len(feats), max_n, d, dtype=dtype, device=device)
    mask = torch.zeros(len(feats), max_n, dtype=torch.bool, device=device)
    for i, f in enumerate(feats):
        out[i, : f.shape[0]] = torch.as_tensor(np.ascontiguousarray(f), dtype=dtype)
        mask[i, : f.shape[0]] = True
    return out, mask


@dataclass
class GenerationContract:
    level: int
    max_len: int
    decoding: str = "greedy"        # "greedy" or "beam"
    beam_width: int = 1
    prev_captions: list = field(default_factory=list)

    def validate(self, k_max: int) -> None:
        if self.level not in (1, 2, 3):
            raise ValueError(f"level must be 1, 2, or 3, got {self.level}")
        if self.max_len > k_max:
            raise ValueError(f"max_len {self.max_len} exceeds K_max {k_max}")
        if self.level == 1 and self.prev_captions:
            raise ValueError("level 1 takes no previous captions")
        if self.decoding not in ("greedy", "beam"):
            raise ValueError(f"unknown decoding {self.decoding!r}")
        if self.decoding == "beam" and self.beam_width < 1:
            raise ValueError("beam width must be >= 1")


def _decoder_logits(bundle: ModelBundle, level: int, z: torch.Tensor,
                    tokens: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
    adapter = bundle.adapter_for(level)
    if bundle.cfg.decoder_adaptation == "gated_crossattn":
        return bundle.decoder(tokens, pad_mask=pad_mask,
                              cross_blocks=adapter.dec_blocks, memory=z)
    prefix = adapter.prefix_proj(z)
    return bundle.decoder(tokens, pad_mask=pad_mask, prefix=prefix)


def decode_nll(bundle: ModelBundle, z: torch.Tensor, target_tokens: torch.Tensor,
               level: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Teacher-forced loss over a padded target batch.

    ``target_tokens`` (B, K) start with BOS and end with EOS before padding.
    Returns (summed NLL over non-PAD targets / batch, per-token log-probs
    (B, K-1) with PAD positions zeroed, and the raw logits).
    """
    if target_tokens.shape[1] < 2:
        raise ValueError("targets must contain at least BOS and EOS")
    if target_tokens.shape[1] > bundle.cfg.max_text_len + 2:
        raise ValueError("target longer than K_max")
    if (target_tokens[:, 0] != BOS).any():
        raise ValueError("targets must begin with BOS")
    inputs = target_tokens[:, :-1]
    targets = target_tokens[:, 1:]
    pad_mask = inputs != PAD
    logits = _decoder_logits(bundle, level, z, inputs, pad_mask)
    # float64 log-softmax so the loss factorization holds to 1e-6
    logprobs = torch.log_softmax(logits.to(torch.float64), dim=-1)
    token_ll = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    keep = targets != PAD
    token_ll = token_ll * keep
    loss = -token_ll.sum() / target_tokens.shape[0]
    return loss, token_ll, logits


def unconditional_logprobs(bundle: ModelBundle, target_tokens: torch.Tensor) -> torch.Tensor:
    """Frozen-backbone per-token log-probs for the same targets (no adapters)."""
    inputs = target_tokens[:, :-1]
    targets = target_tokens[:, 1:]
    logits = bundle.decoder(inputs, pad_mask=inputs != PAD)
    logprobs = torch.log_softmax(logits.to(torch.float64), dim=-1)
    token_ll = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return token_ll * (targets != PAD)


@torch.no_grad()
def greedy_generate(bundle: ModelBundle, z: torch.Tensor, level: int,
                    max_len: int) -> list[list[int]]:
    """Batched greedy decoding from BOS until EOS or max_len tokens.

    PAD is never emitted; argmax ties break toward the lowest token id.
    """
    batch = z.shape[0]
    tokens = torch.full((batch, 1), BOS, dtype=torch.long)
    done = torch.zeros(batch, dtype=torch.bool)
    for _ in range(max_len):
        logits = _decoder_logits(bundle, level, z, tokens, tokens != PAD)
        step = logits[:, -1, :].clone()
        step[:, PAD] = float("-inf")
        nxt = step.argmax(dim=-1)
        nxt = torch.where(done, torch.full_like(nxt, PAD), nxt)
        tokens = torch.cat([tokens, nxt[:, None]], dim=1)
        done = done | (nxt == EOS)
        if bool(done.all()):
            break
    out = []
    for row in tokens.tolist():
        seq = []
        for t in row[1:]:
            if t in (EOS, PAD):
                break
            seq.append(t)
        out.append(seq)
    return out


@torch.no_grad()
def beam_generate(bundle: ModelBundle, z: torch.Tensor, level: int,
                  max_len: int, width: int) -> list[list[int]]:
    """Length-normalized beam search, one sequence at a time.

    Deterministic: candidates sort by (score desc, token ids asc).
    """
    results = []
    for b in range(z.shape[0]):
        zb = z[b : b + 1]
        beams: list[tuple[float, list[int], bool]] = [(0.0, [BOS], False)]
        for _ in range(max_len):
            candidates: list[tuple[float, list[int], bool]] = []
            for score, seq, finished in beams:
                if finished:
                    candidates.append((score, seq, True))
                    continue
                tokens = torch.tensor([seq], dtype=torch.long)
                logits = _decoder_logits(bundle, level, zb, tokens, tokens != PAD)
                logprobs = torch.log_softmax(logits[0, -1], dim=-1)
                logprobs[PAD] = float("-inf")
                top = torch.topk(logprobs, min(width, logprobs.shape[0]))
                for lp, tok in zip(top.values.tolist(), top.indices.tolist()):
                    candidates.append((score + lp, seq + [tok], tok == EOS))
            candidates.sort(key=lambda c: (-c[0] / max(1, len(c[1]) - 1), c[1]))
            beams = candidates[:width]
            if all(f for _, _, f in beams):
                break
        best = beams[0][1]
        seq = []
        for t in best[1:]:
            if t in (EOS, PAD):
                break
            seq.append(t)
        results.append(seq)
    return results


def generate(bundle: ModelBundle, z: torch.Tensor,
             contract: GenerationContract) -> list[list[int]]:
    contract.validate(bundle.cfg.max_text_len)
    if contract.decoding == "greedy" or contract.beam_width == 1:
        return greedy_generate(bundle, z, contract.level, contract.max_len)
    return beam_generate(bundle, z, contract.level, contract.max_len, contract.beam_width)
