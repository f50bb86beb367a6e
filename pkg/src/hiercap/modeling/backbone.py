"""Tiny in-repo pretrained backbones.

`CausalLM` is the frozen text decoder; `BidirectionalEncoder` is the frozen
alignment encoder.  Both are pretrained on the synthetic caption corpus and
then frozen, standing in for large off-the-shelf language models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from ..textproc import PAD, Tokenizer
from .layers import TransformerBlock


class CausalLM(nn.Module):
    def __init__(self, vocab_size: int, d_model: int, layers: int, heads: int,
                 max_pos: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_pos = max_pos
        self.tok_emb = nn.Embedding(vocab_size, d_model)
        self.pos_emb = nn.Embedding(max_pos, d_model)
        self.blocks = nn.ModuleList(TransformerBlock(d_model, heads) for _ in range(layers))
        self.ln_f = nn.LayerNorm(d_model)
        self.lm_head = nn.Linear(d_model, vocab_size, bias=False)

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        if int(tokens.max()) >= self.vocab_size or int(tokens.min()) < 0:
            raise ValueError("token id out of vocabulary")
        t = tokens.shape[1]
        if t > self.max_pos:
            raise ValueError(f"sequence length {t} exceeds max positions {self.max_pos}")
        pos = torch.arange(t, device=tokens.device)
        return self.tok_emb(tokens) + self.pos_emb(pos)[None]

    def forward(self, tokens: torch.Tensor,
                pad_mask: torch.Tensor | None = None,
                cross_blocks: nn.ModuleList | None = None,
                memory: torch.Tensor | None = None,
                memory_mask: torch.Tensor | None = None,
                prefix: torch.Tensor | None = None) -> torch.Tensor:
        """Return next-token logits (B, T, V) for the token positions only.

        `cross_blocks` are inserted before each decoder layer and attend to
        `memory`.  `prefix` embeddings, when given, are prepended to the
        input sequence and their output positions are dropped.
        """
        n_prefix = 0
        if prefix is None:
            x = self.embed(tokens)
        else:
            n_prefix = prefix.shape[1]
            if tokens.shape[1] + n_prefix > self.max_pos:
                raise ValueError("prefix plus sequence exceeds max positions")
            if int(tokens.max()) >= self.vocab_size or int(tokens.min()) < 0:
                raise ValueError("token id out of vocabulary")
            pos_p = torch.arange(n_prefix, device=tokens.device)
            pos_t = torch.arange(n_prefix, n_prefix + tokens.shape[1], device=tokens.device)
            x = torch.cat(
                [prefix + self.pos_emb(pos_p)[None],
                 self.tok_emb(tokens) + self.pos_emb(pos_t)[None]], dim=1)
        keep = None
        if pad_mask is not None:
            keep = pad_mask
            if n_prefix:
                ones = torch.ones(tokens.shape[0], n_prefix, dtype=torch.bool,
                                  device=tokens.device)
                keep = torch.cat([ones, pad_mask], dim=1)
        for i, block in enumerate(self.blocks):
            if cross_blocks is not None and memory is not None:
                x = cross_blocks[i](x, memory, memory_mask=memory_mask)
            x = block(x, key_padding_mask=keep, causal=True)
        x = self.ln_f(x)
        logits = self.lm_head(x)
        return logits[:, n_prefix:]


class BidirectionalEncoder(nn.Module):
    def __init__(self, vocab_size: int, d_model: int, layers: int, heads: int,
                 max_pos: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_pos = max_pos
        self.tok_emb = nn.Embedding(vocab_size, d_model)
        self.pos_emb = nn.Embedding(max_pos, d_model)
        self.blocks = nn.ModuleList(TransformerBlock(d_model, heads) for _ in range(layers))
        self.ln_f = nn.LayerNorm(d_model)
        self.mlm_head = nn.Linear(d_model, vocab_size, bias=False)

    def embed_tokens(self, tokens: torch.Tensor, with_pos: bool = True) -> torch.Tensor:
        x = self.tok_emb(tokens)
        if with_pos:
            pos = torch.arange(tokens.shape[1], device=tokens.device)
            x = x + self.pos_emb(pos)[None]
        return x

    def forward_embeds(self, x: torch.Tensor,
                       pad_mask: torch.Tensor | None = None,
                       cross_blocks: nn.ModuleList | None = None,
                       memory: torch.Tensor | None = None,
                       memory_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Run input embeddings through the encoder stack; returns hidden states."""
        pos = torch.arange(x.shape[1], device=x.device)
        x = x + self.pos_emb(pos)[None]
        for i, block in enumerate(self.blocks):
            if cross_blocks is not None and memory is not None:
                x = cross_blocks[i](x, memory, memory_mask=memory_mask)
            x = block(x, key_padding_mask=pad_mask, causal=False)
        return self.ln_f(x)

    def forward_mlm(self, tokens: torch.Tensor,
                    pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        x = self.embed_tokens(tokens, with_pos=False)
        h = self.forward_embeds(x, pad_mask=pad_mask)
        return self.mlm_head(h)


@dataclass
class PretrainFailure(RuntimeError):
    """Backbone pretraining missed its perplexity target."""

    message: str
    curve: list[float] = field(default_factory=list)

    def __str__(self) -> str:
        return f"{self.message} (loss curve: {self.curve})"


def _pad_batch(seqs: list[list[int]], device) -> tuple[torch.Tensor, torch.Tensor]:
    max_len = max(len(s) for s in seqs)
    tokens = torch.full((len(seqs), max_len), PAD, dtype=torch.long, device=device)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = torch.tensor(s, dtype=torch.long, device=device)
    return tokens, tokens != PAD


def lm_nll(model: CausalLM, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean per-token negative log likelihood, PAD targets excluded."""
    logits = model(tokens[:, :-1], pad_mask=tokens[:, :-1] != PAD)
    targets = tokens[:, 1:]
    mask = targets != PAD
    logprobs = torch.log_softmax(logits, dim=-1)
    token_ll = logprobs.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    nll = -(token_ll * mask).sum() / mask.sum()
    return nll, mask


def pretrain_frozen_lm(
    texts: list[str],
    tokenizer: Tokenizer,
    d_model: int,
    decoder_layers: int,
    alignment_layers: int,
    heads: int,
    max_pos: int,
    seed: int = 0,
    epochs: int = 3,
    batch_size: int = 64,
    lr: float = 1e-3,
    ppl_threshold: float = 20.0,
    mask_rate: float = 0.15,
    min_texts: int = 10_000,
) -> tuple[CausalLM, BidirectionalEncoder, dict]:
    """Pretrain and freeze the two backbones on corpus caption strings.

    The decoder is trained as a causal LM to perplexity below
    ``ppl_threshold``; the encoder with masked-token reconstruction on the
    same corpus.  Raises :class:`PretrainFailure` when the decoder misses
    its target within ``epochs``.
    """
    if len(texts) < min_texts:
        raise ValueError(
            f"need >= {min_texts} corpus strings for pretraining, got {len(texts)}")
    device = torch.device("cpu")
    g = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)

    decoder = CausalLM(tokenizer.vocab_size, d_model, decoder_layers, heads, max_pos)
    encoder = BidirectionalEncoder(tokenizer.vocab_size, d_model, alignment_layers, heads, max_pos)
    encoded = [tokenizer.encode(t)[:max_pos] for t in texts]

    curve: list[float] = []
    opt = torch.optim.AdamW(decoder.parameters(), lr=lr)
    final_ppl = float("inf")
    for epoch in range(epochs):
        order = torch.randperm(len(encoded), generator=g).tolist()
        total, count = 0.0, 0
        for i in range(0, len(order), batch_size):
            batch = [encoded[j] for j in order[i : i + batch_size]]
            tokens, _ = _pad_batch(batch, device)
            nll, mask = lm_nll(decoder, tokens)
            opt.zero_grad()
            nll.backward()
            opt.step()
            total += float(nll.detach()) * int(mask.sum())
            count += int(mask.sum())
        epoch_nll = total / count
        curve.append(epoch_nll)
        final_ppl = float(torch.exp(torch.tensor(epoch_nll)))
        if final_ppl <= ppl_threshold:
            break
    if final_ppl > ppl_threshold:
        raise PretrainFailure(
            message=f"decoder perplexity {final_ppl:.2f} above threshold {ppl_threshold}",
            curve=curve,
        )

    from ..textproc import UNK

    mlm_curve: list[float] = []
    opt = torch.optim.AdamW(encoder.parameters(), lr=lr)
    for epoch in range(epochs):
        order = torch.randperm(len(encoded), generator=g).tolist()
        total, count = 0.0, 0
        for i in range(0, len(order), batch_size):
            batch = [encoded[j] for j in order[i : i + batch_size]]
            tokens, pad_mask = _pad_batch(batch, device)
            mask = (torch.rand(tokens.shape, generator=g) < mask_rate) & pad_mask
            if not mask.any():
                continue
            corrupted = tokens.masked_fill(mask, UNK)
            logits = encoder.forward_mlm(corrupted, pad_mask=pad_mask)
            loss = nn.functional.cross_entropy(
                logits[mask], tokens[mask])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * int(mask.sum())
            count += int(mask.sum())
        mlm_curve.append(total / max(1, count))

    for p in decoder.parameters():
        p.requires_grad_(False)
    for p in encoder.parameters():
        p.requires_grad_(False)
    decoder.eval()
    encoder.eval()
    report = {
        "decoder_nll_curve": curve,
        "decoder_perplexity": final_ppl,
        "encoder_mlm_curve": mlm_curve,
    }
    return decoder, encoder, report
