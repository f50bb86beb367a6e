"""Shared transformer building blocks.

Everything is written with plain linear layers and explicit attention so the
same modules run in float64 for finite-difference gradient checks.  Dropout
is intentionally absent: the whole pipeline is deterministic by contract.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.o_proj = nn.Linear(d_model, d_model)

    def forward(self, query: torch.Tensor, memory: torch.Tensor,
                key_padding_mask: torch.Tensor | None = None,
                causal: bool = False) -> torch.Tensor:
        """query: (B, Tq, D); memory: (B, Tk, D); key_padding_mask: (B, Tk) True=keep."""
        b, tq, _ = query.shape
        tk = memory.shape[1]
        q = self.q_proj(query).view(b, tq, self.heads, self.d_head).transpose(1, 2)
        k = self.k_proj(memory).view(b, tk, self.heads, self.d_head).transpose(1, 2)
        v = self.v_proj(memory).view(b, tk, self.heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if causal:
            mask = torch.ones(tq, tk, dtype=torch.bool, device=scores.device).tril()
            scores = scores.masked_fill(~mask, float("-inf"))
        if key_padding_mask is not None:
            keep = key_padding_mask[:, None, None, :]
            scores = scores.masked_fill(~keep, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, tq, -1)
        return self.o_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, mult: int = 4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, mult * d_model),
            nn.GELU(),
            nn.Linear(mult * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TransformerBlock(nn.Module):
    """Pre-LN self-attention block; causal flag chosen by the caller."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor | None = None,
                causal: bool = False) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, key_padding_mask=key_padding_mask, causal=causal)
        x = x + self.ff(self.ln2(x))
        return x


class GatedCrossAttentionBlock(nn.Module):
    """Trainable cross-attention + feed-forward, each behind a tanh gate.

    With gates at zero the block is an exact identity, so an adapted decoder
    reproduces its frozen backbone bit-for-bit at initialization.
    """

    def __init__(self, d_model: int, heads: int, gate_init: float = 0.0):
        super().__init__()
        self.ln_attn = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.gate_attn = nn.Parameter(torch.tensor(float(gate_init)))
        self.ln_ff = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model)
        self.gate_ff = nn.Parameter(torch.tensor(float(gate_init)))

    def forward(self, x: torch.Tensor, memory: torch.Tensor,
                memory_mask: torch.Tensor | None = None) -> torch.Tensor:
        x = x + torch.tanh(self.gate_attn) * self.attn(
            self.ln_attn(x), memory, key_padding_mask=memory_mask)
        x = x + torch.tanh(self.gate_ff) * self.ff(self.ln_ff(x))
        return x


class CrossAttentionAdapter(nn.Module):
    """Ungated trainable cross-attention block for the alignment encoder."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.ln = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.ln_ff = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model)

    def forward(self, x: torch.Tensor, memory: torch.Tensor,
                memory_mask: torch.Tensor | None = None) -> torch.Tensor:
        x = x + self.attn(self.ln(x), memory, key_padding_mask=memory_mask)
        x = x + self.ff(self.ln_ff(x))
        return x
