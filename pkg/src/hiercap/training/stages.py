"""Single-stage training: optimizer, cosine schedule, logging, checkpointing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..datagen.records import CaptionRecord
from ..modeling.bundle import ModelBundle
from ..modeling.checkpoint import save_bundle
from ..modeling.generation import decode_nll
from ..modeling.recursion import caption_level
from .batching import BatchSource, TrainingCorpus, alternate_batches, collate

STAGES = ("CLIP", "SEGMENT", "SUMMARY")
STAGE_LEVEL = {"CLIP": 1, "SEGMENT": 2, "SUMMARY": 3}


class NumericError(RuntimeError):
    """Non-finite loss; carries the training state at the failure point."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {json.dumps(diagnostics, sort_keys=True)}")
        self.diagnostics = diagnostics


@dataclass
class StageConfig:
    stage: str
    epochs: int
    batch_size: int
    lr: float = 3e-5
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    init_from_previous: bool = True  # separate variant: clone prior level's adapters

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    @property
    def level(self) -> int:
        return STAGE_LEVEL[self.stage]


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """lr * 0.5 * (1 + cos(pi * step / total_steps)); exactly 0 at the end."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def make_optimizer(bundle: ModelBundle, cfg: StageConfig) -> torch.optim.AdamW:
    """AdamW over the stage's trainable adapter parameters only."""
    params = [p for _, p in bundle.trainable_parameters([cfg.level])]
    if not params:
        raise ValueError("no trainable parameters for this stage")
    return torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.betas,
                             weight_decay=cfg.weight_decay)


@dataclass
class StageResult:
    stage: str
    steps: int
    logs: list[dict] = field(default_factory=list)
    batch_counts: dict[str, int] = field(default_factory=dict)
    final_loss: float = float("nan")
    checkpoint_path: str | None = None


def run_stage(bundle: ModelBundle, cfg: StageConfig, sources: list[BatchSource],
              corpus: TrainingCorpus, log_path: str | Path | None = None,
              checkpoint_path: str | Path | None = None) -> StageResult:
    """Train one curriculum stage over shuffled (possibly alternating) batches.

    The cosine schedule runs from ``cfg.lr`` down to 0 across the whole
    stage.  A non-finite loss aborts with diagnostics instead of silently
    corrupting the adapters.
    """
    if not sources:
        raise ValueError("stage has no data sources")
    if cfg.stage == "CLIP" and any(s.level != 1 for s in sources):
        raise ValueError("CLIP stage uses only level-1 data")
    torch.manual_seed(cfg.seed)
    optimizer = make_optimizer(bundle, cfg)
    rounds = max(s.n_batches for s in sources)
    total_steps = cfg.epochs * rounds * len(sources)

    result = StageResult(stage=cfg.stage, steps=total_steps)
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        step = 0
        for _ in range(cfg.epochs):
            for source_id, batch in alternate_batches(sources):
                lr = cosine_lr(cfg.lr, step, total_steps)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                video_feats, video_mask, text_tokens, text_mask, targets = collate(
                    batch, corpus)
                z = bundle.align(video_feats, video_mask, text_tokens, text_mask,
                                 level=batch[0].level)
                loss, _, _ = decode_nll(bundle, z, targets, level=batch[0].level)
                if not torch.isfinite(loss):
                    raise NumericError("non-finite loss", {
                        "stage": cfg.stage, "step": step, "source_id": source_id,
                        "lr": lr, "loss": float(loss.detach()),
                    })
                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(
                    [p for g in optimizer.param_groups for p in g["params"]],
                    cfg.grad_clip)
                optimizer.step()

                entry = {"step": step, "stage": cfg.stage, "source_id": source_id,
                         "loss": float(loss.detach()), "lr": lr}
                result.logs.append(entry)
                if log_fh is not None:
                    log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                result.final_loss = entry["loss"]
                step += 1
    finally:
        if log_fh is not None:
            log_fh.close()
    result.batch_counts = {s.source_id: s.batches_served for s in sources}

    if checkpoint_path is not None:
        bundle.provenance.append(f"stage:{cfg.stage}")
        save_bundle(bundle, checkpoint_path)
        result.checkpoint_path = str(checkpoint_path)
    return result


def regenerate_inputs(bundle: ModelBundle, corpus: TrainingCorpus, level: int,
                      split: str = "train",
                      prev_sources: tuple[str, ...] = ("model",),
                      batch_size: int = 128) -> list[CaptionRecord]:
    """Extract model captions for one level over a split.

    The records are tagged ``source=model`` and feed the next stage's text
    inputs; ground truth is never overwritten.
    """
    prev_by_video: dict[str, list[CaptionRecord]] = {}
    if level > 1:
        for rec in corpus.records(split, level - 1, prev_sources):
            prev_by_video.setdefault(rec.video_id, []).append(rec)
    out: list[CaptionRecord] = []
    for video_id in corpus.video_ids(split):
        prev = prev_by_video.get(video_id, [])
        out.extend(caption_level(bundle, corpus.feature_view(video_id), level,
                                 prev, batch_size=batch_size))
    return out
