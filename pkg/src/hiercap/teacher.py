"""Text-to-text teacher: pair building, training, pseudo-annotation minting.

The teacher is a text-only conditional captioner built on the same frozen
backbones: its alignment video branch is disabled and fed a zero placeholder,
so the instrumented video-branch counter stays at zero for its whole life.
It learns to map separator-joined lower-level captions of a window to the
window's higher-level description, then mints pseudo records over freshly
sampled windows of varying width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .datagen.records import SEGMENT_WINDOW_CLIPS, CaptionRecord
from .metrics import CorpusIdf, EvalPair, cider_d, meteor_exact, rouge_l
from .modeling.bundle import BranchDisabled, ModelBundle, join_caption_ids
from .modeling.generation import decode_nll, greedy_generate, pad_token_batch
from .textproc import BOS, EOS, tokenize
from .training.batching import TrainingCorpus
from .training.stages import NumericError, cosine_lr

# Desk-scale pseudo:manual ratios per level, echoing the source counts the
# method was introduced with (~5:1 for segments, ~2:1 for summaries).
PSEUDO_RATIO = {2: 5, 3: 2}


@dataclass(frozen=True)
class TeacherPair:
    video_id: str
    level: int
    t_start: int
    t_end: int
    input_text: str
    target_text: str


@dataclass
class TeacherConfig:
    level: int = 2
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    held_out_fraction: float = 0.1
    min_pairs: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.level not in (2, 3):
            raise ValueError("teacher level must be 2 or 3")
        if not 0.0 < self.held_out_fraction < 1.0:
            raise ValueError("held_out_fraction must be in (0, 1)")


class TeacherModel:
    """Thin wrapper binding a bundle to text-only conditioning at one level."""

    def __init__(self, bundle: ModelBundle, level: int):
        bundle.disabled_branch = BranchDisabled.VIDEO
        self.bundle = bundle
        self.level = level

    def _align(self, input_texts: list[str]) -> torch.Tensor:
        cfg = self.bundle.cfg
        seqs = [join_caption_ids(self.bundle.tokenizer, [t], cfg.max_align_text_tokens)
                for t in input_texts]
        padded = [s if s else [0] for s in seqs]
        tokens, mask = pad_token_batch(padded)
        for j, s in enumerate(seqs):
            if not s:
                mask[j] = False
        dummy = torch.zeros(len(seqs), 1, cfg.feature_dim)
        return self.bundle.align(dummy, None, tokens, mask, level=self.level)

    def loss(self, input_texts: list[str], target_texts: list[str]) -> torch.Tensor:
        targets = self._encode_targets(target_texts)
        z = self._align(input_texts)
        loss, _, _ = decode_nll(self.bundle, z, targets, level=self.level)
        return loss

    def _encode_targets(self, texts: list[str]) -> torch.Tensor:
        cap = self.bundle.cfg.max_text_len
        seqs = []
        for t in texts:
            body = self.bundle.tokenizer.encode(t, add_special=False)[:cap]
            seqs.append([BOS, *body, EOS])
        tokens, _ = pad_token_batch(seqs)
        return tokens

    @torch.no_grad()
    def generate(self, input_texts: list[str]) -> list[str]:
        z = self._align(input_texts)
        seqs = greedy_generate(self.bundle, z, self.level, self.bundle.cfg.max_text_len)
        return [self.bundle.tokenizer.decode(s) for s in seqs]

    @torch.no_grad()
    def score(self, input_texts: list[str], target_texts: list[str]) -> list[float]:
        """Mean per-token log-prob of each target under the teacher."""
        z = self._align(input_texts)
        out = []
        for i, text in enumerate(target_texts):
            targets = self._encode_targets([text])
            _, token_ll, _ = decode_nll(self.bundle, z[i : i + 1], targets,
                                        level=self.level)
            keep = targets[:, 1:] != 0
            out.append(float(token_ll.sum() / keep.sum()))
        return out


def _widest_overlap(records: list[CaptionRecord], t_start: int,
                    t_end: int) -> CaptionRecord | None:
    """The ground-truth record overlapping the window most; ties go to the
    earlier record."""
    best = None
    best_overlap = 0
    for rec in sorted(records, key=lambda r: (r.t_start, r.t_end)):
        overlap = min(t_end, rec.t_end) - max(t_start, rec.t_start)
        if overlap > best_overlap:
            best, best_overlap = rec, overlap
    return best


def _sample_windows(rng: np.random.Generator, n_clips: int, nominal: int,
                    count: int) -> list[tuple[int, int]]:
    """Windows of width uniform in 0.5x-1.5x the nominal, clamped to the video."""
    windows = []
    for _ in range(count):
        width = max(1, int(round(float(rng.uniform(0.5, 1.5)) * nominal)))
        width = min(width, n_clips)
        start = int(rng.integers(0, n_clips - width + 1))
        windows.append((start, start + width))
    return windows


def _nominal_width(level: int, n_clips: int) -> int:
    return SEGMENT_WINDOW_CLIPS if level == 2 else n_clips


def _joined_input(prev: list[CaptionRecord], t_start: int, t_end: int) -> str:
    hits = [r for r in prev if r.t_start < t_end and t_start < r.t_end]
    hits.sort(key=lambda r: (r.t_start, r.t_end))
    return " ".join(r.text for r in hits)


def build_teacher_pairs(corpus: TrainingCorpus, level: int,
                        spans_per_video: int = 8, split: str = "train",
                        seed: int = 0) -> list[TeacherPair]:
    """One pair per ground-truth record plus varying-width sampled windows."""
    if level not in (2, 3):
        raise ValueError("teacher pairs exist for levels 2 and 3 only")
    targets = corpus.records(split, level, ("ground_truth",))
    lower = corpus.records(split, level - 1, ("ground_truth",))
    if not targets or not lower:
        raise ValueError(f"corpus lacks ground truth at levels {level - 1} and {level}")
    lower_by_video: dict[str, list[CaptionRecord]] = {}
    for rec in lower:
        lower_by_video.setdefault(rec.video_id, []).append(rec)
    targets_by_video: dict[str, list[CaptionRecord]] = {}
    for rec in targets:
        targets_by_video.setdefault(rec.video_id, []).append(rec)

    pairs = []
    for rec in targets:
        inp = _joined_input(lower_by_video.get(rec.video_id, []),
                            rec.t_start, rec.t_end)
        if not inp:
            continue
        pairs.append(TeacherPair(rec.video_id, level, rec.t_start, rec.t_end,
                                 inp, rec.text))
    rng = np.random.default_rng([seed, level])
    for video_id in corpus.video_ids(split):
        n_clips = corpus.feature_view(video_id).n_clips
        nominal = _nominal_width(level, n_clips)
        for (s, e) in _sample_windows(rng, n_clips, nominal, spans_per_video):
            target = _widest_overlap(targets_by_video.get(video_id, []), s, e)
            if target is None:
                continue
            inp = _joined_input(lower_by_video.get(video_id, []), s, e)
            if not inp:
                continue
            pairs.append(TeacherPair(video_id, level, s, e, inp, target.text))
    return pairs


def _eval_pairs(teacher: TeacherModel, pairs: list[TeacherPair]) -> dict:
    outputs = []
    for i in range(0, len(pairs), 64):
        chunk = pairs[i : i + 64]
        outputs.extend(teacher.generate([p.input_text for p in chunk]))
    eval_pairs = [EvalPair(candidate=tokenize(o or "<empty>"),
                           references=[tokenize(p.target_text)])
                  for o, p in zip(outputs, pairs)]
    idf = CorpusIdf.from_references([p.references for p in eval_pairs])
    _, cider = cider_d(eval_pairs, idf)
    return {
        "CIDEr": cider,
        "ROUGE-L": sum(rouge_l(p) for p in eval_pairs) / len(eval_pairs),
        "METEOR-x": sum(meteor_exact(p) for p in eval_pairs) / len(eval_pairs),
        "n": len(eval_pairs),
    }


@dataclass
class TeacherReport:
    train_scores: dict = field(default_factory=dict)
    held_out_scores: dict = field(default_factory=dict)
    losses: list[float] = field(default_factory=list)


def train_teacher(bundle: ModelBundle, pairs: list[TeacherPair],
                  cfg: TeacherConfig) -> tuple[TeacherModel, TeacherReport]:
    """Finetune the text-only teacher adapters to maximize target likelihood."""
    if len(pairs) < cfg.min_pairs:
        raise ValueError(f"need >= {cfg.min_pairs} pairs, got {len(pairs)}")
    teacher = TeacherModel(bundle, cfg.level)
    rng = np.random.default_rng([cfg.seed, len(pairs)])
    order = rng.permutation(len(pairs))
    n_held = max(1, int(round(len(pairs) * cfg.held_out_fraction)))
    held_out = [pairs[i] for i in order[:n_held]]
    train = [pairs[i] for i in order[n_held:]]

    params = [p for _, p in bundle.trainable_parameters([cfg.level])]
    optimizer = torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.betas,
                                  weight_decay=cfg.weight_decay)
    n_batches = math.ceil(len(train) / cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    report = TeacherReport()
    step = 0
    for _ in range(cfg.epochs):
        epoch_order = rng.permutation(len(train))
        for b in range(n_batches):
            idx = epoch_order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = [train[i] for i in idx]
            lr = cosine_lr(cfg.lr, step, total_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            loss = teacher.loss([p.input_text for p in batch],
                                [p.target_text for p in batch])
            if not torch.isfinite(loss):
                raise NumericError("non-finite teacher loss",
                                   {"step": step, "lr": lr, "loss": float(loss)})
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            optimizer.step()
            report.losses.append(float(loss.detach()))
            step += 1

    report.train_scores = _eval_pairs(teacher, train[: max(len(held_out), 1)])
    report.held_out_scores = _eval_pairs(teacher, held_out)
    return teacher, report


def generate_pseudo(teacher: TeacherModel, corpus: TrainingCorpus,
                    level: int, n_target: int | None = None,
                    split: str = "train", seed: int = 0) -> list[CaptionRecord]:
    """Mint pseudo-annotations over freshly sampled varying-width windows."""
    lower = corpus.records(split, level - 1, ("ground_truth",))
    lower_by_video: dict[str, list[CaptionRecord]] = {}
    for rec in lower:
        lower_by_video.setdefault(rec.video_id, []).append(rec)
    video_ids = corpus.video_ids(split)
    if n_target is None:
        n_target = PSEUDO_RATIO[level] * len(corpus.records(split, level,
                                                            ("ground_truth",)))

    rng = np.random.default_rng([seed, level, n_target])
    jobs: list[tuple[str, int, int]] = []
    v = 0
    max_attempts = 50 * max(n_target, 1)
    while len(jobs) < n_target:
        if v >= max_attempts:
            raise ValueError("could not sample enough windows with lower-level text")
        video_id = video_ids[v % len(video_ids)]
        v += 1
        n_clips = corpus.feature_view(video_id).n_clips
        nominal = _nominal_width(level, n_clips)
        (s, e), = _sample_windows(rng, n_clips, nominal, 1)
        if not _joined_input(lower_by_video.get(video_id, []), s, e):
            continue
        jobs.append((video_id, s, e))

    records = []
    for i in range(0, len(jobs), 64):
        chunk = jobs[i : i + 64]
        inputs = [_joined_input(lower_by_video.get(vid, []), s, e)
                  for vid, s, e in chunk]
        texts = teacher.generate(inputs)
        texts = [t if t.strip() else "<empty>" for t in texts]
        scores = teacher.score(inputs, texts)
        for (vid, s, e), text, score in zip(chunk, texts, scores):
            rec = CaptionRecord(video_id=vid, level=level, t_start=s, t_end=e,
                                text=text, source="teacher_pseudo",
                                teacher_score=score)
            rec.validate()
            records.append(rec)
    return records


def mix_datasets(manual: list[CaptionRecord], pseudo: list[CaptionRecord],
                 ratio_cap: float | None = None, seed: int = 0) -> list[CaptionRecord]:
    """Union manual and pseudo records, capping pseudo at ratio_cap x manual.

    Every manual record survives the mix (the per-epoch floor), and the
    result is independent of input ordering for a given seed.
    """
    manual = sorted(manual, key=lambda r: (r.video_id, r.t_start, r.t_end, r.text))
    pseudo = sorted(pseudo, key=lambda r: (r.video_id, r.t_start, r.t_end, r.text))
    for rec in pseudo:
        if rec.source == "ground_truth":
            raise ValueError("pseudo list contains ground-truth records")
    if ratio_cap is not None:
        cap = int(ratio_cap * len(manual))
        if cap < len(pseudo):
            rng = np.random.default_rng([seed, len(pseudo)])
            idx = sorted(rng.choice(len(pseudo), size=cap, replace=False))
            pseudo = [pseudo[i] for i in idx]
    return manual + pseudo
