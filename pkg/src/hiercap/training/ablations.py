"""Ablation harnesses: input modality, curriculum arms, teacher, alignment."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Callable

from ..modeling.bundle import BranchDisabled, ModelBundle
from .batching import TrainingCorpus
from .curriculum import CurriculumPlan, StageConfig, run_curriculum

MODALITY_ARMS = ("video_only", "text_only", "video_text")
CURRICULUM_ARMS = (
    "init_segment", "caption_segment",
    "init_video", "caption_video", "caption_segment_video",
)
ALIGNMENT_ARMS = ("lm_frozen_crossattn", "plain_resampler", "input_prefix_only")

# A bundle factory builds a fresh bundle (new adapters, shared frozen
# backbones) for the given config overrides and seed.
BundleFactory = Callable[[dict, int], ModelBundle]


@dataclass
class ArmRun:
    arm: str
    seed: int
    scores: dict[int, dict]  # level -> LevelScores.as_dict()


@dataclass
class AblationTable:
    name: str
    runs: list[ArmRun] = field(default_factory=list)
    trends: dict[str, bool] = field(default_factory=dict)

    def mean(self, arm: str, level: int, metric: str = "CIDEr") -> float:
        vals = [r.scores[level][metric] for r in self.runs if r.arm == arm]
        if not vals:
            raise KeyError(f"no runs for arm {arm!r} at level {level}")
        return statistics.fmean(vals)

    def sd(self, arm: str, level: int, metric: str = "CIDEr") -> float:
        vals = [r.scores[level][metric] for r in self.runs if r.arm == arm]
        return statistics.stdev(vals) if len(vals) > 1 else 0.0

    def rows(self, level: int, metric: str = "CIDEr") -> list[dict]:
        arms = []
        for run in self.runs:
            if run.arm not in arms and level in run.scores:
                arms.append(run.arm)
        return [{"arm": a, "level": level, "metric": metric,
                 "mean": self.mean(a, level, metric), "sd": self.sd(a, level, metric)}
                for a in arms]


def branch_parameter_names(bundle: ModelBundle, level: int, branch: str) -> list[str]:
    """Adapter parameter names belonging to one alignment branch."""
    if branch not in (BranchDisabled.VIDEO, BranchDisabled.TEXT):
        raise ValueError(f"branch must be video or text, got {branch!r}")
    markers = (("video_proj", "video_queries", "align_video_blocks")
               if branch == BranchDisabled.VIDEO
               else ("text_queries", "align_text_blocks"))
    names = []
    for name, _ in bundle.trainable_parameters([level]):
        if any(f".{m}." in name or name.endswith(m) for m in markers):
            names.append(name)
    return names


def _arm_plan(stages: list[StageConfig], seed: int) -> CurriculumPlan:
    # Ablation arms condition on ground-truth lower-level text so every arm
    # sees identical inputs and only the manipulated factor differs.
    return CurriculumPlan(stages=stages, text_source="ground_truth", seed=seed)


def _seeded(cfg: StageConfig, seed: int, init_from_previous: bool = True) -> StageConfig:
    return StageConfig(cfg.stage, cfg.epochs, cfg.batch_size, lr=cfg.lr,
                       betas=cfg.betas, weight_decay=cfg.weight_decay,
                       grad_clip=cfg.grad_clip, seed=seed,
                       init_from_previous=init_from_previous)


def ablate_modality(factory: BundleFactory, corpus: TrainingCorpus,
                    segment_cfg: StageConfig, summary_cfg: StageConfig,
                    seeds: tuple[int, ...] = (1, 2, 3),
                    arms: tuple[str, ...] = MODALITY_ARMS) -> AblationTable:
    """Train SEGMENT+SUMMARY with one alignment branch disabled per arm."""
    for arm in arms:
        if arm not in MODALITY_ARMS:
            raise ValueError(f"unknown modality arm {arm!r}")
    table = AblationTable(name="modality")
    for arm in arms:
        for seed in seeds:
            bundle = factory({}, seed)
            bundle.disabled_branch = {
                "video_only": BranchDisabled.TEXT,
                "text_only": BranchDisabled.VIDEO,
                "video_text": BranchDisabled.NONE,
            }[arm]
            plan = _arm_plan([
                _seeded(segment_cfg, seed, init_from_previous=False),
                _seeded(summary_cfg, seed),
            ], seed)
            result = run_curriculum(bundle, corpus, plan,
                                    eval_text_source="ground_truth")
            table.runs.append(ArmRun(arm, seed, {
                r.eval_scores.level: r.eval_scores.as_dict()
                for r in result.reports if r.eval_scores is not None}))
    if set(arms) == set(MODALITY_ARMS):
        both = table.mean("video_text", 3)
        table.trends["video_text_ge_single"] = both >= max(
            table.mean("video_only", 3), table.mean("text_only", 3))
    return table


def ablate_curriculum(factory: BundleFactory, corpus: TrainingCorpus,
                      clip_cfg: StageConfig, segment_cfg: StageConfig,
                      summary_cfg: StageConfig,
                      seeds: tuple[int, ...] = (1, 2, 3),
                      arms: tuple[str, ...] = CURRICULUM_ARMS) -> AblationTable:
    """The five curriculum arms: with and without earlier-stage hand-off."""
    arm_stages = {
        "init_segment": lambda s: [_seeded(segment_cfg, s, False)],
        "caption_segment": lambda s: [_seeded(clip_cfg, s), _seeded(segment_cfg, s)],
        "init_video": lambda s: [_seeded(summary_cfg, s, False)],
        "caption_video": lambda s: [_seeded(clip_cfg, s), _seeded(summary_cfg, s)],
        "caption_segment_video": lambda s: [
            _seeded(clip_cfg, s), _seeded(segment_cfg, s), _seeded(summary_cfg, s)],
    }
    table = AblationTable(name="curriculum")
    for arm in arms:
        if arm not in arm_stages:
            raise ValueError(f"unknown curriculum arm {arm!r}")
        for seed in seeds:
            bundle = factory({}, seed)
            plan = _arm_plan(arm_stages[arm](seed), seed)
            result = run_curriculum(bundle, corpus, plan,
                                    eval_text_source="ground_truth")
            table.runs.append(ArmRun(arm, seed, {
                r.eval_scores.level: r.eval_scores.as_dict()
                for r in result.reports if r.eval_scores is not None}))
    if {"init_segment", "caption_segment"} <= set(arms):
        table.trends["caption_beats_init_segment"] = (
            table.mean("caption_segment", 2) > table.mean("init_segment", 2))
    if {"init_video", "caption_segment_video"} <= set(arms):
        table.trends["full_curriculum_beats_init_video"] = (
            table.mean("caption_segment_video", 3) > table.mean("init_video", 3))
    return table


def ablate_alignment(factory: BundleFactory, corpus: TrainingCorpus,
                     clip_cfg: StageConfig, segment_cfg: StageConfig,
                     seeds: tuple[int, ...] = (1, 2, 3),
                     arms: tuple[str, ...] = ALIGNMENT_ARMS) -> AblationTable:
    """Alignment arms: frozen-LM cross-attention vs a plain trainable
    resampler vs feeding Z only as a decoder input prefix."""
    table = AblationTable(name="alignment")
    for arm in arms:
        if arm not in ALIGNMENT_ARMS:
            raise ValueError(f"unknown alignment arm {arm!r}")
        overrides = ({"alignment_kind": "plain_resampler"} if arm == "plain_resampler"
                     else {"decoder_adaptation": "input_prefix_only"}
                     if arm == "input_prefix_only" else {})
        for seed in seeds:
            bundle = factory(overrides, seed)
            plan = _arm_plan([_seeded(clip_cfg, seed), _seeded(segment_cfg, seed)], seed)
            result = run_curriculum(bundle, corpus, plan,
                                    eval_text_source="ground_truth")
            table.runs.append(ArmRun(arm, seed, {
                r.eval_scores.level: r.eval_scores.as_dict()
                for r in result.reports if r.eval_scores is not None}))
    return table


def ablate_teacher(factory: BundleFactory, corpus_fn: Callable[[], TrainingCorpus],
                   segment_cfg: StageConfig,
                   pseudo_records_fn: Callable[[int], list],
                   seeds: tuple[int, ...] = (1, 2, 3)) -> AblationTable:
    """Manual-only vs manual+pseudo SEGMENT training.

    ``pseudo_records_fn(seed)`` supplies teacher pseudo-annotations;
    ``corpus_fn`` yields a fresh corpus per run so pseudo records from one
    arm never leak into another.
    """
    table = AblationTable(name="teacher")
    for arm in ("manual", "pseudo"):
        for seed in seeds:
            corpus = corpus_fn()
            targets: tuple[str, ...] = ("ground_truth",)
            if arm == "pseudo":
                corpus.add_records(pseudo_records_fn(seed))
                targets = ("ground_truth", "teacher_pseudo")
            bundle = factory({}, seed)
            plan = CurriculumPlan(
                stages=[_seeded(segment_cfg, seed, init_from_previous=False)],
                text_source="ground_truth", target_sources=targets, seed=seed)
            result = run_curriculum(bundle, corpus, plan,
                                    eval_text_source="ground_truth")
            table.runs.append(ArmRun(arm, seed, {
                r.eval_scores.level: r.eval_scores.as_dict()
                for r in result.reports if r.eval_scores is not None}))
    table.trends["pseudo_not_worse"] = (
        table.mean("pseudo", 2) >= table.mean("manual", 2) - 0.02)
    return table
