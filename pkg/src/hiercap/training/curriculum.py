"""The three-stage curriculum: stage ordering, hand-off, data mixing, eval."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..datagen.records import CaptionRecord
from ..datagen.storage import write_records
from ..metrics import LevelScores, evaluate_level
from ..modeling.bundle import ModelBundle
from ..modeling.recursion import caption_level
from .batching import BatchSource, TrainingCorpus, build_samples
from .stages import StageConfig, StageResult, regenerate_inputs, run_stage

TEXT_SOURCES = ("model", "ground_truth")


@dataclass
class CurriculumPlan:
    """Ordered stage subset plus data-sourcing policy.

    ``stages`` may skip levels (e.g. SEGMENT only, or CLIP then SUMMARY) to
    express the curriculum-ablation arms; levels must still be increasing.
    ``text_source`` picks whether stage-2/3 conditioning text comes from
    model-extracted captions (the default pipeline) or ground truth (for
    controlled comparisons).
    """

    stages: list[StageConfig]
    text_source: str = "model"
    target_sources: tuple[str, ...] = ("ground_truth",)
    seed: int = 0

    def __post_init__(self):
        if not self.stages:
            raise ValueError("plan has no stages")
        levels = [s.level for s in self.stages]
        if levels != sorted(set(levels)):
            raise ValueError("stage levels must be strictly increasing")
        if self.text_source not in TEXT_SOURCES:
            raise ValueError(f"text_source must be one of {TEXT_SOURCES}")
        if "ground_truth" not in self.target_sources:
            raise ValueError("targets must include ground_truth records")


def default_plan(seed: int = 0, text_source: str = "model",
                 clip_epochs: int = 5, clip_batch: int = 32,
                 later_epochs: int = 10, later_batch: int = 16,
                 lr: float = 3e-5) -> CurriculumPlan:
    return CurriculumPlan(stages=[
        StageConfig("CLIP", epochs=clip_epochs, batch_size=clip_batch, lr=lr, seed=seed),
        StageConfig("SEGMENT", epochs=later_epochs, batch_size=later_batch, lr=lr, seed=seed),
        StageConfig("SUMMARY", epochs=later_epochs, batch_size=later_batch, lr=lr, seed=seed),
    ], text_source=text_source, seed=seed)


@dataclass
class StageReport:
    stage: str
    result: StageResult
    eval_scores: LevelScores | None = None


@dataclass
class CurriculumResult:
    reports: list[StageReport] = field(default_factory=list)

    def scores(self, level: int) -> LevelScores | None:
        for report in self.reports:
            if report.result and report.eval_scores and report.eval_scores.level == level:
                return report.eval_scores
        return None


def _text_sources(plan: CurriculumPlan) -> tuple[str, ...]:
    return ("model",) if plan.text_source == "model" else ("ground_truth",)


def build_stage_sources(bundle: ModelBundle, corpus: TrainingCorpus,
                        cfg: StageConfig, plan: CurriculumPlan,
                        split: str = "train") -> list[BatchSource]:
    """Stage data: the stage's own level, plus capped lower levels (unified).

    The unified variant alternates batches across levels, subsampling each
    lower level to the size of the stage's own dataset so earlier skills are
    rehearsed without swamping the new level.
    """
    mcfg = bundle.cfg

    def samples_for(level: int):
        return build_samples(
            corpus, bundle.tokenizer, split, level,
            max_text_len=mcfg.max_text_len,
            max_align_text_tokens=mcfg.max_align_text_tokens,
            target_sources=plan.target_sources,
            text_sources=_text_sources(plan))

    own = samples_for(cfg.level)
    if mcfg.variant != "unified" or cfg.level == 1:
        return [BatchSource(f"level{cfg.level}", own, cfg.batch_size, seed=cfg.seed)]
    cap = len(own)
    sources = []
    for level in range(1, cfg.level):
        sources.append(BatchSource(f"level{level}", samples_for(level),
                                   cfg.batch_size, seed=cfg.seed, cap=cap))
    sources.append(BatchSource(f"level{cfg.level}", own, cfg.batch_size, seed=cfg.seed))
    return sources


def generate_eval_records(bundle: ModelBundle, corpus: TrainingCorpus, level: int,
                          split: str, text_source: str = "model",
                          batch_size: int = 128) -> list[CaptionRecord]:
    """Model captions at one level over a split, for metric evaluation.

    With ``text_source="model"`` the recursion is run bottom-up per video;
    with ``"ground_truth"`` the conditioning text comes from GT records, so
    the level is assessed in isolation.
    """
    out: list[CaptionRecord] = []
    for video_id in corpus.video_ids(split):
        view = corpus.feature_view(video_id)
        if level == 1:
            prev: list[CaptionRecord] = []
        elif text_source == "ground_truth":
            prev = [r for r in corpus.records(split, level - 1, ("ground_truth",))
                    if r.video_id == video_id]
        else:
            prev = []
            for lvl in range(1, level):
                prev = caption_level(bundle, view, lvl, prev, batch_size=batch_size)
        out.extend(caption_level(bundle, view, level, prev, batch_size=batch_size))
    return out


def evaluate_stage(bundle: ModelBundle, corpus: TrainingCorpus, level: int,
                   split: str = "test", text_source: str = "model") -> LevelScores:
    model_records = generate_eval_records(bundle, corpus, level, split, text_source)
    gt_records = corpus.records(split, level, ("ground_truth",))
    return evaluate_level(model_records, gt_records, level)


def _ensure_model_text(bundle: ModelBundle, corpus: TrainingCorpus,
                       up_to_level: int, out_dir: Path | None) -> None:
    """Extract model captions for every level below the stage that lacks them."""
    for level in range(1, up_to_level):
        if corpus.records("train", level, ("model",)):
            continue
        records = regenerate_inputs(bundle, corpus, level)
        corpus.add_records(records)
        if out_dir is not None:
            write_records(records, out_dir / f"model_captions_l{level}.jsonl")


def run_curriculum(bundle: ModelBundle, corpus: TrainingCorpus, plan: CurriculumPlan,
                   out_dir: str | Path | None = None, eval_split: str | None = "test",
                   eval_text_source: str | None = None) -> CurriculumResult:
    """Run the plan's stages in order, evaluating each level after its stage.

    Separate-per-level variant: each new level's adapters start from the
    previously trained level's weights (when ``init_from_previous``), which
    is the curriculum hand-off; otherwise they are freshly re-initialized.
    Unified variant: one adapter set flows through all stages.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    eval_text_source = eval_text_source or plan.text_source

    result = CurriculumResult()
    trained_levels: list[int] = []
    for cfg in plan.stages:
        if plan.text_source == "model" and cfg.level > 1:
            _ensure_model_text(bundle, corpus, cfg.level, out_path)
        if bundle.cfg.variant == "separate_per_level" and cfg.level > 1:
            if cfg.init_from_previous and trained_levels:
                bundle.clone_adapters(trained_levels[-1], cfg.level)
            else:
                bundle.reinit_adapters(cfg.level, seed=cfg.seed)
        sources = build_stage_sources(bundle, corpus, cfg, plan)
        result_paths = {}
        if out_path is not None:
            result_paths = dict(
                log_path=out_path / f"{cfg.stage.lower()}_log.jsonl",
                checkpoint_path=out_path / f"{cfg.stage.lower()}.rckpt")
        stage_result = run_stage(bundle, cfg, sources, corpus, **result_paths)
        trained_levels.append(cfg.level)

        scores = None
        if eval_split is not None:
            scores = evaluate_stage(bundle, corpus, cfg.level, eval_split,
                                    text_source=eval_text_source)
        result.reports.append(StageReport(cfg.stage, stage_result, scores))
    return result
