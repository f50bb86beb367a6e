"""Command-line entrypoint: gen-data, train, infer, eval, ablate.

Exit codes: 0 success, 2 configuration/validation error, 3 numeric failure
(non-finite loss).  Every command writes its resolved config next to its
outputs and is byte-deterministic given identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import ConfigError, RunConfig
from .datagen.stats import dataset_stats
from .datagen.storage import (
    DatasetError,
    FeatureStore,
    read_manifest,
    write_dataset,
    write_records,
)
from .datagen.world import WorldSpec, WorldSpecError, build_world, sample_video
from .metrics import evaluate_level
from .modeling.bundle import ModelBundle, ModelConfig
from .modeling.checkpoint import CheckpointError, load_bundle, save_bundle
from .modeling.backbone import PretrainFailure, pretrain_frozen_lm
from .modeling.recursion import StoreFeatures, recursive_caption
from .teacher import build_teacher_pairs, generate_pseudo, mix_datasets, train_teacher
from .textproc import Tokenizer
from .training.batching import TrainingCorpus
from .training.curriculum import CurriculumPlan, run_curriculum
from .training.stages import NumericError, StageConfig
from .training import ablations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _run_dir(base: str | None, seed: int) -> Path:
    if base is not None:
        path = Path(base)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(f"runs/{stamp}-seed{seed}")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.from_yaml(path) if path else RunConfig()


def _corpus_tokenizer(data_dir: Path, corpus: TrainingCorpus) -> Tokenizer:
    """Closed vocabulary: the world grammar when available, else train text."""
    world_path = data_dir / "world.json"
    if world_path.exists():
        spec = WorldSpec.from_dict(json.loads(world_path.read_text()))
        return Tokenizer.from_corpus(build_world(spec).vocabulary_texts())
    texts = [r.text for r in corpus.records("train")]
    return Tokenizer.from_corpus(texts)


def _backbones(config: RunConfig, corpus: TrainingCorpus, tokenizer: Tokenizer,
               cache_path: Path):
    """Load the pretrained frozen backbones, pretraining them on first use."""
    if cache_path.exists():
        _log(f"loading pretrained backbones from {cache_path}")
        cached = load_bundle(cache_path)
        return cached.decoder, cached.encoder
    texts = [r.text for r in corpus.records("train", sources=("ground_truth",))]
    _log(f"pretraining frozen backbones on {len(texts)} caption strings")
    mcfg = config.model
    decoder, encoder, report = pretrain_frozen_lm(
        texts, tokenizer, d_model=mcfg.d_model, decoder_layers=mcfg.decoder_layers,
        alignment_layers=mcfg.alignment_layers, heads=mcfg.heads,
        max_pos=mcfg.max_pos, seed=config.seed, epochs=config.pretrain.epochs,
        batch_size=config.pretrain.batch_size, lr=config.pretrain.lr,
        ppl_threshold=config.pretrain.ppl_threshold,
        mask_rate=config.pretrain.mask_rate, min_texts=config.pretrain.min_texts)
    _log(f"pretraining done: perplexity {report['decoder_perplexity']:.2f}")
    cached = ModelBundle(mcfg, tokenizer, decoder, encoder, seed=config.seed)
    save_bundle(cached, cache_path)
    return decoder, encoder


def _bundle_factory(config: RunConfig, tokenizer: Tokenizer, decoder, encoder,
                    variant: str | None = None):
    def factory(overrides: dict, seed: int) -> ModelBundle:
        d = config.model.to_dict()
        if variant is not None:
            d["variant"] = variant
        d.update(overrides)
        return ModelBundle(ModelConfig.from_dict(d), tokenizer, decoder,
                           encoder, seed=seed)
    return factory


# ----------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    out = _run_dir(args.out_dir, config.seed)
    world = build_world(config.world)
    _log(f"sampling {config.n_videos} videos")
    videos = [sample_video(world, rng_seed=i) for i in range(config.n_videos)]
    write_dataset(videos, out, spec=config.world)
    report = dataset_stats(videos)
    (out / "stats.json").write_text(report.to_json())
    (out / "stats.txt").write_text(report.to_text())
    config.write_resolved(out / "config.yaml")
    _log(f"dataset written to {out}")
    print(report.to_text())
    return EXIT_OK


def _run_pseudo_pipeline(config: RunConfig, corpus: TrainingCorpus,
                         factory, out: Path) -> None:
    level = config.teacher.level
    _log("building teacher pairs")
    pairs = build_teacher_pairs(corpus, level,
                                spans_per_video=config.teacher.spans_per_video,
                                seed=config.seed)
    teacher_bundle = factory({}, config.seed + 1)
    _log(f"training teacher on {len(pairs)} pairs")
    teacher, report = train_teacher(teacher_bundle, pairs,
                                    config.teacher.model_config(config.seed))
    (out / "teacher_eval.json").write_text(json.dumps({
        "train": report.train_scores, "held_out": report.held_out_scores,
    }, indent=1, sort_keys=True))
    manual = corpus.records("train", level, ("ground_truth",))
    pseudo = generate_pseudo(teacher, corpus, level, seed=config.seed)
    mixed = mix_datasets(manual, pseudo, ratio_cap=config.teacher.ratio_cap,
                         seed=config.seed)
    pseudo_kept = [r for r in mixed if r.source == "teacher_pseudo"]
    write_records(pseudo_kept, out / "pseudo_captions.jsonl")
    corpus.add_records(pseudo_kept)
    _log(f"minted {len(pseudo_kept)} pseudo annotations at level {level}")


def cmd_train(args) -> int:
    config = _load_config(args.config)
    data_dir = Path(args.data_dir)
    out = _run_dir(args.out_dir, config.seed)
    corpus = TrainingCorpus(data_dir)
    tokenizer = _corpus_tokenizer(data_dir, corpus)
    backbone_path = Path(args.backbone) if args.backbone else data_dir / "backbone.rckpt"
    decoder, encoder = _backbones(config, corpus, tokenizer, backbone_path)
    factory = _bundle_factory(config, tokenizer, decoder, encoder, args.variant)
    bundle = factory({}, config.seed)

    stages = config.stages
    if args.stage is not None:
        stages = [s for s in stages if s.stage == args.stage]
        if not stages:
            raise ConfigError(f"stage {args.stage!r} not in configured curriculum")
    target_sources: tuple[str, ...] = ("ground_truth",)
    if args.pseudo == "on":
        _run_pseudo_pipeline(config, corpus, factory, out)
        target_sources = ("ground_truth", "teacher_pseudo")
    plan = CurriculumPlan(stages=stages, text_source=config.text_source,
                          target_sources=target_sources, seed=config.seed)
    _log(f"training stages: {[s.stage for s in stages]} (variant "
         f"{bundle.cfg.variant})")
    result = run_curriculum(bundle, corpus, plan, out_dir=out,
                            eval_split=config.eval.split)
    summary = {r.stage: r.eval_scores.as_dict() for r in result.reports
               if r.eval_scores is not None}
    (out / "eval_summary.json").write_text(json.dumps(summary, indent=1,
                                                      sort_keys=True))
    config.write_resolved(out / "config.yaml")
    _log(f"run artifacts in {out}")
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_infer(args) -> int:
    bundle = load_bundle(args.checkpoint)
    data_dir = Path(args.data_dir)
    manifest = read_manifest(data_dir)
    known = {e["video_id"] for e in manifest["videos"]}
    if args.video_id not in known:
        raise DatasetError(f"video {args.video_id!r} not in {data_dir}")
    feats = StoreFeatures(FeatureStore(data_dir), args.video_id)
    _log(f"captioning {args.video_id} ({feats.n_clips} clips)")
    records = recursive_caption(bundle, feats, decoding=args.decoding,
                                beam_width=args.beam_width)
    out_file = Path(args.out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    with open(out_file, "w") as fh:
        fh.write(json.dumps({"video_id": args.video_id,
                             "n_clips": feats.n_clips}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")
    _log(f"wrote {len(records)} records to {out_file}")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = load_bundle(args.checkpoint)
    data_dir = Path(args.data_dir)
    corpus = TrainingCorpus(data_dir)
    store = FeatureStore(data_dir)
    rows = []
    for video_id in corpus.video_ids(args.split):
        rows.extend(recursive_caption(bundle, StoreFeatures(store, video_id)))
    table = {}
    for level in (1, 2, 3):
        gt = corpus.records(args.split, level, ("ground_truth",))
        scores = evaluate_level([r for r in rows if r.level == level], gt, level)
        table[f"level{level}"] = scores.as_dict()
    out_table = Path(args.out_table)
    out_table.parent.mkdir(parents=True, exist_ok=True)
    out_table.write_text(json.dumps(table, indent=1, sort_keys=True))
    print(json.dumps(table, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _load_config(args.config)
    data_dir = Path(args.data_dir)
    out = _run_dir(args.out_dir, config.seed)
    corpus = TrainingCorpus(data_dir)
    tokenizer = _corpus_tokenizer(data_dir, corpus)
    backbone_path = Path(args.backbone) if args.backbone else data_dir / "backbone.rckpt"
    decoder, encoder = _backbones(config, corpus, tokenizer, backbone_path)
    factory = _bundle_factory(config, tokenizer, decoder, encoder)
    by_stage = {s.stage: s for s in config.stages}
    seeds = tuple(args.seeds)
    _log(f"running {args.arm} ablation over seeds {seeds}")

    if args.arm == "modality":
        table = ablations.ablate_modality(factory, corpus, by_stage["SEGMENT"],
                                          by_stage["SUMMARY"], seeds=seeds)
    elif args.arm == "curriculum":
        table = ablations.ablate_curriculum(factory, corpus, by_stage["CLIP"],
                                            by_stage["SEGMENT"],
                                            by_stage["SUMMARY"], seeds=seeds)
    elif args.arm == "alignment":
        table = ablations.ablate_alignment(factory, corpus, by_stage["CLIP"],
                                           by_stage["SEGMENT"], seeds=seeds)
    else:  # teacher
        def corpus_fn() -> TrainingCorpus:
            return TrainingCorpus(data_dir)

        def pseudo_fn(seed: int):
            pairs = build_teacher_pairs(corpus, config.teacher.level,
                                        spans_per_video=config.teacher.spans_per_video,
                                        seed=seed)
            teacher, _ = train_teacher(factory({}, seed + 100), pairs,
                                       config.teacher.model_config(seed))
            return generate_pseudo(teacher, corpus, config.teacher.level, seed=seed)

        table = ablations.ablate_teacher(factory, corpus_fn, by_stage["SEGMENT"],
                                         pseudo_fn, seeds=seeds)

    doc = {
        "arm": args.arm,
        "runs": [{"arm": r.arm, "seed": r.seed, "scores": r.scores}
                 for r in table.runs],
        "trends": table.trends,
    }
    (out / f"ablation_{args.arm}.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True))
    config.write_resolved(out / "config.yaml")
    print(json.dumps({"trends": table.trends}, indent=1, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiercap",
                                     description="hierarchical video captioner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run curriculum training")
    p.add_argument("--config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--backbone")
    p.add_argument("--variant", choices=("separate_per_level", "unified"))
    group = p.add_mutually_exclusive_group()
    group.add_argument("--stage", choices=("CLIP", "SEGMENT", "SUMMARY"))
    group.add_argument("--full-curriculum", action="store_true")
    p.add_argument("--pseudo", choices=("on", "off"), default="off")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="caption one video hierarchically")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--video-id", required=True)
    p.add_argument("--out-file", required=True)
    p.add_argument("--decoding", choices=("greedy", "beam"), default="greedy")
    p.add_argument("--beam-width", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out-table", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation table")
    p.add_argument("--config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--backbone")
    p.add_argument("--arm", required=True,
                   choices=("modality", "curriculum", "teacher", "alignment"))
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (ConfigError, WorldSpecError, DatasetError, CheckpointError,
            PretrainFailure, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
