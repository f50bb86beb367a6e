#!/usr/bin/env python3
"""Pilot run calibrating the learnability thresholds in docs/pilot.md.

Generates (or reuses) the default 2000-video corpus, scores an untrained
gates-zero model as the baseline, then runs the full separate-variant
curriculum for each requested seed and prints per-level test-split scores.
The acceptance thresholds (level-1 CIDEr >= 5x untrained, level-2/3
ROUGE-L >= 0.5) were fixed from this script's output.
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from hiercap.cli import _backbones, _bundle_factory, _corpus_tokenizer
from hiercap.config import RunConfig
from hiercap.datagen import build_world, sample_video, write_dataset
from hiercap.training import (
    CurriculumPlan,
    TrainingCorpus,
    evaluate_stage,
    run_curriculum,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default="runs/pilot/corpus")
    parser.add_argument("--out-dir", default="runs/pilot")
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--config", default=None)
    args = parser.parse_args()

    config = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    data_dir = Path(args.data_dir)
    if not (data_dir / "manifest.json").exists():
        print(f"generating {config.n_videos} videos into {data_dir}")
        world = build_world(config.world)
        videos = [sample_video(world, rng_seed=i) for i in range(config.n_videos)]
        write_dataset(videos, data_dir, spec=config.world)

    corpus = TrainingCorpus(data_dir)
    tokenizer = _corpus_tokenizer(data_dir, corpus)
    decoder, encoder = _backbones(config, corpus, tokenizer,
                                  data_dir / "backbone.rckpt")
    factory = _bundle_factory(config, tokenizer, decoder, encoder)

    baseline = factory({}, 0)
    untrained = {lvl: evaluate_stage(baseline, corpus, lvl, "test").as_dict()
                 for lvl in (1, 2, 3)}
    print("untrained (gates zero):", json.dumps(untrained, indent=1))

    results = {}
    for seed in args.seeds:
        t0 = time.time()
        bundle = factory({}, seed)
        plan = CurriculumPlan(stages=[s.__class__(**{**s.__dict__, "seed": seed})
                                      for s in config.stages],
                              text_source=config.text_source, seed=seed)
        corpus_seed = TrainingCorpus(data_dir)
        out = Path(args.out_dir) / f"seed{seed}"
        result = run_curriculum(bundle, corpus_seed, plan, out_dir=out)
        results[seed] = {r.stage: r.eval_scores.as_dict() for r in result.reports}
        print(f"seed {seed} ({time.time() - t0:.0f}s):",
              json.dumps(results[seed], indent=1))

    summary = {"untrained": untrained, "trained": results}
    out_path = Path(args.out_dir) / "pilot_summary.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(f"summary written to {out_path}")


if __name__ == "__main__":
    main()
