import copy
import json
import math

import numpy as np
import pytest
import torch

from hiercap.datagen import WorldSpec, build_world, sample_video
from hiercap.textproc import BOS, EOS, Tokenizer
from hiercap.training import (
    BatchSource,
    CurriculumPlan,
    NumericError,
    Sample,
    StageConfig,
    TrainingCorpus,
    alternate_batches,
    build_samples,
    build_stage_sources,
    collate,
    cosine_lr,
    regenerate_inputs,
    run_curriculum,
    run_stage,
)

from helpers import make_bundle


def tiny_world():
    return build_world(WorldSpec(
        seed=11, feature_dim=8, frames_per_clip=2, height=1, width=2,
        clips_per_action=(1, 2), actions_per_step=(2, 3), steps_per_goal=(2, 3),
    ))


@pytest.fixture(scope="module")
def setup():
    world = tiny_world()
    videos = [sample_video(world, rng_seed=i) for i in range(6)]
    splits = {v.video_id: ("test" if i >= 4 else "train")
              for i, v in enumerate(videos)}
    corpus = TrainingCorpus.in_memory(videos, splits)
    tok = Tokenizer.from_corpus(world.vocabulary_texts())
    bundle = make_bundle(seed=0, tokenizer=tok, feature_dim=8)
    return bundle, corpus


def fresh_corpus():
    world = tiny_world()
    videos = [sample_video(world, rng_seed=i) for i in range(6)]
    splits = {v.video_id: ("test" if i >= 4 else "train")
              for i, v in enumerate(videos)}
    return TrainingCorpus.in_memory(videos, splits)


def dummy_samples(n, level=1, seed=0):
    return [Sample("vid000000", level, i % 3, i % 3 + 1, (BOS, 5, EOS), ())
            for i in range(n)]


class TestCosineSchedule:
    def test_endpoint_zero(self):
        assert abs(cosine_lr(3e-5, 100, 100)) < 1e-12

    def test_start_full(self):
        assert cosine_lr(3e-5, 0, 100) == pytest.approx(3e-5, abs=1e-12)

    def test_matches_formula_everywhere(self):
        # independent recomputation with numpy
        base, total = 3e-5, 37
        for t in range(total + 1):
            want = base * 0.5 * (1 + np.cos(np.pi * t / total))
            assert abs(cosine_lr(base, t, total) - want) < 1e-9


class TestBatchSource:
    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            BatchSource("s", [], 4)

    def test_cap_respected(self):
        src = BatchSource("s", dummy_samples(50), 5, seed=0, cap=20)
        assert len(src.samples) == 20

    def test_epoch_covers_all_samples(self):
        samples = dummy_samples(10)
        src = BatchSource("s", samples, 3, seed=1)
        seen = []
        for _ in range(src.n_batches):
            seen.extend(src.next_batch())
        assert sorted(s.t_start for s in seen) == sorted(s.t_start for s in samples)
        assert src.reshuffles == 0


class TestAlternateBatches:
    def test_two_sources_equal_share(self):
        a = BatchSource("a", dummy_samples(40), 4, seed=0)
        b = BatchSource("b", dummy_samples(40), 4, seed=1)
        ids = [sid for sid, _ in alternate_batches([a, b])]
        assert len(ids) == 20
        assert ids.count("a") == ids.count("b") == 10

    def test_three_sources_equal_share(self):
        srcs = [BatchSource(str(i), dummy_samples(12), 4, seed=i) for i in range(3)]
        ids = [sid for sid, _ in alternate_batches(srcs)]
        assert len(ids) == 9
        assert all(ids.count(str(i)) == 3 for i in range(3))

    def test_reshuffle_count_oracle(self):
        # sizes (100, 10), batch 10: the small source wraps ceil(100/10)-1 times
        big = BatchSource("big", dummy_samples(100), 10, seed=0)
        small = BatchSource("small", dummy_samples(10), 10, seed=1)
        list(alternate_batches([big, small]))
        assert small.reshuffles == math.ceil(100 / 10) - 1
        assert big.reshuffles == 0

    def test_no_sources_rejected(self):
        with pytest.raises(ValueError):
            list(alternate_batches([]))


class TestSamples:
    def test_level1_samples(self, setup):
        bundle, corpus = setup
        samples = build_samples(corpus, bundle.tokenizer, "train", 1,
                                max_text_len=12, max_align_text_tokens=64)
        assert len(samples) == len(corpus.records("train", 1, ("ground_truth",)))
        assert all(s.text == () for s in samples)
        assert all(s.target[0] == BOS and s.target[-1] == EOS for s in samples)

    def test_level2_needs_text_records(self, setup):
        bundle, corpus = setup
        with pytest.raises(ValueError, match="text records"):
            build_samples(corpus, bundle.tokenizer, "train", 2,
                          max_text_len=12, max_align_text_tokens=64)
        samples = build_samples(corpus, bundle.tokenizer, "train", 2,
                                max_text_len=12, max_align_text_tokens=64,
                                text_sources=("ground_truth",))
        assert all(len(s.text) > 0 for s in samples)

    def test_collate_shapes(self, setup):
        bundle, corpus = setup
        samples = build_samples(corpus, bundle.tokenizer, "train", 1,
                                max_text_len=12, max_align_text_tokens=64)[:4]
        feats, mask, tt, tm, targets = collate(samples, corpus)
        # level 1: (t_end - t_start) clips of 2*1*2 = 4 cells each
        cells = [4 * (s.t_end - s.t_start) for s in samples]
        assert feats.shape == (4, max(cells), 8)
        for i, n in enumerate(cells):
            assert mask[i, :n].all() and not mask[i, n:].any()
        assert tt is None and tm is None
        assert targets.shape[0] == 4

    def test_collate_rejects_mixed_levels(self, setup):
        _, corpus = setup
        mixed = dummy_samples(2) + [Sample("vid000000", 2, 0, 2, (BOS, EOS), (5,))]
        with pytest.raises(ValueError, match="mixed"):
            collate(mixed, corpus)

    def test_added_records_cannot_be_ground_truth(self, setup):
        _, corpus = setup
        rec = copy.deepcopy(corpus.records("train", 1)[0])
        with pytest.raises(ValueError, match="model/pseudo"):
            corpus.add_records([rec])


def clip_source(bundle, corpus, batch_size=8, seed=0, n=None):
    samples = build_samples(corpus, bundle.tokenizer, "train", 1,
                            max_text_len=12, max_align_text_tokens=64)
    if n is not None:
        samples = samples[:n]
    return BatchSource("level1", samples, batch_size, seed=seed)


class TestRunStage:
    def test_freeze_integrity(self, setup):
        bundle, corpus = setup
        bundle = copy.deepcopy(bundle)
        backbone_before = {
            n: p.detach().clone()
            for n, p in bundle.named_parameters()
            if n.startswith(("decoder.", "encoder."))
        }
        cfg = StageConfig("CLIP", epochs=1, batch_size=8, lr=1e-3)
        run_stage(bundle, cfg, [clip_source(bundle, corpus)], corpus)
        for n, p in bundle.named_parameters():
            if n in backbone_before:
                assert torch.equal(p, backbone_before[n]), n

    def test_one_batch_overfit_loss_decreases(self, setup):
        bundle, corpus = setup
        bundle = copy.deepcopy(bundle)
        cfg = StageConfig("CLIP", epochs=50, batch_size=4, lr=1e-3)
        result = run_stage(bundle, cfg, [clip_source(bundle, corpus, n=4,
                                                     batch_size=4)], corpus)
        losses = [e["loss"] for e in result.logs]
        assert len(losses) == 50
        # smoothed monotone decrease: every 10-step mean strictly below the last
        means = [np.mean(losses[i : i + 10]) for i in range(0, 50, 10)]
        assert all(means[i + 1] < means[i] for i in range(len(means) - 1))
        assert losses[-1] < losses[0]

    def test_lr_sequence_matches_cosine(self, setup):
        bundle, corpus = setup
        bundle = copy.deepcopy(bundle)
        cfg = StageConfig("CLIP", epochs=2, batch_size=8, lr=3e-5)
        src = clip_source(bundle, corpus)
        total = 2 * src.n_batches
        result = run_stage(bundle, cfg, [src], corpus)
        assert len(result.logs) == total
        for t, entry in enumerate(result.logs):
            want = 3e-5 * 0.5 * (1 + np.cos(np.pi * t / total))
            assert abs(entry["lr"] - want) < 1e-9

    def test_log_file_schema(self, setup, tmp_path):
        bundle, corpus = setup
        bundle = copy.deepcopy(bundle)
        cfg = StageConfig("CLIP", epochs=1, batch_size=8)
        log = tmp_path / "log.jsonl"
        ckpt = tmp_path / "clip.rckpt"
        run_stage(bundle, cfg, [clip_source(bundle, corpus)], corpus,
                  log_path=log, checkpoint_path=ckpt)
        entries = [json.loads(l) for l in log.read_text().splitlines()]
        assert entries
        assert all(set(e) == {"step", "stage", "source_id", "loss", "lr"}
                   for e in entries)
        assert ckpt.exists()
        from hiercap.modeling import read_header

        assert "stage:CLIP" in read_header(ckpt)["provenance"]

    def test_nan_aborts_with_diagnostics(self, setup):
        bundle, corpus = setup
        bundle = copy.deepcopy(bundle)
        with torch.no_grad():
            bundle.adapter_for(1).video_proj.weight.fill_(float("nan"))
        cfg = StageConfig("CLIP", epochs=1, batch_size=8)
        with pytest.raises(NumericError) as exc:
            run_stage(bundle, cfg, [clip_source(bundle, corpus)], corpus)
        assert exc.value.diagnostics["stage"] == "CLIP"
        assert exc.value.diagnostics["step"] == 0

    def test_clip_stage_rejects_higher_levels(self, setup):
        bundle, corpus = setup
        src = BatchSource("level2", [Sample("v", 2, 0, 2, (BOS, EOS), (5,))], 1)
        cfg = StageConfig("CLIP", epochs=1, batch_size=1)
        with pytest.raises(ValueError, match="level-1"):
            run_stage(bundle, cfg, [src], corpus)

    def test_empty_sources_rejected(self, setup):
        bundle, corpus = setup
        cfg = StageConfig("CLIP", epochs=1, batch_size=1)
        with pytest.raises(ValueError, match="sources"):
            run_stage(bundle, cfg, [], corpus)


class TestStageConfig:
    def test_bad_stage(self):
        with pytest.raises(ValueError):
            StageConfig("WARMUP", epochs=1, batch_size=1)

    def test_bad_epochs(self):
        with pytest.raises(ValueError):
            StageConfig("CLIP", epochs=0, batch_size=1)

    def test_levels(self):
        assert StageConfig("CLIP", 1, 1).level == 1
        assert StageConfig("SEGMENT", 1, 1).level == 2
        assert StageConfig("SUMMARY", 1, 1).level == 3


class TestRegenerateInputs:
    def test_counts_and_tagging(self, setup):
        bundle, corpus = setup
        records = regenerate_inputs(bundle, corpus, 1, split="train")
        n_clips = sum(corpus.feature_view(v).n_clips
                      for v in corpus.video_ids("train"))
        assert len(records) == n_clips
        assert all(r.source == "model" for r in records)

    def test_deterministic(self, setup):
        bundle, corpus = setup
        a = regenerate_inputs(bundle, corpus, 1, split="train")
        b = regenerate_inputs(bundle, corpus, 1, split="train")
        assert [r.to_json() for r in a] == [r.to_json() for r in b]

    def test_never_shadows_ground_truth(self, setup):
        bundle, corpus = setup
        n_gt = len(corpus.records("train", 1, ("ground_truth",)))
        corpus.add_records(regenerate_inputs(bundle, corpus, 1, split="train"))
        assert len(corpus.records("train", 1, ("ground_truth",))) == n_gt


class TestCurriculum:
    def stage_cfgs(self, seed=0):
        return [
            StageConfig("CLIP", epochs=1, batch_size=8, lr=1e-3, seed=seed),
            StageConfig("SEGMENT", epochs=1, batch_size=4, lr=1e-3, seed=seed),
            StageConfig("SUMMARY", epochs=1, batch_size=4, lr=1e-3, seed=seed),
        ]

    def test_plan_validation(self):
        with pytest.raises(ValueError, match="increasing"):
            CurriculumPlan(stages=list(reversed(self.stage_cfgs())))
        with pytest.raises(ValueError, match="stages"):
            CurriculumPlan(stages=[])

    def test_separate_full_curriculum_runs(self, setup, tmp_path):
        bundle, _ = setup
        bundle = copy.deepcopy(bundle)
        corpus = fresh_corpus()
        plan = CurriculumPlan(stages=self.stage_cfgs(), text_source="model")
        result = run_curriculum(bundle, corpus, plan, out_dir=tmp_path)
        assert [r.stage for r in result.reports] == ["CLIP", "SEGMENT", "SUMMARY"]
        assert all(r.eval_scores is not None for r in result.reports)
        # model captions were extracted for the next stage's inputs
        assert corpus.records("train", 1, ("model",))
        assert corpus.records("train", 2, ("model",))
        for stage in ("clip", "segment", "summary"):
            assert (tmp_path / f"{stage}.rckpt").exists()
            assert (tmp_path / f"{stage}_log.jsonl").exists()

    def test_skip_arms_expressible(self, setup):
        bundle, _ = setup
        corpus = fresh_corpus()
        cfgs = self.stage_cfgs()
        # Init -> Segment: SEGMENT only, fresh adapters
        plan = CurriculumPlan(stages=[StageConfig("SEGMENT", 1, 4, lr=1e-3,
                                                  init_from_previous=False)],
                              text_source="ground_truth")
        result = run_curriculum(copy.deepcopy(bundle), corpus, plan,
                                eval_text_source="ground_truth")
        assert [r.stage for r in result.reports] == ["SEGMENT"]
        # Caption -> Video: CLIP then SUMMARY
        plan = CurriculumPlan(stages=[cfgs[0], cfgs[2]], text_source="ground_truth")
        result = run_curriculum(copy.deepcopy(bundle), corpus, plan,
                                eval_text_source="ground_truth")
        assert [r.stage for r in result.reports] == ["CLIP", "SUMMARY"]

    def test_unified_caps_and_mixing(self, setup):
        bundle, _ = setup
        corpus = fresh_corpus()
        tok = bundle.tokenizer
        unified = make_bundle(seed=0, tokenizer=tok, feature_dim=8,
                              variant="unified")
        plan = CurriculumPlan(stages=self.stage_cfgs(), text_source="ground_truth")
        segment_cfg = plan.stages[1]
        sources = build_stage_sources(unified, corpus, segment_cfg, plan)
        assert [s.source_id for s in sources] == ["level1", "level2"]
        n_l2 = len(corpus.records("train", 2, ("ground_truth",)))
        assert len(sources[0].samples) == n_l2  # cap == stage-level dataset size
        summary_cfg = plan.stages[2]
        sources = build_stage_sources(unified, corpus, summary_cfg, plan)
        assert [s.source_id for s in sources] == ["level1", "level2", "level3"]
        n_l3 = len(corpus.records("train", 3, ("ground_truth",)))
        assert all(len(s.samples) == n_l3 for s in sources[:2])
        # batch counts logged: every source serves the same number of batches
        result = run_stage(unified, summary_cfg, sources, corpus)
        counts = set(result.batch_counts.values())
        assert len(counts) == 1

    def test_unified_single_adapter_set_trains_all_stages(self, setup):
        bundle, _ = setup
        corpus = fresh_corpus()
        unified = make_bundle(seed=0, tokenizer=bundle.tokenizer, feature_dim=8,
                              variant="unified")
        plan = CurriculumPlan(stages=self.stage_cfgs(), text_source="ground_truth")
        result = run_curriculum(unified, corpus, plan,
                                eval_text_source="ground_truth")
        assert len(result.reports) == 3
        assert set(unified.adapters.keys()) == {"shared"}

    def test_reproducible_logs(self, setup):
        bundle, _ = setup
        plan = CurriculumPlan(stages=self.stage_cfgs(), text_source="ground_truth")
        logs = []
        for _ in range(2):
            corpus = fresh_corpus()
            b = copy.deepcopy(bundle)
            result = run_curriculum(b, corpus, plan, eval_split=None)
            logs.append([r.result.logs for r in result.reports])
        assert logs[0] == logs[1]
