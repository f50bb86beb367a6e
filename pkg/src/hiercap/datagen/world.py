"""Procedural synthetic world: goals -> activity steps -> atomic actions.

A world is a compositional grammar plus random feature codebooks, fully
determined by its seed.  Videos sampled from the world carry dense clip
features (verb code + object code + Gaussian noise) and templated captions
at three hierarchy levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .records import CaptionRecord, ClipFeatures, SyntheticVideo

VERB_WORDS = [
    "picks", "places", "cuts", "washes", "opens", "closes", "stirs", "lifts",
    "wipes", "pours", "folds", "shakes", "presses", "turns", "holds", "drops",
    "moves", "fills", "empties", "scrubs", "slices", "taps", "pulls", "pushes",
]
OBJECT_WORDS = [
    "knife", "bowl", "pan", "cloth", "bottle", "drawer", "spoon", "box",
    "plate", "jar", "lid", "brush", "wrench", "board", "cup", "basket",
    "towel", "hammer", "rope", "bag", "screw", "pipe", "wire", "bucket",
]
STEP_VERB_WORDS = [
    "prepares", "assembles", "cleans", "organizes", "repairs", "arranges",
    "inspects", "packs", "unpacks", "polishes", "sorts", "builds",
]
STEP_NOUN_WORDS = [
    "salad", "workbench", "engine", "garden", "shelf", "meal", "device",
    "luggage", "cabinet", "fence", "bicycle", "pantry",
]
GOAL_VERB_WORDS = [
    "hosts", "renovates", "plans", "finishes", "starts", "completes",
    "restores", "organizes",
]
GOAL_NOUN_WORDS = [
    "dinner", "workshop", "trip", "project", "cleanup", "repair",
    "harvest", "move",
]

ACTIONS_PER_STEP_POOL = 4
MIN_CODE_DISTANCE = 1e-3


class WorldSpecError(ValueError):
    """A WorldSpec field failed validation; message names the field."""


@dataclass(frozen=True)
class WorldSpec:
    n_verbs: int = 12
    n_objects: int = 12
    n_steps: int = 16
    n_goals: int = 8
    feature_dim: int = 64
    frames_per_clip: int = 4
    height: int = 2
    width: int = 2
    noise_sigma: float = 0.1
    clips_per_action: tuple[int, int] = (2, 4)
    actions_per_step: tuple[int, int] = (3, 6)
    steps_per_goal: tuple[int, int] = (4, 8)
    seed: int = 0

    def validate(self) -> None:
        counts = {
            "n_verbs": self.n_verbs,
            "n_objects": self.n_objects,
            "n_steps": self.n_steps,
            "n_goals": self.n_goals,
            "feature_dim": self.feature_dim,
            "frames_per_clip": self.frames_per_clip,
            "height": self.height,
            "width": self.width,
        }
        for name, value in counts.items():
            if value < 1:
                raise WorldSpecError(f"{name} must be >= 1, got {value}")
        if self.noise_sigma < 0:
            raise WorldSpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        ranges = {
            "clips_per_action": self.clips_per_action,
            "actions_per_step": self.actions_per_step,
            "steps_per_goal": self.steps_per_goal,
        }
        for name, (lo, hi) in ranges.items():
            if lo < 1 or lo > hi:
                raise WorldSpecError(f"{name} must satisfy 1 <= min <= max, got ({lo}, {hi})")
        if self.n_verbs > len(VERB_WORDS):
            raise WorldSpecError(f"n_verbs exceeds word inventory ({len(VERB_WORDS)})")
        if self.n_objects > len(OBJECT_WORDS):
            raise WorldSpecError(f"n_objects exceeds word inventory ({len(OBJECT_WORDS)})")
        if self.n_steps > len(STEP_VERB_WORDS) * len(STEP_NOUN_WORDS):
            raise WorldSpecError("n_steps exceeds step-template inventory")
        if self.n_goals > len(GOAL_VERB_WORDS) * len(GOAL_NOUN_WORDS):
            raise WorldSpecError("n_goals exceeds goal-template inventory")

    @property
    def clip_shape(self) -> tuple[int, int, int, int]:
        return (self.frames_per_clip, self.height, self.width, self.feature_dim)

    def to_dict(self) -> dict:
        return {
            "n_verbs": self.n_verbs,
            "n_objects": self.n_objects,
            "n_steps": self.n_steps,
            "n_goals": self.n_goals,
            "feature_dim": self.feature_dim,
            "frames_per_clip": self.frames_per_clip,
            "height": self.height,
            "width": self.width,
            "noise_sigma": self.noise_sigma,
            "clips_per_action": list(self.clips_per_action),
            "actions_per_step": list(self.actions_per_step),
            "steps_per_goal": list(self.steps_per_goal),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        d = dict(d)
        for key in ("clips_per_action", "actions_per_step", "steps_per_goal"):
            if key in d:
                d[key] = tuple(d[key])
        spec = cls(**d)
        spec.validate()
        return spec


@dataclass
class World:
    spec: WorldSpec
    verb_codes: np.ndarray      # (n_verbs, D)
    object_codes: np.ndarray    # (n_objects, D)
    step_codes: np.ndarray      # (n_steps, D)
    goal_codes: np.ndarray      # (n_goals, D)
    step_templates: list[tuple[str, str]]       # (step verb, step noun) phrases
    goal_templates: list[tuple[str, str]]       # (goal verb, goal noun) phrases
    goal_to_steps: list[list[int]]              # per goal: ordered step ids
    step_actions: list[list[tuple[int, int]]]   # per step: (verb_id, object_id) pool
    step_action_probs: list[np.ndarray] = field(default_factory=list)

    @property
    def step_phrases(self) -> list[str]:
        return [f"{v} the {n}" for v, n in self.step_templates]

    @property
    def goal_phrases(self) -> list[str]:
        return [f"{v} a {n}" for v, n in self.goal_templates]

    def vocabulary_texts(self) -> list[str]:
        """Every caption string the grammar can emit words from."""
        texts = [f"c {v} the {o}" for v in VERB_WORDS[: self.spec.n_verbs]
                 for o in OBJECT_WORDS[: self.spec.n_objects]]
        texts += [f"c {p} using x" for p in self.step_phrases]
        texts += [f"c {p} ." for p in self.goal_phrases]
        return texts


def _sample_distinct_pairs(rng: np.random.Generator, firsts: list[str],
                           seconds: list[str], n: int) -> list[tuple[str, str]]:
    combos = [(a, b) for a in firsts for b in seconds]
    idx = rng.choice(len(combos), size=n, replace=False)
    return [combos[i] for i in idx]


def build_world(spec: WorldSpec) -> World:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_dim
    verb_codes = rng.standard_normal((spec.n_verbs, d))
    object_codes = rng.standard_normal((spec.n_objects, d))
    step_codes = rng.standard_normal((spec.n_steps, d))
    goal_codes = rng.standard_normal((spec.n_goals, d))

    # Codebook injectivity: distinct (verb, object) pairs must give distinct
    # clip features at noise_sigma=0.
    sums = (verb_codes[:, None, :] + object_codes[None, :, :]).reshape(-1, d)
    diffs = sums[:, None, :] - sums[None, :, :]
    dist = np.sqrt((diffs**2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    if dist.min() < MIN_CODE_DISTANCE:
        raise WorldSpecError(
            f"seed {spec.seed} produced codebooks with pairwise distance "
            f"{dist.min():.2e} < {MIN_CODE_DISTANCE}; choose another seed"
        )

    step_templates = _sample_distinct_pairs(rng, STEP_VERB_WORDS, STEP_NOUN_WORDS, spec.n_steps)
    goal_templates = _sample_distinct_pairs(rng, GOAL_VERB_WORDS, GOAL_NOUN_WORDS, spec.n_goals)

    max_steps = spec.steps_per_goal[1]
    goal_to_steps = []
    for _ in range(spec.n_goals):
        k = min(max_steps, spec.n_steps)
        goal_to_steps.append(list(rng.choice(spec.n_steps, size=k, replace=False)))

    step_actions = []
    step_action_probs = []
    for _ in range(spec.n_steps):
        pool_size = min(ACTIONS_PER_STEP_POOL, spec.n_verbs * spec.n_objects)
        verbs = rng.integers(0, spec.n_verbs, size=pool_size)
        objects = rng.integers(0, spec.n_objects, size=pool_size)
        step_actions.append([(int(v), int(o)) for v, o in zip(verbs, objects)])
        step_action_probs.append(rng.dirichlet(np.full(pool_size, 2.0)))

    return World(
        spec=spec,
        verb_codes=verb_codes,
        object_codes=object_codes,
        step_codes=step_codes,
        goal_codes=goal_codes,
        step_templates=step_templates,
        goal_templates=goal_templates,
        goal_to_steps=goal_to_steps,
        step_actions=step_actions,
        step_action_probs=step_action_probs,
    )


def _rand_range(rng: np.random.Generator, lo_hi: tuple[int, int]) -> int:
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def sample_video(world: World, rng_seed: int) -> SyntheticVideo:
    """Sample one video: goal -> steps -> actions -> clips plus ground truth."""
    spec = world.spec
    rng = np.random.default_rng([spec.seed, int(rng_seed)])
    video_id = f"vid{int(rng_seed):06d}"

    goal_id = int(rng.integers(0, spec.n_goals))
    n_steps = min(_rand_range(rng, spec.steps_per_goal), len(world.goal_to_steps[goal_id]))
    step_ids = world.goal_to_steps[goal_id][:n_steps]

    clips: list[ClipFeatures] = []
    gt: list[CaptionRecord] = []
    step_spans: list[tuple[int, int]] = []
    f, h, w, d = spec.clip_shape

    for step_id in step_ids:
        step_start = len(clips)
        n_actions = _rand_range(rng, spec.actions_per_step)
        pool = world.step_actions[step_id]
        probs = world.step_action_probs[step_id]
        objects_in_step: list[int] = []
        for _ in range(n_actions):
            verb_id, object_id = pool[int(rng.choice(len(pool), p=probs))]
            if object_id not in objects_in_step:
                objects_in_step.append(object_id)
            n_clips = _rand_range(rng, spec.clips_per_action)
            action_start = len(clips)
            base = world.verb_codes[verb_id] + world.object_codes[object_id]
            for _ in range(n_clips):
                dense = np.broadcast_to(base, (f, h, w, d)).astype(np.float32).copy()
                if spec.noise_sigma > 0:
                    dense += rng.normal(0.0, spec.noise_sigma, size=dense.shape).astype(np.float32)
                clips.append(ClipFeatures(dense=dense))
            gt.append(CaptionRecord(
                video_id=video_id, level=1,
                t_start=action_start, t_end=len(clips),
                text=f"c {VERB_WORDS[verb_id]} the {OBJECT_WORDS[object_id]}",
            ))
        step_spans.append((step_start, len(clips)))
        object_words = " ".join(OBJECT_WORDS[o] for o in objects_in_step)
        gt.append(CaptionRecord(
            video_id=video_id, level=2,
            t_start=step_start, t_end=len(clips),
            text=f"c {world.step_phrases[step_id]} using {object_words}",
        ))

    sentences = [f"c {world.goal_phrases[goal_id]}"]
    sentences += [f"c {world.step_phrases[s]}" for s in step_ids]
    gt.append(CaptionRecord(
        video_id=video_id, level=3,
        t_start=0, t_end=len(clips),
        text=" . ".join(sentences),
    ))

    video = SyntheticVideo(video_id=video_id, clips=clips, gt=gt)
    video.validate()
    return video
