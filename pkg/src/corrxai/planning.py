"""Frozen study plans: phase trial lists, class intros, and asset routing.

A plan is generated offline from classifier outputs with a fixed seed and
then never resampled: the service only reads it. Test trials are drawn from
equal pools of correctly and incorrectly predicted queries; validation
trials carry a fixed correct/incorrect mix that gates entry to the test
phase; training trials come first and are disjoint from both.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .explain import parse_explanation, serialize_explanation
from .store import DatasetManifest

TRAINING_TRIALS = 5
TEST_TRIALS = 30


@dataclass(frozen=True)
class DatasetProfile:
    """Per-dataset phase sizes and class-intro density."""

    name: str
    validation_trials: int
    validation_correct: int
    class_intro_count: int
    training_trials: int = TRAINING_TRIALS
    test_trials: int = TEST_TRIALS


IMAGENET_PROFILE = DatasetProfile("imagenet", validation_trials=10,
                                  validation_correct=5, class_intro_count=3)
CUB_PROFILE = DatasetProfile("cub", validation_trials=5,
                             validation_correct=3, class_intro_count=6)
PROFILES = {"imagenet": IMAGENET_PROFILE, "cub": CUB_PROFILE}


@dataclass(frozen=True)
class PredictionRecord:
    """One classifier output line as consumed by the planner."""

    query_id: str
    method: str
    label: int
    label_name: str
    confidence_count: int
    k: int
    ai_correct: bool
    explanation: str  # canonical explanation document

    @property
    def confidence(self) -> float:
        return self.confidence_count / self.k

    def to_json(self) -> str:
        return json.dumps({
            "query_id": self.query_id, "method": self.method, "label": self.label,
            "label_name": self.label_name, "confidence_count": self.confidence_count,
            "k": self.k, "ai_correct": self.ai_correct,
            "explanation": json.loads(self.explanation),
        }, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "PredictionRecord":
        doc = json.loads(line)
        explanation = serialize_explanation(parse_explanation(json.dumps(doc["explanation"])))
        return cls(query_id=doc["query_id"], method=doc["method"], label=int(doc["label"]),
                   label_name=doc["label_name"],
                   confidence_count=int(doc["confidence_count"]), k=int(doc["k"]),
                   ai_correct=bool(doc["ai_correct"]), explanation=explanation)


@dataclass(frozen=True)
class TrialSpec:
    query_id: str
    method: str
    ai_correct: bool
    confidence: float
    label: int
    label_name: str
    explanation: str


@dataclass(frozen=True)
class ClassIntro:
    class_id: int
    name: str
    description: str
    reference_images: tuple[str, ...]


@dataclass
class StudyPlan:
    study_id: str
    profile: DatasetProfile
    methods: tuple[str, ...]
    seed: int
    class_intros: dict[int, ClassIntro]
    assets: dict[str, str]  # image_id -> path relative to the data dir
    training: dict[str, tuple[TrialSpec, ...]] = field(default_factory=dict)
    validation: dict[str, tuple[TrialSpec, ...]] = field(default_factory=dict)
    test_pool: dict[str, tuple[TrialSpec, ...]] = field(default_factory=dict)


class PlanError(ValueError):
    pass


def _spec_from(record: PredictionRecord) -> TrialSpec:
    return TrialSpec(query_id=record.query_id, method=record.method,
                     ai_correct=record.ai_correct, confidence=record.confidence,
                     label=record.label, label_name=record.label_name,
                     explanation=record.explanation)


def build_plan(study_id: str, manifest: DatasetManifest,
               predictions: Iterable[PredictionRecord], profile: DatasetProfile,
               seed: int, methods: Iterable[str] | None = None,
               test_pool_correct: int = 300, test_pool_incorrect: int = 300,
               class_descriptions: Mapping[int, str] | None = None) -> StudyPlan:
    """Sample a frozen study plan from classifier outputs.

    Per method: training trials first, then the validation mix, then
    correct/incorrect test pools, all disjoint by query. Pools smaller than
    the requested sizes are used whole.
    """
    by_method: dict[str, list[PredictionRecord]] = {}
    for rec in predictions:
        by_method.setdefault(rec.method, []).append(rec)
    if methods is None:
        methods = tuple(sorted(by_method))
    else:
        methods = tuple(methods)
        missing = [m for m in methods if m not in by_method]
        if missing:
            raise PlanError(f"no predictions for methods: {missing}")

    rng = random.Random(seed)
    excluded = {e.image_id for e in manifest.entries if e.excluded}
    plan = StudyPlan(study_id=study_id, profile=profile, methods=methods, seed=seed,
                     class_intros={}, assets={})

    for method in methods:
        records = [r for r in by_method[method] if r.query_id not in excluded]
        records.sort(key=lambda r: r.query_id)
        correct = [r for r in records if r.ai_correct]
        wrong = [r for r in records if not r.ai_correct]
        rng.shuffle(correct)
        rng.shuffle(wrong)

        val_c = profile.validation_correct
        val_w = profile.validation_trials - val_c
        train_c = (profile.training_trials + 1) // 2
        train_w = profile.training_trials - train_c
        if len(correct) < val_c + train_c or len(wrong) < val_w + train_w:
            raise PlanError(
                f"{method}: not enough predictions for training+validation "
                f"(have {len(correct)} correct / {len(wrong)} incorrect)")

        training = [correct.pop() for _ in range(train_c)] + [wrong.pop() for _ in range(train_w)]
        validation = [correct.pop() for _ in range(val_c)] + [wrong.pop() for _ in range(val_w)]
        rng.shuffle(training)
        rng.shuffle(validation)
        pool = (correct[:test_pool_correct] + wrong[:test_pool_incorrect])
        rng.shuffle(pool)
        if len(pool) < profile.test_trials:
            raise PlanError(f"{method}: test pool smaller than one session "
                            f"({len(pool)} < {profile.test_trials})")

        plan.training[method] = tuple(_spec_from(r) for r in training)
        plan.validation[method] = tuple(_spec_from(r) for r in validation)
        plan.test_pool[method] = tuple(_spec_from(r) for r in pool)

    descriptions = dict(class_descriptions or {})
    train_by_class: dict[int, list[str]] = {}
    for e in manifest.entries:
        if e.split == "train" and not e.excluded:
            train_by_class.setdefault(e.class_id, []).append(e.image_id)
        if e.source_path:
            plan.assets[e.image_id] = e.source_path
    needed_classes = {s.label for specs in (list(plan.training.values())
                                            + list(plan.validation.values())
                                            + list(plan.test_pool.values()))
                      for s in specs}
    label_names = {}
    for specs in list(plan.training.values()) + list(plan.validation.values()) \
            + list(plan.test_pool.values()):
        for s in specs:
            label_names[s.label] = s.label_name
    for class_id in sorted(needed_classes):
        refs = tuple(sorted(train_by_class.get(class_id, []))[:profile.class_intro_count])
        plan.class_intros[class_id] = ClassIntro(
            class_id=class_id, name=label_names[class_id],
            description=descriptions.get(class_id, ""), reference_images=refs)
    return plan


def save_plan(plan: StudyPlan, path: str | Path) -> None:
    def spec_doc(s: TrialSpec):
        return {"query_id": s.query_id, "method": s.method, "ai_correct": s.ai_correct,
                "confidence": s.confidence, "label": s.label, "label_name": s.label_name,
                "explanation": json.loads(s.explanation)}

    doc = {
        "study_id": plan.study_id,
        "profile": {
            "name": plan.profile.name,
            "validation_trials": plan.profile.validation_trials,
            "validation_correct": plan.profile.validation_correct,
            "class_intro_count": plan.profile.class_intro_count,
            "training_trials": plan.profile.training_trials,
            "test_trials": plan.profile.test_trials,
        },
        "methods": list(plan.methods),
        "seed": plan.seed,
        "class_intros": {
            str(c): {"name": ci.name, "description": ci.description,
                     "reference_images": list(ci.reference_images)}
            for c, ci in sorted(plan.class_intros.items())},
        "assets": dict(sorted(plan.assets.items())),
        "training": {m: [spec_doc(s) for s in specs] for m, specs in plan.training.items()},
        "validation": {m: [spec_doc(s) for s in specs] for m, specs in plan.validation.items()},
        "test_pool": {m: [spec_doc(s) for s in specs] for m, specs in plan.test_pool.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def load_plan(path: str | Path) -> StudyPlan:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    profile = DatasetProfile(**doc["profile"])

    def spec_from(d) -> TrialSpec:
        explanation = serialize_explanation(parse_explanation(json.dumps(d["explanation"])))
        return TrialSpec(query_id=d["query_id"], method=d["method"],
                         ai_correct=bool(d["ai_correct"]), confidence=float(d["confidence"]),
                         label=int(d["label"]), label_name=d["label_name"],
                         explanation=explanation)

    plan = StudyPlan(
        study_id=doc["study_id"], profile=profile, methods=tuple(doc["methods"]),
        seed=int(doc["seed"]),
        class_intros={
            int(c): ClassIntro(class_id=int(c), name=ci["name"],
                               description=ci["description"],
                               reference_images=tuple(ci["reference_images"]))
            for c, ci in doc["class_intros"].items()},
        assets=dict(doc["assets"]))
    for field_name in ("training", "validation", "test_pool"):
        target = getattr(plan, field_name)
        for method, specs in doc[field_name].items():
            target[method] = tuple(spec_from(d) for d in specs)
    return plan
