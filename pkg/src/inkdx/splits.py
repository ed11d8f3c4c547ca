"""Subject-disjoint, class-stratified k-fold planning with an inner train/validation split."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DataError, DatasetManifest, DiagnosticClass, InvalidParams, ManifestEntry


class TooFewSubjects(DataError):
    pass


class UnknownSubject(DataError):
    pass


VAL_FRACTION = 0.2


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    classes: tuple[DiagnosticClass, ...]
    subject_class: dict[str, DiagnosticClass]
    fold_of_subject: dict[str, int]
    val_subjects: tuple[frozenset, ...]  # per test fold

    def test_subjects(self, fold: int) -> set[str]:
        return {s for s, f in self.fold_of_subject.items() if f == fold}

    def roles(self, fold: int) -> dict[str, str]:
        """subject -> 'train' | 'val' | 'test' for the given test fold."""
        self._check_fold(fold)
        val = self.val_subjects[fold]
        out = {}
        for s, f in self.fold_of_subject.items():
            out[s] = "test" if f == fold else ("val" if s in val else "train")
        return out

    def _check_fold(self, fold: int):
        if not 0 <= fold < self.k:
            raise InvalidParams(f"fold must be in 0..{self.k - 1}, got {fold}")

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "classes": [c.value for c in self.classes],
            "subjects": {s: {"class": self.subject_class[s].value, "fold": self.fold_of_subject[s]}
                         for s in sorted(self.fold_of_subject)},
            "validation": [sorted(v) for v in self.val_subjects],
        }

    @classmethod
    def from_json(cls, d: dict) -> "FoldPlan":
        subjects = d["subjects"]
        return cls(
            k=int(d["k"]),
            seed=int(d["seed"]),
            classes=tuple(DiagnosticClass(c) for c in d["classes"]),
            subject_class={s: DiagnosticClass(v["class"]) for s, v in subjects.items()},
            fold_of_subject={s: int(v["fold"]) for s, v in subjects.items()},
            val_subjects=tuple(frozenset(v) for v in d["validation"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FoldPlan":
        return cls.from_json(json.loads(Path(path).read_text()))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_validation(subjects_by_class: dict[DiagnosticClass, list[str]], rng: np.random.Generator,
                     fraction: float = VAL_FRACTION) -> frozenset:
    """Stratified subject-level holdout; every class with >= 2 subjects gives at least one."""
    val = set()
    for cls in sorted(subjects_by_class, key=lambda c: c.value):
        pool = sorted(subjects_by_class[cls])
        if len(pool) < 2:
            continue
        rng.shuffle(pool)
        n_val = min(len(pool) - 1, max(1, _round_half_up(fraction * len(pool))))
        val.update(pool[:n_val])
    return frozenset(val)


def make_fold_plan(manifest: DatasetManifest, classes: Sequence[DiagnosticClass], k: int = 5,
                   seed: int = 0) -> FoldPlan:
    """Assign subjects to folds class by class, round-robin over a seeded shuffle.

    Each class continues the round-robin where the previous class stopped, which
    keeps both per-class counts and fold sizes within one subject of even.
    """
    classes = tuple(classes)
    subjects = manifest.filter(classes=classes).subjects()
    by_class = {c: sorted(s for s, sc in subjects.items() if sc == c) for c in classes}
    for c, subs in by_class.items():
        if len(subs) < k:
            raise TooFewSubjects(f"{manifest.dataset_name}: class {c.value} has {len(subs)} "
                                 f"subjects, need at least {k}")
    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    cursor = 0
    for c in classes:
        order = list(by_class[c])
        rng.shuffle(order)
        for s in order:
            fold_of[s] = cursor % k
            cursor += 1
    val_subjects = []
    for f in range(k):
        inner_rng = np.random.default_rng([seed, f])
        remaining = {c: [s for s in by_class[c] if fold_of[s] != f] for c in classes}
        val_subjects.append(split_validation(remaining, inner_rng))
    return FoldPlan(k, seed, classes, subjects, fold_of, tuple(val_subjects))


def materialize_split(plan: FoldPlan, fold: int, manifest: DatasetManifest
                      ) -> tuple[list[ManifestEntry], list[ManifestEntry], list[ManifestEntry]]:
    roles = plan.roles(fold)
    out = {"train": [], "val": [], "test": []}
    for e in manifest.entries:
        if e.label not in plan.classes:
            continue
        role = roles.get(e.subject_id)
        if role is None:
            raise UnknownSubject(f"subject {e.subject_id!r} of sample {e.sample_id!r} is not in "
                                 "the fold plan")
        out[role].append(e)
    return out["train"], out["val"], out["test"]


def holdout_split(manifest_entries: dict[str, list[ManifestEntry]], fraction: float, seed: int
                  ) -> tuple[dict[str, list[ManifestEntry]], dict[str, list[ManifestEntry]]]:
    """Subject-level stratified holdout over a pool of datasets (keys are dataset names).

    Subjects are namespaced by dataset so identical ids in two corpora stay distinct.
    """
    by_class: dict[DiagnosticClass, set[str]] = {}
    for ds, entries in manifest_entries.items():
        for e in entries:
            by_class.setdefault(e.label, set()).add(f"{ds}\x1f{e.subject_id}")
    rng = np.random.default_rng([seed, 1_000_003])
    val = split_validation({c: sorted(v) for c, v in by_class.items()}, rng, fraction)
    train_out: dict[str, list[ManifestEntry]] = {}
    val_out: dict[str, list[ManifestEntry]] = {}
    for ds, entries in manifest_entries.items():
        train_out[ds] = [e for e in entries if f"{ds}\x1f{e.subject_id}" not in val]
        val_out[ds] = [e for e in entries if f"{ds}\x1f{e.subject_id}" in val]
    return train_out, val_out
