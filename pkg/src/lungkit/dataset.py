"""Subject-level train/test splits, repeated k-fold plans, task filtering, frame grids."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import FRAME_HOP_S
from .errors import Degenerate, OutOfRange, TooFewSubjects
from .labels import LabelType

SPLIT_TOLERANCE = 0.05
_EPS = 1e-9


@dataclass(frozen=True)
class DatasetSplit:
    train_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]
    counts: Mapping[str, int] = field(default_factory=dict)
    seed: int | None = None

    @property
    def test_fraction(self) -> float:
        total = sum(self.counts.values())
        if not total:
            return float("nan")
        return sum(self.counts[s] for s in self.test_subjects) / total

    def role(self, subject: str) -> str:
        if subject in self.test_subjects:
            return "test"
        if subject in self.train_subjects:
            return "train"
        raise KeyError(subject)


def assign_split(
    subject_counts: Mapping[str, int],
    test_fraction: float = 0.2,
    seed: int = 0,
    tolerance: float = SPLIT_TOLERANCE,
) -> DatasetSplit:
    """Shuffle subjects and move them to the test side until it holds ``test_fraction`` of recordings.

    A subject whose recordings would push the test share past
    ``test_fraction + tolerance`` is skipped in favour of later, smaller ones.
    """
    if len(subject_counts) < 2:
        raise Degenerate("need at least two subjects for a leakage-free split")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    subjects = sorted(subject_counts)
    total = sum(subject_counts[s] for s in subjects)
    order = [subjects[i] for i in np.random.default_rng(seed).permutation(len(subjects))]
    target = test_fraction * total
    test: list[str] = []
    acc = 0
    for s in order:
        if acc >= target - _EPS:
            break
        if len(test) == len(subjects) - 1:
            break
        c = subject_counts[s]
        if (acc + c) / total > test_fraction + tolerance + _EPS:
            continue
        test.append(s)
        acc += c
    if not test:
        # every subject alone overshoots: take the smallest one
        test.append(min(order, key=lambda s: (subject_counts[s], order.index(s))))
    test_set = set(test)
    train = tuple(s for s in subjects if s not in test_set)
    return DatasetSplit(
        train_subjects=train,
        test_subjects=tuple(sorted(test_set)),
        counts={s: subject_counts[s] for s in subjects},
        seed=seed,
    )


@dataclass(frozen=True)
class FoldPair:
    repeat: int
    fold: int
    train: tuple[str, ...]
    validation: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    repeats: int
    folds: int
    assignments: tuple  # [repeat][fold] -> tuple of validation subjects
    seed: int | None = None

    def pairs(self) -> Iterator[FoldPair]:
        for r, groups in enumerate(self.assignments):
            everyone = sorted(s for g in groups for s in g)
            for f, val in enumerate(groups):
                vs = set(val)
                yield FoldPair(r, f, tuple(s for s in everyone if s not in vs), tuple(sorted(val)))

    def __len__(self):
        return self.repeats * self.folds


def make_folds(subjects: Iterable[str], k: int = 5, repeats: int = 3, seed: int = 0) -> FoldPlan:
    subjects = sorted(set(subjects))
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(subjects) < k:
        raise TooFewSubjects(f"{len(subjects)} subjects cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    assignments = []
    for _ in range(repeats):
        perm = rng.permutation(len(subjects))
        groups = np.array_split(perm, k)
        assignments.append(tuple(tuple(sorted(subjects[i] for i in g)) for g in groups))
    return FoldPlan(repeats=repeats, folds=k, assignments=tuple(assignments), seed=seed)


def filter_task_files(files: Sequence, task) -> list:
    """Keep files relevant to ``task``: C and D need at least one such label, I and E keep all."""
    task = LabelType(task)
    if task in (LabelType.I, LabelType.E):
        return list(files)
    if task == LabelType.C:
        wanted = {LabelType.C, LabelType.W, LabelType.S, LabelType.R}
    elif task == LabelType.D:
        wanted = {LabelType.D}
    else:
        raise ValueError(f"not a detection task: {task}")
    return [f for f in files if any(e.kind in wanted for e in f.events)]


def _bounds(e):
    if hasattr(e, "start"):
        return e.start, e.end
    return e[0], e[1]


def rasterize(events, n_frames: int, frame_hop: float = FRAME_HOP_S, limit: float | None = None) -> np.ndarray:
    """Boolean per-frame grid; frame k is positive iff its midpoint ``(k + 0.5) * hop`` is inside an event.

    Events must lie within ``[0, limit]``, where ``limit`` defaults to the
    grid extent ``n_frames * frame_hop``.  Pass the recording duration as
    ``limit`` when labels may run past the last full frame.
    """
    if limit is None:
        limit = n_frames * frame_hop
    mid = (np.arange(n_frames) + 0.5) * frame_hop
    grid = np.zeros(n_frames, dtype=bool)
    for e in events:
        s, t = _bounds(e)
        if s < -_EPS or t > limit + _EPS:
            raise OutOfRange(f"event [{s}, {t}] outside [0, {limit}]")
        # frames with s <= mid < t, located by index arithmetic on the midpoint grid
        lo = int(np.searchsorted(mid, s, side="left"))
        hi = int(np.searchsorted(mid, t, side="left"))
        grid[lo:hi] = True
    return grid


def runs(grid) -> list[tuple[int, int]]:
    """Maximal runs of True as ``(first, stop)`` frame indices, stop exclusive."""
    g = np.asarray(grid, dtype=bool)
    if g.size == 0:
        return []
    d = np.diff(np.concatenate(([0], g.view(np.int8), [0])))
    starts = np.flatnonzero(d == 1)
    stops = np.flatnonzero(d == -1)
    return [(int(a), int(b)) for a, b in zip(starts, stops)]


def grid_to_intervals(grid, frame_hop: float = FRAME_HOP_S) -> list[tuple[float, float]]:
    return [(a * frame_hop, b * frame_hop) for a, b in runs(grid)]


# --- manifests -----------------------------------------------------------------

MANIFEST_HEADER = ["subject_id", "role", "repeat", "fold"]


def split_manifest_csv(split: DatasetSplit, plan: FoldPlan | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for s in split.test_subjects:
        w.writerow([s, "test", "", ""])
    if plan is None:
        for s in split.train_subjects:
            w.writerow([s, "train", "", ""])
    else:
        for r, groups in enumerate(plan.assignments):
            for f, val in enumerate(groups):
                for s in val:
                    w.writerow([s, "train", r, f])
    return buf.getvalue()


def write_split_manifest(path, split: DatasetSplit, plan: FoldPlan | None = None) -> None:
    Path(path).write_text(split_manifest_csv(split, plan), encoding="utf-8")


def read_split_manifest(path) -> tuple[DatasetSplit, FoldPlan | None]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if rows and set(MANIFEST_HEADER) - set(rows[0]):
        raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
    test = sorted({r["subject_id"] for r in rows if r["role"] == "test"})
    train = sorted({r["subject_id"] for r in rows if r["role"] == "train"})
    if set(test) & set(train):
        raise ValueError(f"{path}: subjects listed in both train and test")
    folded = [r for r in rows if r["role"] == "train" and r["repeat"] != ""]
    plan = None
    if folded:
        n_rep = 1 + max(int(r["repeat"]) for r in folded)
        n_fold = 1 + max(int(r["fold"]) for r in folded)
        table = [[[] for _ in range(n_fold)] for _ in range(n_rep)]
        for r in folded:
            table[int(r["repeat"])][int(r["fold"])].append(r["subject_id"])
        plan = FoldPlan(
            repeats=n_rep,
            folds=n_fold,
            assignments=tuple(tuple(tuple(sorted(g)) for g in rep) for rep in table),
        )
    return DatasetSplit(train_subjects=tuple(train), test_subjects=tuple(test)), plan
