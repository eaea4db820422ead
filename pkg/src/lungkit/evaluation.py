"""Segment- and event-level scoring.

Segment level: frame-wise TP/FP/TN/FN over the 16-ms grid.

Event level: a truth and a predicted event match when their Jaccard index is
at least 0.5.  Matching is checked twice, once with the truth events as the
reference (unmatched truth -> FN) and once with the predictions as the
reference (unmatched prediction -> FP).  A mutually matched pair counts as a
single TP.  There is no event-level TN.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import rasterize, runs
from .errors import Degenerate, IncompleteRuns, ShapeMismatch
from .labels import IntervalSet

JI_THRESHOLD = 0.5
# JI computed from frame-multiple endpoints can land a few ulps below 0.5
JI_TOLERANCE = 1e-12


def _f1(tp, fp, fn) -> float:
    d = 2 * tp + fp + fn
    return 2 * tp / d if d else 0.0


def _ratio(num, den) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return _f1(self.tp, self.fp, self.fn)


def segment_f1(counts: ConfusionCounts) -> float:
    return counts.f1


def segment_confusion(pred, truth) -> ConfusionCounts:
    """Frame confusion computed from the run-length interval form of both grids."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape or p.ndim != 1:
        raise ShapeMismatch(f"pred {p.shape} vs truth {t.shape}")
    P = IntervalSet(runs(p))
    T = IntervalSet(runs(t))
    tp = int(P.intersect(T).duration)
    fp = int(P.duration) - tp
    fn = int(T.duration) - tp
    return ConfusionCounts(tp=tp, fp=fp, tn=len(p) - tp - fp - fn, fn=fn)


def _bounds(x):
    if hasattr(x, "start"):
        return float(x.start), float(x.end)
    return float(x[0]), float(x[1])


def jaccard(a, b) -> float:
    """Temporal intersection over union of two intervals."""
    a0, a1 = _bounds(a)
    b0, b1 = _bounds(b)
    if a1 <= a0 or b1 <= b0:
        raise Degenerate("interval with end <= start")
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    return inter / ((a1 - a0) + (b1 - b0) - inter)


def jaccard_matrix(truth, pred) -> np.ndarray:
    if not len(truth) or not len(pred):
        return np.zeros((len(truth), len(pred)))
    t = np.array([_bounds(x) for x in truth])
    p = np.array([_bounds(x) for x in pred])
    if np.any(t[:, 1] <= t[:, 0]) or np.any(p[:, 1] <= p[:, 0]):
        raise Degenerate("interval with end <= start")
    inter = np.clip(np.minimum(t[:, None, 1], p[None, :, 1]) - np.maximum(t[:, None, 0], p[None, :, 0]), 0.0, None)
    union = (t[:, 1] - t[:, 0])[:, None] + (p[:, 1] - p[:, 0])[None, :] - inter
    return inter / union


@dataclass
class EventMatchResult:
    tp_pairs: list
    fn_events: list
    fp_events: list
    truth_matched: list
    pred_matched: list
    ji_threshold: float = JI_THRESHOLD

    @property
    def counts(self) -> "EventCounts":
        return EventCounts(
            tp=len(self.tp_pairs),
            fp=len(self.fp_events),
            fn=len(self.fn_events),
            truth_matched=len(self.truth_matched),
            pred_matched=len(self.pred_matched),
        )


def _greedy_pairs(ji: np.ndarray, ok: np.ndarray) -> list[tuple[int, int]]:
    cand = sorted(zip(*np.nonzero(ok)), key=lambda ij: (-ji[ij], ij[0], ij[1]))
    used_t, used_p, pairs = set(), set(), []
    for i, j in cand:
        if i not in used_t and j not in used_p:
            used_t.add(i)
            used_p.add(j)
            pairs.append((int(i), int(j)))
    return sorted(pairs)


def match_events(truth: Sequence, pred: Sequence, ji_threshold: float = JI_THRESHOLD, one_to_one: bool = False) -> EventMatchResult:
    """Match truth and predicted events by Jaccard index.

    The default mode makes an existence check per reference direction.  TP
    pairs are then drawn one-to-one from the mutually matching candidates in
    descending-JI order, so ``len(tp_pairs) <= min(len(truth), len(pred))``.
    With ``one_to_one`` only those pairs count as matched at all.
    """
    truth, pred = list(truth), list(pred)
    ji = jaccard_matrix(truth, pred)
    ok = ji >= ji_threshold - JI_TOLERANCE
    pairs = _greedy_pairs(ji, ok)
    if one_to_one:
        t_hit = {i for i, _ in pairs}
        p_hit = {j for _, j in pairs}
    else:
        t_hit = set(np.flatnonzero(ok.any(axis=1)).tolist())
        p_hit = set(np.flatnonzero(ok.any(axis=0)).tolist())
    return EventMatchResult(
        tp_pairs=[(truth[i], pred[j]) for i, j in pairs],
        fn_events=[e for i, e in enumerate(truth) if i not in t_hit],
        fp_events=[e for j, e in enumerate(pred) if j not in p_hit],
        truth_matched=[e for i, e in enumerate(truth) if i in t_hit],
        pred_matched=[e for j, e in enumerate(pred) if j in p_hit],
        ji_threshold=ji_threshold,
    )


@dataclass(frozen=True)
class EventCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    truth_matched: int = 0
    pred_matched: int = 0

    def __add__(self, other):
        return EventCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return _f1(self.tp, self.fp, self.fn)


@dataclass(frozen=True)
class EventScores:
    precision: float
    recall: float
    f1: float


def event_f1(match) -> EventScores:
    c = match.counts if isinstance(match, EventMatchResult) else match
    return EventScores(c.precision, c.recall, c.f1)


def evaluate_recording(pred_grid, pred_events, truth_events, n_frames: int, limit: float | None = None):
    """Segment and event counts for one recording of one task."""
    truth_grid = rasterize(truth_events, n_frames, limit=limit)
    seg = segment_confusion(np.asarray(pred_grid, dtype=bool), truth_grid)
    ev = match_events(truth_events, pred_events).counts
    return seg, ev


# --- reports -------------------------------------------------------------------

METRIC_NAMES = ("precision", "recall", "f1")


@dataclass
class ModelMetrics:
    task: str
    repeat: int
    fold: int
    segment: ConfusionCounts = field(default_factory=ConfusionCounts)
    event: EventCounts = field(default_factory=EventCounts)

    def scores(self) -> dict[str, dict[str, float]]:
        return {
            "segment": {m: getattr(self.segment, m) for m in METRIC_NAMES},
            "event": {m: getattr(self.event, m) for m in METRIC_NAMES},
        }


@dataclass
class MetricsReport:
    task: str
    per_model: list[ModelMetrics]
    mean: dict[str, dict[str, float]]
    settings: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def rows(self):
        for m in self.per_model:
            for scope, vals in m.scores().items():
                for name, v in vals.items():
                    yield self.task, scope, name, m.fold, m.repeat, v
        for scope, vals in self.mean.items():
            for name, v in vals.items():
                yield self.task, scope, name, "mean", "mean", v

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "scope", "metric", "fold", "repeat", "value"])
        for task, scope, name, fold, rep, v in self.rows():
            w.writerow([task, scope, name, fold, rep, f"{v:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "settings": self.settings,
            "mean": self.mean,
            "rows": [
                {"task": t, "scope": s, "metric": n, "fold": f, "repeat": r, "value": round(v, 12)}
                for t, s, n, f, r, v in self.rows()
            ],
            "models": [
                {
                    "repeat": m.repeat,
                    "fold": m.fold,
                    "segment_counts": asdict(m.segment),
                    "event_counts": asdict(m.event),
                }
                for m in self.per_model
            ],
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def aggregate_report(metrics: Sequence[ModelMetrics], expected: int = 15, settings: Mapping | None = None) -> MetricsReport:
    """Arithmetic mean of each score over ``expected`` models."""
    if len(metrics) < expected:
        raise IncompleteRuns(f"{len(metrics)} of {expected} model runs present")
    tasks = {m.task for m in metrics}
    if len(tasks) != 1:
        raise ValueError(f"metrics mix tasks {sorted(tasks)}")
    scores = [m.scores() for m in metrics]
    mean = {
        scope: {name: float(np.mean([s[scope][name] for s in scores])) for name in METRIC_NAMES}
        for scope in ("segment", "event")
    }
    return MetricsReport(task=tasks.pop(), per_model=list(metrics), mean=mean, settings=dict(settings or {}))
