"""End-to-end orchestration: corpus features, repeated k-fold training, held-out scoring."""
from __future__ import annotations

import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import read_wav, standardize_length
from .corpus import CorpusEntry
from .dataset import DatasetSplit, FoldPair, FoldPlan, filter_task_files, rasterize
from .dsp import FeatureMatrix, extract_features
from .evaluation import (
    ConfusionCounts,
    EventCounts,
    MetricsReport,
    ModelMetrics,
    aggregate_report,
    match_events,
    segment_confusion,
)
from .labels import LabelType, derive_cas, to_interval_set
from .nnet import ModelParams, TrainConfig, TrainResult, predict_proba, train
from .postprocess import PostprocessConfig, segments_to_events, threshold_segments

log = logging.getLogger(__name__)

# Table 2, models trained and tested on HF_Lung_V1: (segment F1, event F1)
V1_REFERENCE_F1 = {"I": (0.806, 0.840), "E": (0.624, 0.637), "C": (0.527, 0.438), "D": (0.712, 0.596)}
SOFT_TARGET_TOLERANCE = 0.08


def recording_features(entry: CorpusEntry, name_pattern=None) -> FeatureMatrix:
    rec = read_wav(entry.wav_path) if name_pattern is None else read_wav(entry.wav_path, name_pattern)
    return extract_features(standardize_length(rec))


def _features_worker(path):
    return extract_features(standardize_length(read_wav(path))).data


def corpus_features(entries, jobs: int = 1) -> list[FeatureMatrix]:
    paths = [e.wav_path for e in entries]
    if jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            datas = list(pool.map(_features_worker, paths, chunksize=8))
    else:
        datas = [_features_worker(p) for p in paths]
    return [FeatureMatrix(d) for d in datas]


def task_intervals(entry: CorpusEntry, task) -> list[tuple[float, float]]:
    """Disjoint truth intervals of one task type (CAS derived from W/S/R)."""
    events = derive_cas([e for e in entry.events if e.kind != LabelType.C])
    return list(to_interval_set(events, task))


def task_targets(entry: CorpusEntry, task, n_frames: int) -> np.ndarray:
    return rasterize(task_intervals(entry, task), n_frames, limit=max(entry.duration, n_frames * 0.016))


def score_recordings(probs_list, entries, task, pp: PostprocessConfig) -> tuple[ConfusionCounts, EventCounts]:
    seg, ev = ConfusionCounts(), EventCounts()
    for probs, entry in zip(probs_list, entries):
        n = len(probs)
        grid = threshold_segments(probs, pp)
        truth = task_intervals(entry, task)
        seg = seg + segment_confusion(grid, task_targets(entry, task, n))
        ev = ev + match_events(truth, segments_to_events(grid, pp)).counts
    return seg, ev


@dataclass
class CVRun:
    pair: FoldPair
    seed: int
    result: TrainResult
    metrics: ModelMetrics


@dataclass
class CVResult:
    task: str
    runs: list[CVRun]
    report: MetricsReport
    settings: dict = field(default_factory=dict)


def fold_seeds(master_seed: int, n: int) -> list[int]:
    """Independent per-model seeds derived from the master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n)]


_SHARED: dict = {}


def _train_one(args):
    idx_train, idx_val, seed, config, task = args
    data = _SHARED["data"]
    cfg = replace(config, seed=seed)
    return train([data[i] for i in idx_train], cfg, val_data=[data[i] for i in idx_val], task=task)


def cross_validate(
    entries: list[CorpusEntry],
    features: list[FeatureMatrix],
    split: DatasetSplit,
    plan: FoldPlan,
    task,
    config: TrainConfig = TrainConfig(),
    pp: PostprocessConfig = PostprocessConfig(),
    seed: int = 0,
    jobs: int = 1,
    use_best: bool = True,
) -> CVResult:
    """Train one model per fold pair and score each on the held-out test subjects."""
    task = LabelType(task).value
    keep = {id(e) for e in filter_task_files(entries, task)}
    items = [(e, f) for e, f in zip(entries, features) if id(e) in keep]
    data = [(f, task_targets(e, task, f.frames)) for e, f in items]
    groups = [e.group for e, _ in items]
    test_set = set(split.test_subjects)
    test_idx = [i for i, g in enumerate(groups) if g in test_set]

    pairs = list(plan.pairs())
    seeds = fold_seeds(seed, len(pairs))
    jobs_args = []
    for pair, s in zip(pairs, seeds):
        tr, va = set(pair.train), set(pair.validation)
        idx_train = [i for i, g in enumerate(groups) if g in tr]
        idx_val = [i for i, g in enumerate(groups) if g in va]
        jobs_args.append((idx_train, idx_val, s, config, task))

    _SHARED["data"] = data
    try:
        if jobs > 1 and len(jobs_args) > 1:
            ctx = mp.get_context("fork")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                results = list(pool.map(_train_one, jobs_args))
        else:
            results = []
            for k, a in enumerate(jobs_args):
                log.info("training model %d/%d", k + 1, len(jobs_args))
                results.append(_train_one(a))
    finally:
        _SHARED.clear()

    runs = []
    for pair, s, res in zip(pairs, seeds, results):
        params = res.best if use_best else res.final
        probs = [predict_proba(params, items[i][1]) for i in test_idx]
        seg, ev = score_recordings(probs, [items[i][0] for i in test_idx], task, pp)
        runs.append(CVRun(pair, s, res, ModelMetrics(task, pair.repeat, pair.fold, seg, ev)))

    settings = {
        "task": task,
        "folds": plan.folds,
        "repeats": plan.repeats,
        "seed": seed,
        "threshold": pp.threshold,
        "merge_gap": pp.merge_gap,
        "min_duration": pp.min_duration,
        "ji_threshold": 0.5,
        "matching": "existence per reference direction; TP pairs one-to-one by descending JI",
        "model_selection": "best validation loss" if use_best else "final epoch",
        "n_train_files": len(items) - len(test_idx),
        "n_test_files": len(test_idx),
    }
    report = aggregate_report([r.metrics for r in runs], expected=len(pairs), settings=settings)
    report.notes.update(reference_notes(report))
    return CVResult(task=task, runs=runs, report=report, settings=settings)


def reference_notes(report: MetricsReport) -> dict:
    seg_ref, ev_ref = V1_REFERENCE_F1[report.task]
    seg = report.mean["segment"]["f1"]
    notes = {
        "reference_v1_segment_f1": seg_ref,
        "reference_v1_event_f1": ev_ref,
    }
    if report.task == "I":
        notes["soft_target_segment_f1"] = f"{seg_ref} +/- {SOFT_TARGET_TOLERANCE}"
        notes["soft_target_met"] = bool(abs(seg - seg_ref) <= SOFT_TARGET_TOLERANCE)
    return notes


def predict_events(params: ModelParams, features: FeatureMatrix, pp: PostprocessConfig = PostprocessConfig()):
    probs = predict_proba(params, features)
    return probs, segments_to_events(threshold_segments(probs, pp), pp)

