import numpy as np
import pytest

from lungkit.corpus import label_path_for, load_corpus
from lungkit.dataset import assign_split, make_folds
from lungkit.errors import MetadataParseWarning
from lungkit.labels import event, write_label_file
from lungkit.nnet import Architecture, TrainConfig
from lungkit.pipeline import corpus_features, cross_validate, fold_seeds, task_intervals, task_targets
from lungkit.synth import synth_corpus


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    synth_corpus(12, 8, root, n_subjects=4)
    return load_corpus(root)


def test_label_path():
    assert label_path_for("/a/b/steth_1_L1_x.wav").name == "steth_1_L1_x_label.txt"


def test_load_corpus_label_only_and_unknown_subjects(tmp_path):
    write_label_file(tmp_path / "odd_label.txt", [event("I", 0, 1)])
    write_label_file(tmp_path / "steth_P9_L1_2020_label.txt", [event("D", 1, 2)])
    with pytest.warns(MetadataParseWarning):
        entries = load_corpus(tmp_path, require_audio=False)
    assert [e.name for e in entries] == ["odd", "steth_P9_L1_2020"]
    assert entries[0].group == "~odd" and entries[1].group == "P9"
    assert entries[1].device == "Littmann3200"
    assert entries[0].duration == 15.0


def test_task_intervals_derive_cas(small_corpus):
    e = small_corpus[0]
    e2 = type(e)(**{**vars(e), "events": [event("W", 1, 2), event("R", 1.5, 3), event("C", 9, 10)]})
    # stored C labels are ignored and rebuilt from W/S/R
    assert task_intervals(e2, "C") == [(1.0, 3.0)]
    assert task_targets(e2, "C", 934).sum() == round(2.0 / 0.016)


def test_fold_seeds_distinct():
    s = fold_seeds(0, 15)
    assert len(set(s)) == 15 and s == fold_seeds(0, 15) and s != fold_seeds(1, 15)


def test_features_parallel_equal(small_corpus):
    a = corpus_features(small_corpus[:4], jobs=1)
    b = corpus_features(small_corpus[:4], jobs=2)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))


def test_cross_validate_independent_of_jobs(small_corpus):
    feats = corpus_features(small_corpus)
    counts = {}
    for e in small_corpus:
        counts[e.group] = counts.get(e.group, 0) + 1
    split = assign_split(counts, 0.25, seed=0)
    plan = make_folds(split.train_subjects, k=3, repeats=1, seed=0)
    cfg = TrainConfig(epochs=1, arch=Architecture(conv_channels=(4,), hidden=4))
    a = cross_validate(small_corpus, feats, split, plan, "I", cfg, seed=5, jobs=1)
    b = cross_validate(small_corpus, feats, split, plan, "I", cfg, seed=5, jobs=2)
    assert a.report.to_json() == b.report.to_json()
    assert len(a.runs) == 3
    assert a.report.settings["n_test_files"] == sum(counts[s] for s in split.test_subjects)
