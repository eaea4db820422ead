from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lungkit.dataset import (
    assign_split,
    filter_task_files,
    grid_to_intervals,
    make_folds,
    rasterize,
    read_split_manifest,
    runs,
    write_split_manifest,
)
from lungkit.errors import Degenerate, OutOfRange, TooFewSubjects
from lungkit.labels import event


@pytest.mark.parametrize("seed", range(10))
def test_split_exact_division(seed):
    counts = {f"S{i}": 10 for i in range(10)}
    sp = assign_split(counts, 0.2, seed=seed)
    assert len(sp.test_subjects) == 2
    assert sp.test_fraction == 0.2
    assert not set(sp.train_subjects) & set(sp.test_subjects)
    assert set(sp.train_subjects) | set(sp.test_subjects) == set(counts)


@given(st.lists(st.integers(1, 40), min_size=2, max_size=60), st.integers(0, 2**31))
def test_split_disjoint_and_deterministic(sizes, seed):
    counts = {f"P{i:03d}": n for i, n in enumerate(sizes)}
    a = assign_split(counts, 0.2, seed=seed)
    b = assign_split(dict(reversed(list(counts.items()))), 0.2, seed=seed)
    assert a == b
    assert not set(a.train_subjects) & set(a.test_subjects)
    assert a.train_subjects and a.test_subjects


def test_split_fraction_within_tolerance_on_varied_sizes():
    rng = np.random.default_rng(0)
    for seed in range(50):
        counts = {f"P{i}": int(n) for i, n in enumerate(rng.integers(1, 30, 200))}
        assert abs(assign_split(counts, 0.2, seed=seed).test_fraction - 0.2) <= 0.05


def test_split_seed_changes_assignment():
    counts = {f"S{i}": 10 for i in range(20)}
    assert assign_split(counts, seed=1).test_subjects != assign_split(counts, seed=2).test_subjects


def test_split_single_subject():
    with pytest.raises(Degenerate):
        assign_split({"only": 10})


def test_folds_25_subjects():
    subjects = [f"S{i:02d}" for i in range(25)]
    plan = make_folds(subjects, 5, 3, seed=4)
    assert len(plan) == 15
    pairs = list(plan.pairs())
    assert len(pairs) == 15
    for r in range(3):
        groups = plan.assignments[r]
        assert [len(g) for g in groups] == [5] * 5
        flat = [s for g in groups for s in g]
        assert sorted(flat) == subjects
    for p in pairs:
        assert not set(p.train) & set(p.validation)
        assert set(p.train) | set(p.validation) == set(subjects)
    assert plan.assignments[0] != plan.assignments[1]


def test_folds_deterministic_and_near_equal():
    a = make_folds([f"S{i}" for i in range(23)], 5, 2, seed=9)
    b = make_folds([f"S{i}" for i in reversed(range(23))], 5, 2, seed=9)
    assert a == b
    assert sorted(len(g) for g in a.assignments[0]) == [4, 4, 5, 5, 5]


def test_folds_too_few():
    with pytest.raises(TooFewSubjects):
        make_folds(["a", "b", "c"], k=5)


def _f(*events):
    return SimpleNamespace(events=list(events))


def test_filter_task_files():
    ie = _f(event("I", 0, 1), event("E", 1, 2))
    wheeze = _f(event("I", 0, 1), event("W", 0, 1))
    crackle = _f(event("D", 0, 1))
    files = [ie, wheeze, crackle]
    assert filter_task_files(files, "C") == [wheeze]
    assert filter_task_files(files, "D") == [crackle]
    assert filter_task_files(files, "I") == files
    assert filter_task_files(files, "E") == files
    assert filter_task_files([], "C") == []


def test_rasterize_midpoint_rule():
    g = rasterize([(0.0, 0.016)], 934)
    assert g[0] and not g[1]
    assert rasterize([(0.0, 14.944)], 934).all()
    assert not rasterize([], 934).any()


def test_rasterize_brute_force(rng):
    hop = 0.016
    for _ in range(200):
        n = int(rng.integers(1, 100))
        ev = []
        for _ in range(rng.integers(0, 5)):
            s = rng.uniform(0, n * hop)
            ev.append((s, min(n * hop, s + rng.uniform(0.001, 0.3))))
        mids = (np.arange(n) + 0.5) * hop
        oracle = np.array([any(s <= m < e for s, e in ev) for m in mids], bool)
        assert np.array_equal(rasterize(ev, n, hop), oracle)


def test_rasterize_limit():
    with pytest.raises(OutOfRange):
        rasterize([(14.0, 15.0)], 934)
    g = rasterize([(14.0, 15.0)], 934, limit=15.0)
    assert g[-1] and g.sum() == 934 - int(14.0 / 0.016)


@given(st.lists(st.booleans(), max_size=200))
def test_grid_round_trip(bits):
    g = np.array(bits, dtype=bool)
    assert np.array_equal(rasterize(grid_to_intervals(g), len(g)), g)


def test_runs():
    assert runs([0, 1, 1, 0, 1]) == [(1, 3), (4, 5)]
    assert runs([]) == []
    assert runs([1, 1]) == [(0, 2)]


def test_manifest_round_trip(tmp_path):
    counts = {f"S{i:02d}": 8 for i in range(25)}
    sp = assign_split(counts, seed=3)
    plan = make_folds(sp.train_subjects, 5, 3, seed=3)
    p = tmp_path / "split.csv"
    write_split_manifest(p, sp, plan)
    assert p.read_text().splitlines()[0] == "subject_id,role,repeat,fold"
    sp2, plan2 = read_split_manifest(p)
    assert sp2.train_subjects == sp.train_subjects and sp2.test_subjects == sp.test_subjects
    assert plan2.assignments == plan.assignments
    write_split_manifest(p, sp)
    assert read_split_manifest(p)[1] is None
