import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lungkit.errors import EmptyReference, LabelRangeWarning, LabelSyntaxError
from lungkit.labels import (
    IntervalSet,
    LabelEvent,
    LabelType,
    corpus_overlap_table,
    corpus_statistics,
    derive_cas,
    duration,
    event,
    format_label_lines,
    intersect,
    overlap_ratio,
    parse_label_file,
    parse_label_lines,
    to_interval_set,
)

L = LabelType

# --- interval algebra -------------------------------------------------------------

intervals = st.lists(
    st.tuples(st.integers(0, 1500), st.integers(1, 300)).map(lambda t: (t[0] / 100, (t[0] + t[1]) / 100)),
    max_size=12,
)


def raster_ms(iv_set, n=16000):
    """1-ms grid membership by interval midpoints."""
    grid = np.zeros(n, bool)
    t = (np.arange(n) + 0.5) / 1000
    for s, e in iv_set:
        grid |= (t >= s) & (t < e)
    return grid


def test_union_examples():
    assert to_interval_set([event("I", 0, 2), event("I", 1, 3)], "I").intervals == ((0, 3),)
    assert to_interval_set([event("I", 0, 1), event("I", 2, 3)], "I").intervals == ((0, 1), (2, 3))
    assert not to_interval_set([event("E", 0, 1)], "I")


def test_touching_intervals_merge():
    assert IntervalSet([(0, 1), (1, 2)]).intervals == ((0, 2),)


def test_intersect_examples():
    a = intersect(IntervalSet([(0, 2)]), IntervalSet([(1, 3)]))
    assert a.intervals == ((1, 2),) and duration(a) == 1.0
    b = IntervalSet([(0, 1)]) & IntervalSet([(2, 3)])
    assert not b and duration(b) == 0
    assert duration(IntervalSet([(0, 3)])) == 3.0


def test_contains_half_open():
    s = IntervalSet([(1, 2), (3, 4)])
    assert s.contains(1) and s.contains(1.5) and not s.contains(2) and not s.contains(0.99)


def test_overlap_ratio_examples():
    assert overlap_ratio(IntervalSet([(0, 1)]), IntervalSet([(0.5, 1.5)])) == 50.0
    assert overlap_ratio(IntervalSet([(0, 1), (2, 3)]), IntervalSet([(0, 4)])) == 100.0
    with pytest.raises(EmptyReference):
        overlap_ratio(IntervalSet(), IntervalSet([(0, 1)]))


@given(intervals)
def test_interval_set_invariants(raw):
    s = IntervalSet(raw)
    iv = s.intervals
    assert all(a < b for a, b in iv)
    assert all(iv[k][1] < iv[k + 1][0] for k in range(len(iv) - 1))
    assert IntervalSet(iv) == s


@given(intervals, intervals)
def test_intersection_bounds(a, b):
    A, B = IntervalSet(a), IntervalSet(b)
    inter = A & B
    assert inter.duration <= min(A.duration, B.duration) + 1e-12
    assert inter == (B & A)
    assert (A | B).duration == pytest.approx(A.duration + B.duration - inter.duration, abs=1e-9)


@given(intervals.filter(bool))
def test_self_overlap_is_100(raw):
    x = IntervalSet(raw)
    assert overlap_ratio(x, x) == pytest.approx(100.0, abs=1e-12)


@given(intervals.filter(bool), intervals)
def test_overlap_ratio_range(a, b):
    r = overlap_ratio(IntervalSet(a), IntervalSet(b))
    assert 0.0 <= r <= 100.0 + 1e-9


@given(st.lists(st.tuples(st.sampled_from(list(L)), st.floats(0, 14.9), st.floats(0.001, 3)), max_size=15))
def test_to_interval_set_invariants(items):
    events = [LabelEvent(k, s, min(s + d, 15.0)) for k, s, d in items]
    for kind in L:
        iv = to_interval_set(events, kind).intervals
        assert all(a < b for a, b in iv)
        assert all(iv[k][1] < iv[k + 1][0] for k in range(len(iv) - 1))


def test_overlap_ratio_matches_ms_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        def rand_set():
            n = rng.integers(1, 8)
            starts = rng.uniform(0, 14, n)
            return IntervalSet((s, min(s + d, 16.0)) for s, d in zip(starts, rng.uniform(0.05, 2, n)))

        x, y = rand_set(), rand_set()
        gx, gy = raster_ms(x), raster_ms(y)
        oracle = 100.0 * np.sum(gx & gy) / np.sum(gx)
        assert abs(overlap_ratio(x, y) - oracle) < 0.2


# --- label files --------------------------------------------------------------------


def test_parse_both_time_syntaxes():
    ev = parse_label_lines(["I 0.50 1.43", "R 00:00:02.100000 00:00:03.000000"])
    assert ev == [LabelEvent(L.I, 0.5, 1.43), LabelEvent(L.R, 2.1, 3.0)]


def test_parse_range_error_keeps_other_lines():
    with pytest.warns(LabelRangeWarning):
        ev = parse_label_lines(["I 0 1", "E 3.0 2.0", "E 14 16", "D 1 2"])
    assert [e.kind for e in ev] == [L.I, L.D]


def test_parse_syntax_error_has_line_number():
    with pytest.raises(LabelSyntaxError) as err:
        parse_label_lines(["I 0 1", "", "I zero 1"], source="f.txt")
    assert err.value.line_no == 3


def test_parse_field_count():
    with pytest.raises(LabelSyntaxError):
        parse_label_lines(["I 0 1 2"])


def test_parse_sorted_and_aliases():
    ev = parse_label_lines(["Wheeze 5 6", "Inhalation 1 2", "Crackle 0.5 0.7"])
    assert [(e.kind, e.start) for e in ev] == [(L.D, 0.5), (L.I, 1.0), (L.W, 5.0)]


def test_file_round_trip(tmp_path):
    events = [event("I", 0.016, 1.232), event("W", 2.5, 3.125)]
    p = tmp_path / "a_label.txt"
    p.write_text(format_label_lines(events))
    assert parse_label_file(p) == events


def test_derive_cas():
    assert derive_cas([event("W", 1, 2), event("S", 3, 4)]) == [
        event("C", 1, 2),
        event("W", 1, 2),
        event("C", 3, 4),
        event("S", 3, 4),
    ]
    assert derive_cas([event("D", 1, 2)]) == [event("D", 1, 2)]
    assert derive_cas([]) == []


# --- corpus analyses ------------------------------------------------------------------


def hand_corpus():
    f1 = [event("I", 0, 2), event("E", 2, 5), event("W", 4, 6), event("D", 1, 3)]
    f2 = [event("I", 0, 1), event("I", 0.5, 2), event("E", 3, 4), event("R", 3.5, 4.5), event("S", 4, 5), event("D", 0, 0.5)]
    return [f1, f2]


def test_overlap_table_hand_computed():
    # file 1: I=[0,2] E=[2,5] C=[4,6] D=[1,3]
    # file 2: I=[0,2] E=[3,4] C=[3.5,5] D=[0,0.5]
    t = corpus_overlap_table(hand_corpus())
    hand = {
        ("I", "E"): 0 / 4,
        ("I", "C"): 0 / 4,
        ("I", "D"): (1 + 0.5) / 4,
        ("E", "I"): 0 / 4,
        ("E", "C"): (1 + 0.5) / 4,
        ("E", "D"): 1 / 4,
        ("C", "I"): 0 / 3.5,
        ("C", "E"): (1 + 0.5) / 3.5,
        ("C", "D"): 0 / 3.5,
        ("D", "I"): (1 + 0.5) / 2.5,
        ("D", "E"): 1 / 2.5,
        ("D", "C"): 0 / 2.5,
    }
    for (x, y), v in hand.items():
        assert t.ratio(x, y) == 100.0 * v, (x, y)
    rows = [(x.value, y.value) for x, y, _ in t.rows()]
    assert rows[:3] == [("I", "E"), ("I", "C"), ("I", "D")] and len(rows) == 12


def test_overlap_ratio_of_sums_not_mean_of_ratios():
    corpus = [[event("I", 0, 1), event("D", 0, 1)], [event("I", 0, 9), event("D", 3, 4), event("E", 9, 10)], [event("W", 0, 1), event("E", 0, 1)]]
    t = corpus_overlap_table(corpus)
    assert t.ratio("I", "D") == pytest.approx(100 * 2 / 10)


def test_d_inside_i_is_100():
    corpus = [[event("I", 0, 3), event("D", 1, 2), event("E", 3, 4), event("W", 3, 4)]]
    assert corpus_overlap_table(corpus).ratio("D", "I") == 100.0


def test_overlap_missing_type():
    with pytest.raises(EmptyReference):
        corpus_overlap_table([[event("I", 0, 1)]])
    t = corpus_overlap_table([[event("I", 0, 1)]], missing="nan")
    assert math.isnan(t.ratio("D", "I"))
    assert t.ratio("I", "D") == 0.0


def test_overlap_csv_header():
    text = corpus_overlap_table(hand_corpus()).to_csv()
    assert text.splitlines()[0] == "label,overlapped_with,overlap_pct,covered_s,reference_s"
    assert len(text.splitlines()) == 13


def _item(events, device="Littmann3200", dur=15.0):
    return SimpleNamespace(events=events, device=device, duration=dur)


def test_stats_arithmetic():
    rep = corpus_statistics([_item([event("I", 0, 1.0), event("I", 2, 2.9), event("I", 4, 4.8)])])
    r = rep.row("I")
    assert r.count == 3
    assert r.total_min == pytest.approx(0.045)
    assert r.mean_s == pytest.approx(0.9)
    assert rep.recordings["all"].count == 1


def test_stats_c_tallies():
    rep = corpus_statistics([_item([event("W", 0, 2), event("R", 1, 3), event("S", 5, 6)])])
    assert rep.row("C").count == 3 and rep.row("C").total_s == 5
    assert rep.row("C_union").count == 2 and rep.row("C_union").total_s == 4


def test_stats_per_device_and_consistency():
    rep = corpus_statistics([_item([event("I", 0, 1)]), _item([event("I", 0, 2), event("D", 1, 1.5)], device="HFType1")])
    assert rep.row("I", "Littmann3200").count == 1
    assert rep.row("I", "HFType1").count == 1
    assert rep.row("I").count == 2
    for row in rep.labels.values():
        assert row.mean_s * row.count == pytest.approx(row.total_s)


def test_stats_empty_corpus():
    rep = corpus_statistics([])
    assert rep.row("I").count == 0 and rep.row("I").mean_s == 0.0
    lines = rep.to_csv().splitlines()
    assert lines[0] == "device,label,count,total_min,mean_s"
    assert lines[1] == "all,recordings,0,0.0000,0.0000"
