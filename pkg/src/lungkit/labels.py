"""Label files, interval algebra, corpus statistics and cross-type overlap ratios."""
from __future__ import annotations

import csv
import enum
import io
import math
import re
import warnings
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyReference, LabelRangeWarning, LabelSyntaxError

MAX_LABEL_TIME = 15.0
_TIME_EPS = 1e-9


class LabelType(str, enum.Enum):
    I = "I"
    E = "E"
    W = "W"
    S = "S"
    R = "R"
    C = "C"
    D = "D"

    def __str__(self):
        return self.value


CAS_KINDS = (LabelType.W, LabelType.S, LabelType.R)
OVERLAP_KINDS = (LabelType.I, LabelType.E, LabelType.C, LabelType.D)

_ALIASES = {
    "I": LabelType.I,
    "INHALATION": LabelType.I,
    "E": LabelType.E,
    "EXHALATION": LabelType.E,
    "W": LabelType.W,
    "WHEEZE": LabelType.W,
    "S": LabelType.S,
    "STRIDOR": LabelType.S,
    "R": LabelType.R,
    "RHONCHI": LabelType.R,
    "RHONCHUS": LabelType.R,
    "C": LabelType.C,
    "CAS": LabelType.C,
    "D": LabelType.D,
    "DAS": LabelType.D,
    "CRACKLE": LabelType.D,
    "CRACKLES": LabelType.D,
}


def label_type(token: str) -> LabelType:
    try:
        return _ALIASES[token.strip().upper()]
    except KeyError:
        raise ValueError(f"unknown label type {token!r}") from None


@dataclass(frozen=True)
class LabelEvent:
    kind: LabelType
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


def event(kind, start, end) -> LabelEvent:
    return LabelEvent(LabelType(kind), float(start), float(end))


def sort_events(events: Iterable[LabelEvent]) -> list[LabelEvent]:
    return sorted(events, key=lambda e: (e.start, e.end, e.kind.value))


class IntervalSet:
    """Sorted union of disjoint, non-degenerate half-open intervals ``[start, end)``.

    Overlapping or touching inputs are merged on construction.

    >>> IntervalSet([(0, 2), (1, 3), (5, 6)])
    IntervalSet([(0, 3), (5, 6)])
    >>> (IntervalSet([(0, 2)]) & IntervalSet([(1, 3)])).duration
    1
    """

    __slots__ = ("_iv",)

    def __init__(self, intervals: Iterable[tuple[float, float]] = ()):
        items = sorted((s, e) for s, e in intervals if e > s)
        merged: list[tuple[float, float]] = []
        for s, e in items:
            if merged and s <= merged[-1][1]:
                if e > merged[-1][1]:
                    merged[-1] = (merged[-1][0], e)
            else:
                merged.append((s, e))
        self._iv = tuple(merged)

    @classmethod
    def _trusted(cls, intervals) -> "IntervalSet":
        out = cls.__new__(cls)
        out._iv = tuple(intervals)
        return out

    @property
    def intervals(self) -> tuple[tuple[float, float], ...]:
        return self._iv

    def __iter__(self):
        return iter(self._iv)

    def __len__(self):
        return len(self._iv)

    def __bool__(self):
        return bool(self._iv)

    def __eq__(self, other):
        if not isinstance(other, IntervalSet):
            return NotImplemented
        return self._iv == other._iv

    def __hash__(self):
        return hash(self._iv)

    def __repr__(self):
        return f"IntervalSet({list(self._iv)!r})"

    @property
    def duration(self):
        return sum(e - s for s, e in self._iv)

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        a, b = self._iv, other._iv
        i = j = 0
        out = []
        while i < len(a) and j < len(b):
            s = max(a[i][0], b[j][0])
            e = min(a[i][1], b[j][1])
            if e > s:
                out.append((s, e))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return IntervalSet._trusted(out)

    __and__ = intersect

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(self._iv + other._iv)

    __or__ = union

    def shift(self, offset: float) -> "IntervalSet":
        return IntervalSet._trusted((s + offset, e + offset) for s, e in self._iv)

    def contains(self, t: float) -> bool:
        starts = [s for s, _ in self._iv]
        k = bisect_left(starts, t)
        if k < len(starts) and starts[k] == t:
            return True
        return k > 0 and t < self._iv[k - 1][1]


def intersect(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    return a.intersect(b)


def duration(s: IntervalSet) -> float:
    return s.duration


# --- label file grammar --------------------------------------------------------

_HMS = re.compile(r"^(\d+):(\d{1,2}):(\d{1,2}(?:\.\d*)?)$")


def parse_time(token: str) -> float:
    """Seconds from either ``12.5`` or ``HH:MM:SS.ffffff``."""
    m = _HMS.match(token)
    if m:
        h, mnt, sec = m.groups()
        return int(h) * 3600 + int(mnt) * 60 + float(sec)
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(f"non-finite time {token!r}")
    return value


def parse_label_lines(lines: Iterable[str], source=None, max_time: float = MAX_LABEL_TIME) -> list[LabelEvent]:
    events = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise LabelSyntaxError(f"expected 'TYPE START END', got {line!r}", line_no, source)
        try:
            kind = label_type(parts[0])
            start = parse_time(parts[1])
            end = parse_time(parts[2])
        except ValueError as e:
            raise LabelSyntaxError(str(e), line_no, source) from None
        if end <= start or start < 0 or end > max_time + _TIME_EPS:
            where = f"{source}:" if source is not None else ""
            warnings.warn(
                f"{where}{line_no}: rejected {kind} [{start}, {end}] (outside [0, {max_time}] or end <= start)",
                LabelRangeWarning,
                stacklevel=2,
            )
            continue
        events.append(LabelEvent(kind, start, end))
    return sort_events(events)


def parse_label_file(path, max_time: float = MAX_LABEL_TIME) -> list[LabelEvent]:
    with open(path, encoding="utf-8") as f:
        return parse_label_lines(f, source=str(path), max_time=max_time)


def format_time(seconds: float) -> str:
    return f"{seconds:.6f}"


def format_label_lines(events: Iterable[LabelEvent]) -> str:
    return "".join(f"{e.kind.value} {format_time(e.start)} {format_time(e.end)}\n" for e in events)


def write_label_file(path, events: Iterable[LabelEvent]) -> None:
    Path(path).write_text(format_label_lines(events), encoding="utf-8")


def derive_cas(events: Sequence[LabelEvent]) -> list[LabelEvent]:
    """Add a C event alongside every W/S/R event, keeping the originals."""
    out = list(events)
    out.extend(LabelEvent(LabelType.C, e.start, e.end) for e in events if e.kind in CAS_KINDS)
    return sort_events(out)


def to_interval_set(events: Iterable[LabelEvent], kind) -> IntervalSet:
    kind = LabelType(kind)
    return IntervalSet((e.start, e.end) for e in events if e.kind == kind)


def overlap_ratio(x: IntervalSet, y: IntervalSet) -> float:
    """Percentage of the duration of ``x`` that is also covered by ``y``."""
    dx = x.duration
    if dx <= 0:
        raise EmptyReference("reference interval set has zero duration")
    return 100.0 * (x.intersect(y).duration / dx)


# --- corpus-level analyses -----------------------------------------------------


@dataclass
class OverlapTable:
    """Duration-weighted overlap of each label type with the other three."""

    covered: dict  # (X, Y) -> seconds of X also covered by Y
    reference: dict  # X -> seconds of X

    def ratio(self, x, y) -> float:
        x, y = LabelType(x), LabelType(y)
        ref = self.reference.get(x, 0.0)
        if ref <= 0:
            return math.nan
        return 100.0 * (self.covered[(x, y)] / ref)

    def rows(self):
        for x in OVERLAP_KINDS:
            for y in OVERLAP_KINDS:
                if x != y:
                    yield x, y, self.ratio(x, y)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "overlapped_with", "overlap_pct", "covered_s", "reference_s"])
        for x, y, r in self.rows():
            w.writerow([x.value, y.value, _fmt(r, 3), _fmt(self.covered[(x, y)], 6), _fmt(self.reference[x], 6)])
        return buf.getvalue()


def _fmt(v: float, digits: int) -> str:
    return "nan" if math.isnan(v) else f"{v:.{digits}f}"


def _event_lists(corpus):
    for item in corpus:
        yield item.events if hasattr(item, "events") else item


def corpus_overlap_table(corpus, missing: str = "raise") -> OverlapTable:
    """Overlap ratios summed over files before dividing.

    ``corpus`` is an iterable of event lists (or objects with ``.events``);
    CAS labels are derived per file.  With ``missing="raise"`` a label type
    absent from the whole corpus raises :class:`EmptyReference`; with
    ``missing="nan"`` its row reads NaN.
    """
    covered = {(x, y): 0.0 for x in OVERLAP_KINDS for y in OVERLAP_KINDS if x != y}
    reference = {x: 0.0 for x in OVERLAP_KINDS}
    for events in _event_lists(corpus):
        full = derive_cas([e for e in events if e.kind != LabelType.C])
        sets = {k: to_interval_set(full, k) for k in OVERLAP_KINDS}
        for x in OVERLAP_KINDS:
            reference[x] += sets[x].duration
            for y in OVERLAP_KINDS:
                if x != y:
                    covered[(x, y)] += sets[x].intersect(sets[y]).duration
    if missing == "raise":
        absent = [x.value for x in OVERLAP_KINDS if reference[x] <= 0]
        if absent:
            raise EmptyReference(f"no duration for label type(s) {', '.join(absent)}")
    return OverlapTable(covered=covered, reference=reference)


@dataclass(frozen=True)
class StatsRow:
    count: int = 0
    total_s: float = 0.0

    @property
    def total_min(self) -> float:
        return self.total_s / 60.0

    @property
    def mean_s(self) -> float:
        return self.total_s / self.count if self.count else 0.0

    def __add__(self, other):
        return StatsRow(self.count + other.count, self.total_s + other.total_s)


STAT_LABELS = ("I", "E", "C", "W", "S", "R", "D", "C_union")
ALL_DEVICES = "all"


@dataclass
class StatsReport:
    labels: dict = field(default_factory=dict)  # (device, label) -> StatsRow
    recordings: dict = field(default_factory=dict)  # device -> StatsRow (count, seconds)

    def devices(self):
        seen = sorted(d for d in self.recordings if d != ALL_DEVICES)
        return seen + [ALL_DEVICES]

    def row(self, label: str, device: str = ALL_DEVICES) -> StatsRow:
        return self.labels.get((device, label), StatsRow())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["device", "label", "count", "total_min", "mean_s"])
        for dev in self.devices():
            rec = self.recordings.get(dev, StatsRow())
            w.writerow([dev, "recordings", rec.count, f"{rec.total_min:.4f}", f"{rec.mean_s:.4f}"])
            for lab in STAT_LABELS:
                r = self.row(lab, dev)
                w.writerow([dev, lab, r.count, f"{r.total_min:.4f}", f"{r.mean_s:.4f}"])
        return buf.getvalue()


def corpus_statistics(corpus) -> StatsReport:
    """Table-style counts and durations per label type and device.

    ``corpus`` items need ``.events``, ``.device`` and ``.duration`` (s).
    Label durations are sums over individual events; ``C`` counts every
    W/S/R event, while ``C_union`` counts disjoint intervals of their union.
    """
    labels: dict = {}
    recordings: dict = {}

    def add(key, table, row):
        table[key] = table.get(key, StatsRow()) + row

    for item in corpus:
        dev = item.device
        for d in (dev, ALL_DEVICES):
            add(d, recordings, StatsRow(1, float(item.duration)))
        base = [e for e in item.events if e.kind != LabelType.C]
        per_label = {lab: StatsRow() for lab in STAT_LABELS}
        for e in base:
            per_label[e.kind.value] = per_label[e.kind.value] + StatsRow(1, e.duration)
            if e.kind in CAS_KINDS:
                per_label["C"] = per_label["C"] + StatsRow(1, e.duration)
        cas_union = IntervalSet((e.start, e.end) for e in base if e.kind in CAS_KINDS)
        per_label["C_union"] = StatsRow(len(cas_union), cas_union.duration)
        for lab, row in per_label.items():
            for d in (dev, ALL_DEVICES):
                add((d, lab), labels, row)
    if ALL_DEVICES not in recordings:
        recordings[ALL_DEVICES] = StatsRow()
    return StatsReport(labels=labels, recordings=recordings)
