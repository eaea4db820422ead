"""Turn per-frame probabilities into timed events."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import FRAME_HOP_S
from .dataset import runs
from .labels import LabelEvent, LabelType


@dataclass(frozen=True)
class PostprocessConfig:
    threshold: float = 0.5
    merge_gap: int = 2  # frames
    min_duration: int = 3  # frames

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.merge_gap < 0 or self.min_duration < 0:
            raise ValueError("merge_gap and min_duration must be non-negative")


def threshold_segments(probs, config: PostprocessConfig = PostprocessConfig()) -> np.ndarray:
    return np.asarray(probs) >= config.threshold


def merged_runs(grid, config: PostprocessConfig = PostprocessConfig()) -> list[tuple[int, int]]:
    """Positive runs after gap merging and minimum-length pruning, as frame index pairs."""
    merged: list[list[int]] = []
    for a, b in runs(grid):
        if merged and a - merged[-1][1] <= config.merge_gap:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged if b - a >= config.min_duration]


def segments_to_events(
    grid, config: PostprocessConfig = PostprocessConfig(), frame_hop: float = FRAME_HOP_S
) -> list[tuple[float, float]]:
    return [(a * frame_hop, b * frame_hop) for a, b in merged_runs(grid, config)]


def postprocess(probs, config: PostprocessConfig = PostprocessConfig(), frame_hop: float = FRAME_HOP_S):
    """Threshold then convert to ``[start, end)`` second intervals."""
    return segments_to_events(threshold_segments(probs, config), config, frame_hop)


def as_label_events(intervals, kind) -> list[LabelEvent]:
    kind = LabelType(kind)
    return [LabelEvent(kind, float(s), float(e)) for s, e in intervals]
