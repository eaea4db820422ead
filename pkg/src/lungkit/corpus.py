"""Discovery of ``<stem>.wav`` / ``<stem>_label.txt`` pairs under a data directory."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

from . import SAMPLE_RATE, STANDARD_SAMPLES
from .audio_io import DEFAULT_NAME_PATTERN, UNKNOWN, parse_filename, wav_info
from .errors import MetadataParseWarning
from .labels import LabelEvent, parse_label_file

LABEL_SUFFIX = "_label.txt"


@dataclass
class CorpusEntry:
    name: str
    wav_path: Path | None
    label_path: Path | None
    subject_id: str
    device: str
    n_samples: int
    sample_rate: int
    events: list[LabelEvent]

    @property
    def duration(self) -> float:
        """Seconds after length standardization (at most 15 s)."""
        return min(self.n_samples, STANDARD_SAMPLES) / self.sample_rate

    @property
    def group(self) -> str:
        """Subject used for leakage-free splitting; unknown subjects stand alone."""
        return self.subject_id if self.subject_id != UNKNOWN else f"~{self.name}"


def label_path_for(wav_path) -> Path:
    wav_path = Path(wav_path)
    return wav_path.with_name(wav_path.stem + LABEL_SUFFIX)


def load_corpus(data_dir, name_pattern: str = DEFAULT_NAME_PATTERN, require_audio: bool = True) -> list[CorpusEntry]:
    """Index every WAV (or, without ``require_audio``, every label file) under ``data_dir``.

    Entries are sorted by relative path so downstream output is independent of
    directory enumeration order.  WAVs without a label file get an empty event
    list.  Only WAV headers are read here.
    """
    root = Path(data_dir)
    entries = []
    unparsed = 0
    if require_audio:
        paths = sorted(root.rglob("*.wav"), key=lambda p: p.relative_to(root).as_posix())
    else:
        paths = sorted(root.rglob("*" + LABEL_SUFFIX), key=lambda p: p.relative_to(root).as_posix())
    for p in paths:
        if require_audio:
            wav = p
            lab = label_path_for(p)
            stem = p.stem
            n, sr = wav_info(wav)
        else:
            lab = p
            stem = p.name[: -len(LABEL_SUFFIX)]
            wav = p.with_name(stem + ".wav")
            if wav.exists():
                n, sr = wav_info(wav)
            else:
                wav, n, sr = None, STANDARD_SAMPLES, SAMPLE_RATE
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", MetadataParseWarning)
            meta = parse_filename(stem, name_pattern)
        unparsed += any(issubclass(w.category, MetadataParseWarning) for w in caught)
        events = parse_label_file(lab) if lab.exists() else []
        entries.append(
            CorpusEntry(
                name=stem,
                wav_path=wav,
                label_path=lab if lab.exists() else None,
                subject_id=meta.subject_id,
                device=meta.device,
                n_samples=n,
                sample_rate=sr,
                events=events,
            )
        )
    if unparsed:
        warnings.warn(
            f"{unparsed} of {len(entries)} file names did not match the metadata pattern",
            MetadataParseWarning,
            stacklevel=2,
        )
    return entries
