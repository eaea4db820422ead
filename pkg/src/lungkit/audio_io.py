"""Reading, writing and length standardization of lung-sound WAV recordings.

Recordings are 16-bit PCM mono at 4000 Hz.  Littmann 3200 files arrive as
15.8-s clips and HF-Type-1 extracts as 2-min clips; both are cut down to their
first 15 s (60000 samples) before analysis.
"""
from __future__ import annotations

import re
import wave
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import SAMPLE_RATE, STANDARD_SAMPLES
from .errors import (
    AudioIOError,
    MetadataParseWarning,
    TooShort,
    TruncationWarning,
    UnsupportedFormat,
)

BIT_DEPTH = 16
PCM_SCALE = 32768.0
LITTMANN_SAMPLES = 63200  # 15.8 s
HF_TYPE1_SAMPLES = 480000  # 2 min

LITTMANN = "Littmann3200"
HF_TYPE1 = "HFType1"
UNKNOWN = "unknown"

# <source>_<subjectID>_<location>_<datetime>.wav
DEFAULT_NAME_PATTERN = (
    r"^(?P<source>[^_]+)_(?P<subject>[^_]+)_(?P<location>[^_]+)_(?P<datetime>[^_]+)$"
)

_SOURCE_DEVICES = {
    "steth": LITTMANN,
    "littmann": LITTMANN,
    "littmann3200": LITTMANN,
    "trunc": HF_TYPE1,
    "hf": HF_TYPE1,
    "hftype1": HF_TYPE1,
    "hf-type-1": HF_TYPE1,
}


@dataclass(frozen=True)
class RecordingMeta:
    subject_id: str = UNKNOWN
    device: str = UNKNOWN
    location: str = UNKNOWN
    recorded_at: str = UNKNOWN
    source: str = UNKNOWN


@dataclass
class Recording:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    bit_depth: int = BIT_DEPTH
    meta: RecordingMeta = field(default_factory=RecordingMeta)
    name: str = ""

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def needs_truncation(self) -> bool:
        return len(self.samples) > STANDARD_SAMPLES


def device_from_source(source: str) -> str:
    return _SOURCE_DEVICES.get(source.lower(), UNKNOWN)


def parse_filename(name: str, pattern: str = DEFAULT_NAME_PATTERN) -> RecordingMeta:
    """Derive recording metadata from a file name.

    ``pattern`` is a regex applied to the stem; named groups ``source``,
    ``subject``, ``location`` and ``datetime`` are used when present.  On a
    mismatch a :class:`MetadataParseWarning` is emitted and every field is
    left as ``"unknown"``.
    """
    stem = Path(name).name
    if stem.lower().endswith(".wav"):
        stem = stem[:-4]
    m = re.match(pattern, stem)
    if m is None:
        warnings.warn(
            f"file name {name!r} does not match metadata pattern", MetadataParseWarning, stacklevel=2
        )
        return RecordingMeta()
    groups = m.groupdict()
    source = groups.get("source") or UNKNOWN
    return RecordingMeta(
        subject_id=groups.get("subject") or UNKNOWN,
        device=device_from_source(source),
        location=groups.get("location") or UNKNOWN,
        recorded_at=groups.get("datetime") or UNKNOWN,
        source=source,
    )


def _check_params(params, path) -> None:
    if params.nchannels != 1:
        raise UnsupportedFormat(f"{path}: expected mono, got {params.nchannels} channels")
    if params.sampwidth != BIT_DEPTH // 8:
        raise UnsupportedFormat(f"{path}: expected 16-bit PCM, got {8 * params.sampwidth}-bit")
    if params.framerate != SAMPLE_RATE:
        raise UnsupportedFormat(f"{path}: expected {SAMPLE_RATE} Hz, got {params.framerate} Hz")


def wav_info(path) -> tuple[int, int]:
    """Return ``(n_samples, sample_rate)`` from the header only."""
    try:
        with wave.open(str(path), "rb") as w:
            params = w.getparams()
    except (OSError, EOFError) as e:
        raise AudioIOError(f"{path}: {e}") from e
    except wave.Error as e:
        raise UnsupportedFormat(f"{path}: {e}") from e
    _check_params(params, path)
    return params.nframes, params.framerate


def read_wav(path, name_pattern: str = DEFAULT_NAME_PATTERN) -> Recording:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            params = w.getparams()
            _check_params(params, path)
            raw = w.readframes(params.nframes)
    except (OSError, EOFError) as e:
        raise AudioIOError(f"{path}: {e}") from e
    except wave.Error as e:
        # wave raises wave.Error for non-PCM encodings and malformed headers
        raise UnsupportedFormat(f"{path}: {e}") from e
    ints = np.frombuffer(raw, dtype="<i2")
    samples = ints.astype(np.float64) / PCM_SCALE
    meta = parse_filename(path.name, name_pattern)
    return Recording(samples=samples, meta=meta, name=path.stem)


def write_wav(path, rec: Recording) -> None:
    """Write ``rec`` as 16-bit PCM mono.  Samples are clipped to the int16 range."""
    ints = np.clip(np.round(np.asarray(rec.samples) * PCM_SCALE), -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(BIT_DEPTH // 8)
            w.setframerate(rec.sample_rate)
            w.writeframes(ints.tobytes())
    except OSError as e:
        raise AudioIOError(f"{path}: {e}") from e


def quantize(samples: np.ndarray) -> np.ndarray:
    """Round amplitudes to the nearest 16-bit PCM level (what a WAV round trip yields)."""
    ints = np.clip(np.round(np.asarray(samples) * PCM_SCALE), -32768, 32767)
    return ints / PCM_SCALE


def standardize_length(rec: Recording) -> Recording:
    n = len(rec.samples)
    if n < STANDARD_SAMPLES:
        raise TooShort(f"{rec.name or 'recording'}: {n} samples < {STANDARD_SAMPLES}")
    if n == STANDARD_SAMPLES:
        return rec
    if n not in (LITTMANN_SAMPLES, HF_TYPE1_SAMPLES):
        warnings.warn(
            f"{rec.name or 'recording'}: unexpected length {n}; keeping first {STANDARD_SAMPLES}",
            TruncationWarning,
            stacklevel=2,
        )
    return replace(rec, samples=rec.samples[:STANDARD_SAMPLES].copy())
