"""Synthetic 15-s lung-sound recordings with exact labels.

Breath phases are band-limited noise bursts, wheezes are harmonic tones and
crackles are short damped sinusoids.  Every label boundary sits on the 64-sample
frame grid and every component is gated to exactly its labelled span, so a
label says precisely where its sound is (crackle series excepted: one D label
spans the whole series, silent gaps included).
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from . import SAMPLE_RATE, STANDARD_SAMPLES
from .audio_io import LITTMANN, Recording, RecordingMeta, quantize, write_wav
from .dsp import HOP
from .errors import AudioIOError, ConfigInvalid
from .labels import LabelEvent, LabelType, sort_events, write_label_file

PHASE_GAP_FRAMES = 2
MIN_EVENT_FRAMES = 6
DEFAULT_SUBJECTS = 25


@dataclass(frozen=True)
class WheezeConfig:
    fundamental: float = 400.0
    harmonics: int = 2  # overtones above the fundamental
    amplitude: float = 0.15
    phase: str = "E"
    probability: float = 1.0  # per breath
    span: tuple[float, float] = (0.2, 0.8)  # fraction of the host phase


@dataclass(frozen=True)
class CrackleConfig:
    count: int = 5  # impulses per series
    decay_s: float = 0.003
    amplitude: float = 0.3
    phase: str = "I"
    probability: float = 1.0  # per breath
    in_phase_rate: float = 1.0  # share of series placed inside the host phase, rest in the pause


@dataclass(frozen=True)
class SynthConfig:
    breaths_per_minute: float = 15.0
    inhale_s: float = 1.0
    exhale_s: float = 1.2
    jitter: float = 0.1
    inhale_amp: float = 0.2
    exhale_amp: float = 0.1
    inhale_band: tuple[float, float] = (100.0, 1000.0)
    exhale_band: tuple[float, float] = (60.0, 700.0)
    wheeze: WheezeConfig | None = None
    crackles: CrackleConfig | None = None
    noise_floor: float = 0.005
    n_samples: int = STANDARD_SAMPLES
    seed: int = 0
    subject_id: str = "S000"
    location: str = "L1"

    def validate(self) -> None:
        cycle = 60.0 / self.breaths_per_minute if self.breaths_per_minute > 0 else 0.0
        if min(self.breaths_per_minute, self.inhale_s, self.exhale_s) <= 0:
            raise ConfigInvalid("rates and phase durations must be positive")
        if not 0 <= self.jitter < 0.5:
            raise ConfigInvalid("jitter must lie in [0, 0.5)")
        if (self.inhale_s + self.exhale_s) * (1 + self.jitter) >= cycle * (1 - self.jitter):
            raise ConfigInvalid("inhale + exhale do not fit in one breath cycle")
        for lo, hi in (self.inhale_band, self.exhale_band):
            if not 0 < lo < hi < SAMPLE_RATE / 2:
                raise ConfigInvalid(f"band ({lo}, {hi}) not inside (0, {SAMPLE_RATE // 2}) Hz")
        if self.noise_floor < 0 or self.n_samples < 4 * HOP:
            raise ConfigInvalid("noise_floor must be >= 0 and the recording non-trivial")
        if self.wheeze is not None:
            w = self.wheeze
            if not 200.0 <= w.fundamental <= 800.0:
                raise ConfigInvalid("wheeze fundamental must lie in [200, 800] Hz")
            if w.phase not in ("I", "E") or not 0 <= w.span[0] < w.span[1] <= 1 or w.harmonics < 0:
                raise ConfigInvalid("bad wheeze settings")
        if self.crackles is not None:
            c = self.crackles
            if c.count < 1 or c.decay_s <= 0 or c.phase not in ("I", "E") or not 0 <= c.in_phase_rate <= 1:
                raise ConfigInvalid("bad crackle settings")

    def digest(self) -> str:
        """Hash of every setting except the seed."""
        d = asdict(self)
        d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SynthResult:
    recording: Recording
    events: list[LabelEvent]
    components: dict = field(default_factory=dict)  # LabelType -> noise-free rendered signal


@lru_cache(maxsize=None)
def _bandpass(lo: float, hi: float) -> np.ndarray:
    return sp_signal.butter(4, (lo, hi), btype="bandpass", fs=SAMPLE_RATE, output="sos")


def _snap(seconds: float) -> int:
    """Sample index of the nearest frame boundary."""
    return int(round(seconds * SAMPLE_RATE / HOP)) * HOP


def _jit(rng, value, jitter):
    return value * (1.0 + rng.uniform(-jitter, jitter))


def _breath_timeline(cfg: SynthConfig, rng) -> list[tuple[str, int, int]]:
    """(phase, start_sample, end_sample) for every rendered phase."""
    limit = (cfg.n_samples // HOP) * HOP
    cycle = 60.0 / cfg.breaths_per_minute
    gap = PHASE_GAP_FRAMES * HOP
    t = _snap(rng.uniform(0.0, 0.5 * cycle))
    phases = []
    while t < limit:
        cyc = _snap(_jit(rng, cycle, cfg.jitter))
        inh = _snap(_jit(rng, cfg.inhale_s, cfg.jitter))
        exh = _snap(_jit(rng, cfg.exhale_s, cfg.jitter))
        i0, i1 = t, t + inh
        e0, e1 = i1 + gap, i1 + gap + exh
        for kind, a, b in (("I", i0, i1), ("E", e0, e1)):
            b = min(b, limit)
            if b - a >= MIN_EVENT_FRAMES * HOP:
                phases.append((kind, a, b))
        t += max(cyc, e1 - t + gap)
    return phases


def _gated_noise(rng, n, band, spans, amp) -> np.ndarray:
    noise = sp_signal.sosfilt(_bandpass(*band), rng.standard_normal(n + 2048))[2048:]
    out = np.zeros(n)
    for a, b in spans:
        seg = noise[a:b]
        out[a:b] = seg * (amp / np.sqrt(np.mean(seg**2)))
    return out


def render(cfg: SynthConfig) -> SynthResult:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    phases = _breath_timeline(cfg, rng)
    events = [LabelEvent(LabelType(k), a / SAMPLE_RATE, b / SAMPLE_RATE) for k, a, b in phases]
    comps = {
        LabelType.I: _gated_noise(rng, n, cfg.inhale_band, [(a, b) for k, a, b in phases if k == "I"], cfg.inhale_amp),
        LabelType.E: _gated_noise(rng, n, cfg.exhale_band, [(a, b) for k, a, b in phases if k == "E"], cfg.exhale_amp),
    }
    t = np.arange(n) / SAMPLE_RATE

    if cfg.wheeze is not None:
        w = cfg.wheeze
        tone = np.zeros(n)
        for k, a, b in phases:
            if k != w.phase or rng.random() >= w.probability:
                continue
            wa = a + _snap((b - a) * w.span[0] / SAMPLE_RATE)
            wb = a + _snap((b - a) * w.span[1] / SAMPLE_RATE)
            if wb - wa < MIN_EVENT_FRAMES * HOP:
                continue
            phi = rng.uniform(0, 2 * np.pi)
            for h in range(w.harmonics + 1):
                f = w.fundamental * (h + 1)
                if f >= SAMPLE_RATE / 2:
                    break
                tone[wa:wb] += (w.amplitude / 2**h) * np.sin(2 * np.pi * f * t[wa:wb] + phi)
            events.append(LabelEvent(LabelType.W, wa / SAMPLE_RATE, wb / SAMPLE_RATE))
        comps[LabelType.W] = tone

    if cfg.crackles is not None:
        c = cfg.crackles
        crack = np.zeros(n)
        tail = int(np.ceil(5 * c.decay_s * SAMPLE_RATE))
        hosts = [(a, b) for k, a, b in phases if k == c.phase]
        # pauses: from the end of each exhalation to the next inhalation (or the file end)
        starts = [a for k, a, _ in phases if k == "I"] + [(n // HOP) * HOP]
        pauses = []
        for k, _, b in phases:
            if k == "E":
                nxt = min((s for s in starts if s > b), default=(n // HOP) * HOP)
                pauses.append((b + HOP, nxt - HOP))
        for a, b in hosts:
            if rng.random() >= c.probability:
                continue
            if rng.random() >= c.in_phase_rate and pauses:
                a, b = pauses[int(rng.integers(len(pauses)))]
            span = b - a - tail
            if span < MIN_EVENT_FRAMES * HOP:
                continue
            lo = a + int(0.1 * span)
            hi = a + int(0.9 * span)
            onsets = np.sort(rng.integers(lo, hi, size=c.count))
            for o in onsets:
                f = rng.uniform(300.0, 900.0)
                m = np.arange(tail)
                burst = c.amplitude * np.exp(-m / (c.decay_s * SAMPLE_RATE)) * np.sin(2 * np.pi * f * m / SAMPLE_RATE)
                crack[o : o + tail] += burst[: n - o]
            da = int(onsets[0] // HOP) * HOP
            db = min(int(-(-(onsets[-1] + tail) // HOP)) * HOP, (n // HOP) * HOP)
            events.append(LabelEvent(LabelType.D, da / SAMPLE_RATE, db / SAMPLE_RATE))
        comps[LabelType.D] = crack

    mix = sum(comps.values()) + cfg.noise_floor * rng.standard_normal(n)
    samples = quantize(np.clip(mix, -1.0, 32767 / 32768))
    meta = RecordingMeta(subject_id=cfg.subject_id, device=LITTMANN, location=cfg.location, recorded_at="synthetic", source="synth")
    rec = Recording(samples=samples, meta=meta)
    return SynthResult(recording=rec, events=sort_events(events), components=comps)


def synth_recording(config: SynthConfig = SynthConfig()) -> tuple[Recording, list[LabelEvent]]:
    res = render(config)
    return res.recording, res.events


# --- corpora -------------------------------------------------------------------


def file_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def subject_config(subject_index: int, base_seed: int, wheeze_rate: float = 0.3, crackle_rate: float = 0.3):
    """Per-subject breathing profile; returns a function from file seed to config."""
    srng = np.random.default_rng(np.random.SeedSequence([base_seed, 10**6 + subject_index]))
    bpm = srng.uniform(12.0, 18.0)
    inhale = srng.uniform(0.9, 1.2)
    exhale = srng.uniform(1.1, 1.5)
    gain = srng.uniform(0.8, 1.25)
    f0 = srng.uniform(250.0, 700.0)
    subject = f"S{subject_index:03d}"

    def make(seed: int, location: str) -> SynthConfig:
        frng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        wheeze = WheezeConfig(fundamental=round(f0, 1), probability=0.7) if frng.random() < wheeze_rate else None
        crackles = CrackleConfig(in_phase_rate=0.95, probability=0.7) if frng.random() < crackle_rate else None
        return SynthConfig(
            breaths_per_minute=round(bpm, 3),
            inhale_s=round(inhale, 3),
            exhale_s=round(exhale, 3),
            inhale_amp=round(0.2 * gain, 4),
            exhale_amp=round(0.1 * gain, 4),
            wheeze=wheeze,
            crackles=crackles,
            seed=seed,
            subject_id=subject,
            location=location,
        )

    return make


MANIFEST_HEADER = ["file", "subject_id", "seed", "config_hash"]


def synth_corpus(n: int, base_seed: int, out_dir, n_subjects: int = DEFAULT_SUBJECTS, wheeze_rate=0.3, crackle_rate=0.3) -> list[dict]:
    """Write ``n`` recordings (WAV + label file) and ``manifest.csv`` into ``out_dir``.

    File ``i`` belongs to subject ``i % n_subjects``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise AudioIOError(f"{out}: {e}") from e
    makers = {}
    rows = []
    for i in range(n):
        s = i % n_subjects
        if s not in makers:
            makers[s] = subject_config(s, base_seed, wheeze_rate, crackle_rate)
        seed = file_seed(base_seed, i)
        cfg = makers[s](seed, f"L{1 + (i // n_subjects) % 8}")
        rec, events = synth_recording(cfg)
        stem = f"synth_{cfg.subject_id}_{cfg.location}_t{i:05d}"
        write_wav(out / f"{stem}.wav", rec)
        write_label_file(out / f"{stem}_label.txt", events)
        rows.append({"file": f"{stem}.wav", "subject_id": cfg.subject_id, "seed": seed, "config_hash": cfg.digest()})
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=MANIFEST_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows
