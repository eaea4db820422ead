"""Per-frame feature extraction: spectrogram, MFCC (+delta, +acceleration), band energies.

Channel layout of the 193-wide feature matrix::

    0..128    |STFT| magnitude bins (15.625 Hz apart)
    129..148  static MFCC 0..19
    149..168  delta MFCC 0..19
    169..188  acceleration MFCC 0..19
    189..192  band power 0-250, 250-500, 500-1000, 0-2000 Hz
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

from . import SAMPLE_RATE
from .errors import Corrupt, ShapeMismatch, TooShort, VersionMismatch

N_FFT = 256
HOP = 64
N_BINS = N_FFT // 2 + 1
HIGHPASS_CUTOFF = 80.0
HIGHPASS_ORDER = 4
N_MELS = 40
N_MFCC = 20
MEL_FMIN = 0.0
MEL_FMAX = 2000.0
LOG_FLOOR = 1e-10
DELTA_WIDTH = 2
BANDS = ((0.0, 250.0), (250.0, 500.0), (500.0, 1000.0), (0.0, 2000.0))
STD_FLOOR = 1e-8
N_CHANNELS = N_BINS + 3 * N_MFCC + len(BANDS)

CHANNEL_LAYOUT = (
    tuple(f"spec_{b}" for b in range(N_BINS))
    + tuple(f"mfcc_{i}" for i in range(N_MFCC))
    + tuple(f"delta_{i}" for i in range(N_MFCC))
    + tuple(f"accel_{i}" for i in range(N_MFCC))
    + tuple(f"band_{int(lo)}_{int(hi)}" for lo, hi in BANDS)
)


def n_frames(n_samples: int) -> int:
    if n_samples < N_FFT:
        return 0
    return (n_samples - N_FFT) // HOP + 1


@dataclass
class FeatureMatrix:
    data: np.ndarray
    channel_layout: tuple = CHANNEL_LAYOUT

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, data: np.ndarray) -> np.ndarray:
        if data.shape[-1] != self.mean.shape[0]:
            raise ShapeMismatch(f"{data.shape[-1]} channels, norm stats have {self.mean.shape[0]}")
        return (data - self.mean) / self.std

    @classmethod
    def identity(cls, n_channels: int = N_CHANNELS) -> "NormStats":
        return cls(np.zeros(n_channels), np.ones(n_channels))


def as_array(x) -> np.ndarray:
    """Float64 data of a :class:`FeatureMatrix` or an array-like."""
    return np.asarray(x.data if isinstance(x, FeatureMatrix) else x, dtype=np.float64)


def fit_norm_stats(matrices) -> NormStats:
    """Per-channel mean and std pooled over every frame of ``matrices``."""
    count = 0
    total = None
    for m in matrices:
        d = as_array(m)
        s = d.sum(axis=0)
        total = s if total is None else total + s
        count += d.shape[0]
    if total is None or count == 0:
        raise ValueError("no frames to fit normalization on")
    mean = total / count
    sq = None
    for m in matrices:
        d = as_array(m)
        s = ((d - mean) ** 2).sum(axis=0)
        sq = s if sq is None else sq + s
    std = np.sqrt(sq / count)
    return NormStats(mean=mean, std=np.maximum(std, STD_FLOOR))


@lru_cache(maxsize=None)
def _highpass_sos(cutoff: float, order: int, fs: int) -> np.ndarray:
    return sp_signal.butter(order, cutoff, btype="highpass", fs=fs, output="sos")


def highpass(samples, cutoff: float = HIGHPASS_CUTOFF, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Causal 4th-order Butterworth high-pass."""
    x = np.asarray(samples, dtype=np.float64)
    return sp_signal.sosfilt(_highpass_sos(float(cutoff), HIGHPASS_ORDER, fs), x)


def highpass_response(freqs, cutoff: float = HIGHPASS_CUTOFF, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Complex frequency response of :func:`highpass` at ``freqs`` (Hz)."""
    _, h = sp_signal.sosfreqz(_highpass_sos(float(cutoff), HIGHPASS_ORDER, fs), worN=np.asarray(freqs, float), fs=fs)
    return h


@lru_cache(maxsize=None)
def _window() -> np.ndarray:
    return sp_signal.get_window("hann", N_FFT, fftbins=True)


def _frames(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or len(x) < N_FFT:
        raise TooShort(f"need at least {N_FFT} samples, got {x.shape}")
    return np.lib.stride_tricks.sliding_window_view(x, N_FFT)[::HOP]


def _stft(samples) -> np.ndarray:
    return np.fft.rfft(_frames(samples) * _window(), n=N_FFT, axis=1)


def stft_spectrogram(samples) -> np.ndarray:
    """One-sided magnitude spectrogram, frames x 129; frame k covers samples [64k, 64k+256)."""
    return np.abs(_stft(samples))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_mels: int = N_MELS, fmin: float = MEL_FMIN, fmax: float = MEL_FMAX) -> np.ndarray:
    """Triangular filters on the HTK Mel scale, each scaled to unit area in Hz.

    Returns an ``(n_mels, 129)`` weight matrix.
    """
    bin_hz = np.arange(N_BINS) * SAMPLE_RATE / N_FFT
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, N_BINS))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling)) * (2.0 / (hi - lo))
    fb.setflags(write=False)
    return fb


def deltas(coeffs: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    """Regression deltas over +-``width`` frames with edge replication."""
    n = np.arange(1, width + 1)
    denom = 2.0 * np.sum(n**2)
    padded = np.pad(coeffs, ((width, width), (0, 0)), mode="edge")
    T = coeffs.shape[0]
    out = np.zeros_like(coeffs, dtype=np.float64)
    for k in n:
        out += k * (padded[width + k : width + k + T] - padded[width - k : width - k + T])
    return out / denom


def _mfcc_from_power(power: np.ndarray) -> np.ndarray:
    mel = power @ mel_filterbank().T
    log_mel = np.log(np.maximum(mel, LOG_FLOOR))
    static = sp_fft.dct(log_mel, type=2, norm="ortho", axis=1)[:, :N_MFCC]
    d1 = deltas(static)
    d2 = deltas(d1)
    return np.hstack([static, d1, d2])


def mfcc_features(samples) -> np.ndarray:
    """frames x 60: 20 static MFCCs, 20 deltas, 20 accelerations."""
    power = np.abs(_stft(samples)) ** 2
    return _mfcc_from_power(power)


@lru_cache(maxsize=None)
def _band_masks() -> np.ndarray:
    centers = np.arange(N_BINS) * SAMPLE_RATE / N_FFT
    masks = np.array([(centers >= lo) & (centers < hi) for lo, hi in BANDS], dtype=np.float64)
    masks.setflags(write=False)
    return masks


def energy_summation(spectrogram: np.ndarray) -> np.ndarray:
    """Summed power per frame in each of the four bands; input is a magnitude spectrogram."""
    spec = np.asarray(spectrogram, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != N_BINS:
        raise ShapeMismatch(f"expected frames x {N_BINS} spectrogram, got {spec.shape}")
    return (spec**2) @ _band_masks().T


def extract_features(rec, norm: NormStats | None = None) -> FeatureMatrix:
    """High-pass, then spectrogram | MFCC | band energies, optionally z-scored."""
    samples = rec.samples if hasattr(rec, "samples") else rec
    filtered = highpass(samples)
    X = _stft(filtered)
    mag = np.abs(X)
    power = mag**2
    data = np.hstack([mag, _mfcc_from_power(power), power @ _band_masks().T])
    if norm is not None:
        data = norm.apply(data)
    return FeatureMatrix(data=data)


# --- feature cache file -------------------------------------------------------

FEATURE_MAGIC = b"LKFT"
FEATURE_VERSION = 1
_FT_HEADER = struct.Struct("<4sIII")


def save_features(path, fm: FeatureMatrix) -> None:
    data = np.ascontiguousarray(fm.data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_FT_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, data.shape[0], data.shape[1]))
        f.write(data.tobytes())


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _FT_HEADER.size:
        raise Corrupt(f"{path}: truncated header")
    magic, version, frames, channels = _FT_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC or version != FEATURE_VERSION:
        raise VersionMismatch(f"{path}: magic {magic!r} version {version}")
    body = raw[_FT_HEADER.size :]
    if len(body) != 4 * frames * channels:
        raise Corrupt(f"{path}: expected {frames}x{channels} values")
    data = np.frombuffer(body, dtype="<f4").reshape(frames, channels).astype(np.float64)
    return FeatureMatrix(data=data)
