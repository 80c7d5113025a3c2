"""WAV decoding, resampling and overlapped fragmenting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_RATE = 44100
FRAGMENT_SECONDS = 10.0
FRAGMENT_STEP = 5.0


class AudioFormatError(Exception):
    """Raised for WAV files we cannot decode (wrong codec/bit depth)."""


@dataclass
class AudioSignal:
    samples: np.ndarray          # mono, float in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class Fragment:
    samples: np.ndarray
    start_time: float
    duration: float
    sample_rate: int = TARGET_RATE


_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_audio(path) -> AudioSignal:
    """Read a PCM WAV file, mix to mono, scale to [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (OSError, PermissionError):
        raise
    except Exception as exc:
        raise AudioFormatError(f"cannot decode {path}: {exc}") from exc
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in _INT_SCALE:
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"unsupported sample format {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioSignal(samples=samples, sample_rate=int(rate))


def resample(signal: AudioSignal, target_rate: int) -> AudioSignal:
    """Band-limited (polyphase) resampling."""
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == signal.sample_rate:
        return AudioSignal(signal.samples.copy(), signal.sample_rate)
    g = math.gcd(target_rate, signal.sample_rate)
    out = resample_poly(signal.samples, target_rate // g, signal.sample_rate // g)
    return AudioSignal(out, target_rate)


def fragment(signal: AudioSignal) -> list[Fragment]:
    """Split into 10 s fragments starting every 5 s; the tail is zero-padded.

    For duration T >= 10 s the count is floor((T-10)/5)+1 full fragments
    plus one padded fragment when a remainder exists; shorter tracks yield
    a single padded fragment.
    """
    if len(signal.samples) == 0:
        raise ValueError("empty signal")
    if signal.sample_rate != TARGET_RATE:
        raise ValueError(f"fragmenting expects {TARGET_RATE} Hz input")
    sr = signal.sample_rate
    win = int(FRAGMENT_SECONDS * sr)
    step = int(FRAGMENT_STEP * sr)
    n = len(signal.samples)
    fragments = []
    start = 0
    while start + win <= n:
        fragments.append(Fragment(
            samples=signal.samples[start: start + win].copy(),
            start_time=start / sr,
            duration=FRAGMENT_SECONDS,
        ))
        start += step
    covered = start - step + win if fragments else 0
    if not fragments or covered < n:
        tail = signal.samples[start: n]
        padded = np.zeros(win)
        padded[: len(tail)] = tail
        fragments.append(Fragment(
            samples=padded,
            start_time=start / sr,
            duration=len(tail) / sr,
        ))
    return fragments
