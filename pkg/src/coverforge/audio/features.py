"""Per-fragment music features.

All features are computed from a short-time Fourier transform with Hann
windows and frame-averaged into a single vector per fragment. Silence is
handled with validity-flagged defaults rather than NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fftpack import dct

from .io import Fragment

N_FFT = 2048
HOP = 512
N_MELS = 64
N_MFCC = 13
N_CONTRAST_BANDS = 6
N_PEAKS = 8
CONTRAST_FMIN = 200.0
CONTRAST_QUANTILE = 0.2
LOG_FLOOR = 1e-10
LOUDNESS_FLOOR_DB = -80.0
BPM_MIN, BPM_MAX = 30.0, 300.0

KEY_NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]

# Krumhansl-Schmuckler key profiles
_MAJOR_PROFILE = np.array([6.35, 2.23, 3.48, 2.33, 4.38, 4.09,
                           2.52, 5.19, 2.39, 3.66, 2.29, 2.88])
_MINOR_PROFILE = np.array([6.33, 2.68, 3.52, 5.38, 2.60, 3.53,
                           2.54, 4.75, 3.98, 2.69, 3.34, 3.17])


def stft_magnitude(samples, n_fft=N_FFT, hop=HOP):
    """Hann-windowed STFT magnitudes, frames along axis 0."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < n_fft:
        raise ValueError(f"fragment shorter than the analysis window ({n_fft})")
    n_frames = 1 + (len(x) - n_fft) // hop
    window = np.hanning(n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:n_frames]
    return np.abs(np.fft.rfft(frames * window, axis=1))


def mel_filterbank(sr, n_fft=N_FFT, n_mels=N_MELS):
    """Triangular filters on the HTK mel scale, 0 .. sr/2."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sr / 2), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sr)
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, ctr, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / max(ctr - lo, 1e-12)
        fall = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def mfcc(frag: Fragment, n_fft=N_FFT, hop=HOP, n_mels=N_MELS, n_mfcc=N_MFCC):
    """Frame-averaged MFCC vector (STFT -> mel -> log -> DCT-II)."""
    mag = stft_magnitude(frag.samples, n_fft, hop)
    power = mag ** 2
    fb = mel_filterbank(frag.sample_rate, n_fft, n_mels)
    mel = np.maximum(power @ fb.T, LOG_FLOOR)
    coeffs = dct(np.log(mel), type=2, axis=1, norm="ortho")[:, :n_mfcc]
    return coeffs.mean(axis=0)


def chromagram(frag: Fragment) -> np.ndarray:
    """12 pitch-class energies, frame-averaged and max-normalized."""
    mag = stft_magnitude(frag.samples)
    freqs = np.fft.rfftfreq(N_FFT, d=1.0 / frag.sample_rate)
    energy = (mag ** 2).mean(axis=0)
    pos = freqs > 20.0  # ignore DC and sub-audible bins
    pitch_class = (np.round(12.0 * np.log2(freqs[pos] / 440.0)).astype(int) + 9) % 12
    chroma = np.bincount(pitch_class, weights=energy[pos], minlength=12)
    peak = chroma.max()
    return chroma / peak if peak > 0 else chroma


def spectral_contrast(frag: Fragment, n_bands=N_CONTRAST_BANDS) -> np.ndarray:
    """Octave-band peak/valley log-magnitude difference, frame-averaged."""
    mag = stft_magnitude(frag.samples)
    freqs = np.fft.rfftfreq(N_FFT, d=1.0 / frag.sample_rate)
    edges = [0.0] + [CONTRAST_FMIN * 2.0 ** k for k in range(n_bands)] + [frag.sample_rate / 2 + 1]
    out = np.zeros(n_bands + 1)
    for b in range(n_bands + 1):
        sel = (freqs >= edges[b]) & (freqs < edges[b + 1])
        if not np.any(sel):
            continue
        band = np.sort(mag[:, sel], axis=1)
        q = max(1, int(CONTRAST_QUANTILE * band.shape[1]))
        valley = np.log(np.maximum(band[:, :q].mean(axis=1), LOG_FLOOR))
        peak = np.log(np.maximum(band[:, -q:].mean(axis=1), LOG_FLOOR))
        out[b] = (peak - valley).mean()
    return out


def spectral_peaks(frag: Fragment, k=N_PEAKS) -> np.ndarray:
    """Top-k spectral peaks as (freq_hz, magnitude) pairs, magnitude-ordered.

    Peak frequency and height are refined with parabolic interpolation of
    the frame-averaged magnitude spectrum; missing peaks pad with zeros.
    """
    mag = stft_magnitude(frag.samples).mean(axis=0)
    bin_hz = frag.sample_rate / N_FFT
    inner = mag[1:-1]
    is_peak = (inner > mag[:-2]) & (inner >= mag[2:]) & (inner > 0)
    idx = np.nonzero(is_peak)[0] + 1
    out = np.zeros(2 * k)
    if idx.size == 0:
        return out
    alpha, beta, gamma = mag[idx - 1], mag[idx], mag[idx + 1]
    denom = alpha - 2 * beta + gamma
    delta = np.where(np.abs(denom) > 1e-30, 0.5 * (alpha - gamma) / denom, 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    height = beta - 0.25 * (alpha - gamma) * delta
    order = np.argsort(height)[::-1][:k]
    for j, i in enumerate(order):
        out[2 * j] = (idx[i] + delta[i]) * bin_hz
        out[2 * j + 1] = height[i]
    return out


def loudness(frag: Fragment) -> float:
    """RMS level in dB re full scale, floored at -80 dB."""
    rms = np.sqrt(np.mean(frag.samples ** 2))
    if rms <= 0:
        return LOUDNESS_FLOOR_DB
    return float(max(20.0 * np.log10(rms), LOUDNESS_FLOOR_DB))


def onset_envelope(frag: Fragment):
    """Half-wave-rectified spectral flux per frame plus its frame rate."""
    mag = stft_magnitude(frag.samples)
    flux = np.maximum(0.0, np.diff(mag, axis=0)).sum(axis=1)
    fps = frag.sample_rate / HOP
    return flux, fps


@dataclass
class TempoInfo:
    bpm: float
    onset_rate: float
    mean_beat_volume: float
    valid: bool = True


def _detect_onsets(env):
    """Indices of envelope peaks above an adaptive (local mean) threshold."""
    if env.max() <= 0:
        return np.array([], dtype=int)
    w = 8
    pad = np.pad(env, w, mode="edge")
    local_mean = np.convolve(pad, np.ones(2 * w + 1) / (2 * w + 1), mode="valid")
    thresh = local_mean + 0.1 * env.std() + 0.05 * env.max()
    inner = env[1:-1]
    peaks = (inner > env[:-2]) & (inner >= env[2:]) & (inner > thresh[1:-1])
    return np.nonzero(peaks)[0] + 1


def tempo_onsets(frag: Fragment) -> TempoInfo:
    """BPM from onset-envelope autocorrelation, onset rate, beat volume."""
    env, fps = onset_envelope(frag)
    if env.max() <= 0:
        return TempoInfo(bpm=(BPM_MIN + BPM_MAX) / 2, onset_rate=0.0,
                         mean_beat_volume=0.0, valid=False)
    onsets = _detect_onsets(env)
    onset_rate = len(onsets) / frag.duration if frag.duration > 0 else 0.0

    centered = env - env.mean()
    ac = np.correlate(centered, centered, mode="full")[len(env) - 1:]
    lag_min = max(2, int(np.floor(fps * 60.0 / BPM_MAX)))
    lag_max = min(len(ac) - 2, int(np.ceil(fps * 60.0 / BPM_MIN)))
    if lag_max <= lag_min:
        bpm = (BPM_MIN + BPM_MAX) / 2
    else:
        window = ac[lag_min: lag_max + 1]
        best = int(np.argmax(window)) + lag_min
        a, b, c = ac[best - 1], ac[best], ac[best + 1]
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if abs(denom) > 1e-30 else 0.0
        lag = best + np.clip(delta, -0.5, 0.5)
        bpm = float(np.clip(60.0 * fps / lag, BPM_MIN, BPM_MAX))

    half = int(0.05 * frag.sample_rate)
    vols = []
    for o in onsets:
        center = int(o * HOP + N_FFT / 2)
        lo, hi = max(0, center - half), min(len(frag.samples), center + half)
        if hi > lo:
            vols.append(np.sqrt(np.mean(frag.samples[lo:hi] ** 2)))
    mbv = float(np.mean(vols)) if vols else 0.0
    return TempoInfo(bpm=bpm, onset_rate=onset_rate, mean_beat_volume=mbv)


def dfa_exponent(series) -> float:
    """Detrended fluctuation analysis scaling exponent."""
    x = np.asarray(series, dtype=np.float64)
    y = np.cumsum(x - x.mean())
    n = len(y)
    sizes = np.unique(np.geomspace(4, max(5, n // 4), num=12).astype(int))
    sizes = sizes[sizes >= 4]
    fluct = []
    used = []
    for s in sizes:
        m = n // s
        if m < 2:
            continue
        seg = y[: m * s].reshape(m, s)
        t = np.arange(s)
        tc = t - t.mean()
        slope = (seg * tc).sum(axis=1) / (tc ** 2).sum()
        intercept = seg.mean(axis=1)
        resid = seg - (intercept[:, None] + slope[:, None] * tc)
        f = np.sqrt((resid ** 2).mean())
        if f > 0:
            fluct.append(f)
            used.append(s)
    if len(fluct) < 2:
        return 0.5
    coef = np.polyfit(np.log(used), np.log(fluct), 1)
    return float(coef[0])


def danceability(frag: Fragment):
    """Rhythm regularity in [0,1]: lower DFA exponent means more danceable.

    Returns (value, valid); silence yields (0.0, False).
    """
    env, _ = onset_envelope(frag)
    if env.max() <= 0:
        return 0.0, False
    alpha = dfa_exponent(env)
    return float(np.clip(1.0 - alpha, 0.0, 1.0)), True


def key_scale(chroma):
    """Krumhansl-Schmuckler template correlation over 24 rotated profiles."""
    c = np.asarray(chroma, dtype=np.float64)
    if c.shape != (12,):
        raise ValueError("chroma must be a 12-vector")
    if not np.any(c > 0):
        raise ValueError("all-zero chroma has no key")
    best, best_corr = None, -np.inf
    for scale, profile in (("major", _MAJOR_PROFILE), ("minor", _MINOR_PROFILE)):
        for key in range(12):
            corr = np.corrcoef(c, np.roll(profile, key))[0, 1]
            if corr > best_corr:
                best_corr, best = corr, (key, scale)
    return best


@dataclass
class FragmentFeatures:
    mfcc: np.ndarray
    chroma: np.ndarray
    spectral_contrast: np.ndarray
    spectral_peaks: np.ndarray
    loudness: float
    danceability: float
    bpm: float
    onset_rate: float
    mean_beat_volume: float
    key: int
    scale: str
    flags: dict = field(default_factory=dict)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.mfcc, self.chroma, self.spectral_contrast, self.spectral_peaks,
            [self.loudness, self.danceability, self.bpm, self.onset_rate,
             self.mean_beat_volume, float(self.key),
             1.0 if self.scale == "minor" else 0.0],
        ])

    def to_dict(self) -> dict:
        return {
            "mfcc": self.mfcc.tolist(),
            "chroma": self.chroma.tolist(),
            "spectral_contrast": self.spectral_contrast.tolist(),
            "spectral_peaks": self.spectral_peaks.tolist(),
            "loudness": self.loudness,
            "danceability": self.danceability,
            "bpm": self.bpm,
            "onset_rate": self.onset_rate,
            "mean_beat_volume": self.mean_beat_volume,
            "key": self.key,
            "scale": self.scale,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mfcc=np.array(d["mfcc"]), chroma=np.array(d["chroma"]),
            spectral_contrast=np.array(d["spectral_contrast"]),
            spectral_peaks=np.array(d["spectral_peaks"]),
            loudness=d["loudness"], danceability=d["danceability"],
            bpm=d["bpm"], onset_rate=d["onset_rate"],
            mean_beat_volume=d["mean_beat_volume"], key=d["key"],
            scale=d["scale"], flags=d.get("flags", {}),
        )


FEATURE_VECTOR_DIM = N_MFCC + 12 + (N_CONTRAST_BANDS + 1) + 2 * N_PEAKS + 7


def extract_fragment_features(frag: Fragment, n_fft=N_FFT, hop=HOP) -> FragmentFeatures:
    chroma = chromagram(frag)
    tempo = tempo_onsets(frag)
    dance, dance_valid = danceability(frag)
    if np.any(chroma > 0):
        key, scale = key_scale(chroma)
    else:
        key, scale = 0, "major"
    return FragmentFeatures(
        mfcc=mfcc(frag, n_fft=n_fft, hop=hop),
        chroma=chroma,
        spectral_contrast=spectral_contrast(frag),
        spectral_peaks=spectral_peaks(frag),
        loudness=loudness(frag),
        danceability=dance,
        bpm=tempo.bpm,
        onset_rate=tempo.onset_rate,
        mean_beat_volume=tempo.mean_beat_volume,
        key=key,
        scale=scale,
        flags={"tempo_valid": tempo.valid, "danceability_valid": dance_valid},
    )
