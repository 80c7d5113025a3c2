"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from coverforge.audio.io import Fragment, TARGET_RATE


def make_fragment(samples, sr=TARGET_RATE):
    samples = np.asarray(samples, dtype=np.float64)
    return Fragment(samples=samples, start_time=0.0,
                    duration=len(samples) / sr, sample_rate=sr)


def sine_fragment(freq, duration=0.5, amplitude=1.0, sr=TARGET_RATE):
    t = np.arange(int(duration * sr)) / sr
    return make_fragment(amplitude * np.sin(2 * np.pi * freq * t), sr)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
