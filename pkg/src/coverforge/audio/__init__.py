from .io import AudioFormatError, AudioSignal, Fragment, load_audio, resample, fragment
from .features import (FragmentFeatures, TempoInfo, chromagram, danceability,
                       extract_fragment_features, key_scale, loudness, mfcc,
                       spectral_contrast, spectral_peaks, tempo_onsets)
from .condition import (EMOTIONS, NormStats, TrackCondition, decode_emotions,
                        encode_emotions, normalize_features, track_condition)

__all__ = [
    "AudioFormatError", "AudioSignal", "Fragment", "load_audio", "resample",
    "fragment", "FragmentFeatures", "TempoInfo", "chromagram", "danceability",
    "extract_fragment_features", "key_scale", "loudness", "mfcc",
    "spectral_contrast", "spectral_peaks", "tempo_onsets", "EMOTIONS",
    "NormStats", "TrackCondition", "decode_emotions", "encode_emotions",
    "normalize_features", "track_condition",
]
