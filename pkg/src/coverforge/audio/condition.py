"""Dataset-global feature normalization, emotion encoding, track pooling."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .features import FragmentFeatures

# Fixed emotion vocabulary; index order is part of the persisted format.
EMOTIONS = [
    "comfortable", "happy", "inspirational", "joy", "lonely", "funny",
    "nostalgic", "passionate", "quiet", "relaxed", "romantic", "sadness",
    "soulful", "sweet", "serious", "anger", "wary", "surprise", "fear",
]
N_EMOTIONS = len(EMOTIONS)
_EMOTION_INDEX = {name: i for i, name in enumerate(EMOTIONS)}


@dataclass
class NormStats:
    """Per-dimension min-max statistics fit once over the training set."""

    mins: np.ndarray
    maxs: np.ndarray
    stats_id: str = "default"

    def apply(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64)
        span = self.maxs - self.mins
        out = np.where(span > 0, (vec - self.mins) / np.where(span > 0, span, 1.0), 0.5)
        return np.clip(out, 0.0, 1.0)

    def to_dict(self):
        return {"stats_id": self.stats_id,
                "mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mins=np.array(d["mins"]), maxs=np.array(d["maxs"]),
                   stats_id=d.get("stats_id", "default"))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def normalize_features(dataset_features, stats_id="default"):
    """Fit min-max stats over all fragment vectors and normalize them.

    Returns (normalized vectors, NormStats). Constant dimensions map to 0.5.
    """
    if not dataset_features:
        raise ValueError("empty dataset")
    vecs = np.stack([
        f.to_vector() if isinstance(f, FragmentFeatures) else np.asarray(f, dtype=np.float64)
        for f in dataset_features
    ])
    stats = NormStats(mins=vecs.min(axis=0), maxs=vecs.max(axis=0), stats_id=stats_id)
    return np.stack([stats.apply(v) for v in vecs]), stats


def encode_emotions(labels) -> np.ndarray:
    """One-hot (multi-hot) encoding of 1-3 emotion labels."""
    if not 1 <= len(labels) <= 3:
        raise ValueError("expected 1-3 emotion labels")
    onehot = np.zeros(N_EMOTIONS)
    for label in labels:
        key = label.strip().lower()
        if key not in _EMOTION_INDEX:
            raise ValueError(
                f"unknown emotion {label!r}; vocabulary: {', '.join(EMOTIONS)}")
        onehot[_EMOTION_INDEX[key]] = 1.0
    return onehot


def decode_emotions(onehot) -> list[str]:
    onehot = np.asarray(onehot)
    return [EMOTIONS[i] for i in np.nonzero(onehot)[0]]


@dataclass
class TrackCondition:
    audio_embedding: np.ndarray
    emotion_onehot: np.ndarray


def track_condition(fragment_features, norm: NormStats, emotions) -> TrackCondition:
    """Mean-pool normalized fragment vectors into one track embedding."""
    if not len(fragment_features):
        raise ValueError("need at least one fragment")
    vecs = [
        norm.apply(f.to_vector() if isinstance(f, FragmentFeatures) else f)
        for f in fragment_features
    ]
    return TrackCondition(
        audio_embedding=np.mean(vecs, axis=0),
        emotion_onehot=np.asarray(emotions, dtype=np.float64),
    )
