"""Dataset manifest, feature caching and cover augmentation."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .audio import (NormStats, encode_emotions, extract_fragment_features,
                    fragment, load_audio, resample, track_condition)
from .audio.io import TARGET_RATE


class DataError(Exception):
    """Ingestion failure carrying one message per bad item."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ManifestEntry:
    track_id: str
    audio_path: Path
    cover_path: Path | None
    emotions: list
    artist: str
    title: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)


def load_manifest(data_dir) -> DatasetManifest:
    """Read audio/, covers/ and labels.csv; every reference must resolve."""
    data_dir = Path(data_dir)
    labels = data_dir / "labels.csv"
    if not labels.exists():
        raise DataError([f"missing {labels}"])
    problems = []
    entries = []
    with open(labels, newline="") as f:
        reader = csv.DictReader(f)
        required = {"track_id", "artist", "title", "emotions"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError([f"labels.csv must have columns {sorted(required)}"])
        for lineno, row in enumerate(reader, start=2):
            track_id = (row.get("track_id") or "").strip()
            if not track_id:
                problems.append(f"row {lineno}: empty track_id")
                continue
            emotions = [e.strip() for e in (row.get("emotions") or "").split(";") if e.strip()]
            try:
                encode_emotions(emotions)
            except ValueError as exc:
                problems.append(f"row {lineno}: {exc}")
                continue
            audio_path = data_dir / "audio" / f"{track_id}.wav"
            if not audio_path.exists():
                problems.append(f"row {lineno}: missing audio file {audio_path}")
                continue
            cover_path = None
            for ext in (".png", ".jpg", ".jpeg"):
                candidate = data_dir / "covers" / f"{track_id}{ext}"
                if candidate.exists():
                    cover_path = candidate
                    break
            entries.append(ManifestEntry(
                track_id=track_id, audio_path=audio_path, cover_path=cover_path,
                emotions=emotions, artist=row.get("artist", "").strip(),
                title=row.get("title", "").strip()))
    if problems:
        raise DataError(problems)
    entries.sort(key=lambda e: e.track_id)
    return DatasetManifest(entries=entries)


def _file_checksum(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def extract_track_features(audio_path, n_fft=None, hop=None):
    """Decode, resample to 44100 Hz, fragment and featurize one track."""
    signal = resample(load_audio(audio_path), TARGET_RATE)
    kwargs = {}
    if n_fft:
        kwargs["n_fft"] = n_fft
    if hop:
        kwargs["hop"] = hop
    return [extract_fragment_features(frag, **kwargs) for frag in fragment(signal)]


def ingest(data_dir, cache_dir, n_fft=None, hop=None, progress=None):
    """Build the manifest and an idempotent per-track feature cache.

    Cache entries are keyed by the audio file's content checksum, so
    re-running without changes skips extraction. Min-max normalization is
    fit over the whole set and pooled embeddings are (re)written.
    """
    manifest = load_manifest(data_dir)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    per_track = {}
    hits = 0
    for entry in manifest.entries:
        checksum = _file_checksum(entry.audio_path)
        cache_path = cache_dir / f"{entry.track_id}.json"
        cached = None
        if cache_path.exists():
            with open(cache_path) as f:
                blob = json.load(f)
            if blob.get("checksum") == checksum:
                cached = blob
                hits += 1
        if cached is None:
            feats = extract_track_features(entry.audio_path, n_fft, hop)
            cached = {
                "track_id": entry.track_id,
                "checksum": checksum,
                "sample_rate": TARGET_RATE,
                "fragments": [f.to_dict() for f in feats],
            }
        per_track[entry.track_id] = (cache_path, cached)
        if progress:
            progress(entry.track_id)

    from .audio.features import FragmentFeatures
    all_vecs = []
    for _, blob in per_track.values():
        all_vecs.extend(FragmentFeatures.from_dict(d).to_vector()
                        for d in blob["fragments"])
    _, stats = normalize_over(all_vecs)
    stats.save(cache_dir / "norm_stats.json")
    for entry in manifest.entries:
        cache_path, blob = per_track[entry.track_id]
        feats = [FragmentFeatures.from_dict(d) for d in blob["fragments"]]
        cond = track_condition(feats, stats, encode_emotions(entry.emotions))
        blob["pooled_embedding"] = cond.audio_embedding.tolist()
        blob["norm_stats_id"] = stats.stats_id
        with open(cache_path, "w") as f:
            json.dump(blob, f)
    return manifest, stats, hits


def normalize_over(vectors):
    from .audio.condition import normalize_features
    vecs = [np.asarray(v) for v in vectors]
    stacked = np.stack(vecs)
    stats_id = hashlib.sha256(stacked.tobytes()).hexdigest()[:16]
    return normalize_features(vecs, stats_id=stats_id)


def load_cover(path, size) -> np.ndarray:
    """PNG/JPEG cover as [H,W,3] floats in [0,1], resized to ``size``."""
    with Image.open(path) as im:
        im = im.convert("RGB").resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


def augment(covers):
    """Each square cover yields original, hflip, rot90 CW and rot90 CCW."""
    out = []
    for img in covers:
        img = np.asarray(img)
        if img.shape[0] != img.shape[1]:
            raise ValueError("augmentation requires square images")
        out.extend([
            img.copy(),
            img[:, ::-1].copy(),
            np.rot90(img, k=-1, axes=(0, 1)).copy(),
            np.rot90(img, k=1, axes=(0, 1)).copy(),
        ])
    return out


def build_training_arrays(manifest: DatasetManifest, cache_dir, canvas_size):
    """Assemble (images [4N,3,H,W], embeddings, emotions) with augmentation."""
    cache_dir = Path(cache_dir)
    covers, embeds, emos = [], [], []
    for entry in manifest.entries:
        if entry.cover_path is None:
            raise DataError([f"track {entry.track_id} has no cover image"])
        with open(cache_dir / f"{entry.track_id}.json") as f:
            blob = json.load(f)
        covers.append(load_cover(entry.cover_path, canvas_size))
        embeds.append(np.array(blob["pooled_embedding"]))
        emos.append(encode_emotions(entry.emotions))
    images = np.stack(augment(covers)).transpose(0, 3, 1, 2)
    embeds = np.repeat(np.stack(embeds), 4, axis=0)
    emos = np.repeat(np.stack(emos), 4, axis=0)
    return images, embeds, emos
