"""Dataset manifests, event segmentation, filtering and splitting."""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import ManifestError
from .wavio import SAMPLE_RATE, wav_num_samples

MIN_DURATION_S = 9.2


class EventLabel(str, Enum):
    N = "N"
    R = "R"
    W = "W"
    S = "S"
    CC = "CC"
    FC = "FC"
    WC = "WC"


class RecordingLabel(str, Enum):
    N = "N"
    CAS = "CAS"
    DAS = "DAS"
    CD = "CD"
    PQ = "PQ"


@dataclass(frozen=True)
class EventRecord:
    start_sample: int
    end_sample: int
    label: EventLabel

    @property
    def length(self) -> int:
        return self.end_sample - self.start_sample


@dataclass(frozen=True)
class RecordingEntry:
    id: str
    audio_path: str
    sample_rate: int
    label: RecordingLabel
    events: tuple[EventRecord, ...]
    num_samples: int


@dataclass(frozen=True)
class DatasetManifest:
    recordings: tuple[RecordingEntry, ...]

    def __len__(self) -> int:
        return len(self.recordings)

    def by_id(self) -> dict[str, RecordingEntry]:
        return {r.id: r for r in self.recordings}


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    ratio: float
    seed: int


def _parse_label(enum_cls, value, where: str):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = "|".join(m.value for m in enum_cls)
        raise ManifestError(f"{where}: unknown label {value!r} (expected {allowed})") from None


def _check_events(entry_id: str, events: Iterable[EventRecord], num_samples: int) -> None:
    for i, ev in enumerate(events):
        if not 0 <= ev.start_sample < ev.end_sample <= num_samples:
            raise ManifestError(
                f"recording {entry_id!r} event {i}: interval [{ev.start_sample}, {ev.end_sample}) "
                f"outside recording of {num_samples} samples")


def validate_manifest(manifest: DatasetManifest) -> None:
    if not manifest.recordings:
        raise ManifestError("manifest contains no recordings")
    seen: set[str] = set()
    for entry in manifest.recordings:
        if entry.id in seen:
            raise ManifestError(f"duplicate recording id {entry.id!r}")
        seen.add(entry.id)
        if entry.sample_rate != SAMPLE_RATE:
            raise ManifestError(
                f"recording {entry.id!r}: sample rate {entry.sample_rate} Hz, only {SAMPLE_RATE} Hz "
                "is supported")
        _check_events(entry.id, entry.events, entry.num_samples)
        if entry.num_samples < MIN_DURATION_S * entry.sample_rate:
            warnings.warn(
                f"recording {entry.id!r} lasts {entry.num_samples / entry.sample_rate:.2f} s, "
                f"shorter than {MIN_DURATION_S} s", stacklevel=3)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest JSON file.

    Audio paths are resolved relative to the manifest's directory and each
    WAV header is read to bound-check the event intervals.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("recordings"), list):
        raise ManifestError(f"{path}: expected an object with a 'recordings' list")

    base = path.resolve().parent
    entries = []
    for i, rec in enumerate(doc["recordings"]):
        where = f"{path}: recording {i}"
        try:
            rec_id = str(rec["id"])
            rel = rec["path"]
            rate = int(rec["sample_rate"])
            raw_events = rec.get("events", [])
            events = tuple(
                EventRecord(int(ev["start"]), int(ev["end"]),
                            _parse_label(EventLabel, ev["label"], f"{where} event {j}"))
                for j, ev in enumerate(raw_events))
            label = _parse_label(RecordingLabel, rec.get("label"), where)
        except ManifestError:
            raise
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{where}: missing or invalid field ({exc})") from exc
        audio = (base / rel).resolve()
        num_samples, file_rate = wav_num_samples(audio)
        if file_rate != rate:
            raise ManifestError(
                f"{where}: manifest says {rate} Hz but {audio.name} is {file_rate} Hz")
        entries.append(RecordingEntry(rec_id, str(audio), rate, label, events, num_samples))

    manifest = DatasetManifest(tuple(entries))
    validate_manifest(manifest)
    return manifest


def manifest_to_json(manifest: DatasetManifest, base_dir: str | Path) -> dict:
    base = Path(base_dir).resolve()
    recs = []
    for r in manifest.recordings:
        p = Path(r.audio_path)
        try:
            rel = p.relative_to(base).as_posix()
        except ValueError:
            rel = str(p)
        recs.append({
            "id": r.id,
            "path": rel,
            "sample_rate": r.sample_rate,
            "label": r.label.value,
            "events": [{"start": e.start_sample, "end": e.end_sample, "label": e.label.value}
                       for e in r.events],
        })
    return {"recordings": recs}


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    doc = manifest_to_json(manifest, path.parent)
    path.write_text(json.dumps(doc, indent=1) + "\n")


def segment_events(entry: RecordingEntry, samples: np.ndarray) -> list[tuple[np.ndarray, EventLabel]]:
    """One waveform slice per annotated event. Overlapping events are allowed."""
    if len(samples) != entry.num_samples:
        raise ManifestError(
            f"recording {entry.id!r}: audio has {len(samples)} samples, manifest expects "
            f"{entry.num_samples}")
    _check_events(entry.id, entry.events, len(samples))
    return [(samples[e.start_sample:e.end_sample], e.label) for e in entry.events]


def filter_poor_quality(manifest: DatasetManifest) -> DatasetManifest:
    kept = tuple(r for r in manifest.recordings if r.label is not RecordingLabel.PQ)
    if len(kept) == len(manifest.recordings):
        return manifest
    return DatasetManifest(kept)


def class_counts(labels: Iterable[Hashable]) -> dict:
    return dict(Counter(labels))


def stratified_split(items: Sequence[tuple[str, Hashable]], ratio: float = 0.9,
                     seed: int = 0) -> SplitSpec:
    """Seeded per-class train/validation split.

    Each class contributes round(n_c * (1 - ratio)) items to validation.
    Output ids keep the order of ``items``.
    """
    if not items:
        raise ValueError("cannot split an empty item list")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError("item ids must be unique")

    by_class: dict = {}
    for pos, (_, label) in enumerate(items):
        by_class.setdefault(label, []).append(pos)

    rng = np.random.default_rng(seed)
    val_pos: set[int] = set()
    for label in sorted(by_class, key=str):
        members = by_class[label]
        n_val = int(np.floor(len(members) * (1.0 - ratio) + 0.5))
        n_val = min(n_val, len(members))
        order = rng.permutation(len(members))
        val_pos.update(members[k] for k in order[:n_val])

    train = tuple(ids[p] for p in range(len(ids)) if p not in val_pos)
    val = tuple(ids[p] for p in range(len(ids)) if p in val_pos)
    return SplitSpec(train, val, ratio, seed)
