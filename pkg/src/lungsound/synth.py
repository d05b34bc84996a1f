"""Synthetic lung-sound corpus with spectrally distinct classes.

Each class has a recognisable signature:

* normal: breath noise band-limited to 100-600 Hz under a slow envelope
* continuous (wheeze-like): amplitude-modulated tone sweeping 300-800 Hz
* discontinuous (fine-crackle-like): breath noise plus 5-15 ms bursts
* both: superposition of the two previous signatures

Rhonchi, stridor and coarse crackles reuse the same generators with a
lower sweep band, a higher harmonic-rich band and longer bursts.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import (DatasetManifest, EventLabel, EventRecord, RecordingEntry, RecordingLabel,
                      save_manifest)
from .wavio import SAMPLE_RATE, write_wav

RECORDING_SECONDS = 9.6
EVENTS_PER_RECORDING = 4
RECORDING_CLASSES = (RecordingLabel.N, RecordingLabel.CAS, RecordingLabel.DAS, RecordingLabel.CD)

# recording class -> label of its (uniform) events
_EVENT_FOR_RECORDING = {
    RecordingLabel.N: EventLabel.N,
    RecordingLabel.CAS: EventLabel.W,
    RecordingLabel.DAS: EventLabel.FC,
    RecordingLabel.CD: EventLabel.WC,
}
_CONTINUOUS = {EventLabel.R, EventLabel.W, EventLabel.S}
_DISCONTINUOUS = {EventLabel.CC, EventLabel.FC}


def breath_noise(rng: np.random.Generator, n: int, fs: int = SAMPLE_RATE,
                 band: tuple[float, float] = (100.0, 600.0)) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    x = np.fft.irfft(spec, n)
    t = np.arange(n) / fs
    period = rng.uniform(2.5, 3.5)
    env = 0.25 + 0.75 * 0.5 * (1.0 - np.cos(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi)))
    x *= env
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def tone_sweep(rng: np.random.Generator, n: int, fs: int = SAMPLE_RATE,
               band: tuple[float, float] = (300.0, 800.0), harmonics: int = 1) -> np.ndarray:
    t = np.arange(n) / fs
    center = 0.5 * (band[0] + band[1])
    depth = 0.5 * (band[1] - band[0])
    freq = center + depth * np.sin(2 * np.pi * rng.uniform(0.3, 0.6) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(freq) / fs
    x = np.zeros(n)
    for h in range(1, harmonics + 1):
        x += np.sin(h * phase) / h
    am = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2.0, 4.0) * t + rng.uniform(0, 2 * np.pi))
    x *= am
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def transient_bursts(rng: np.random.Generator, n: int, fs: int = SAMPLE_RATE,
                     duration_ms: tuple[float, float] = (5.0, 15.0), rate_hz: float = 6.0,
                     freq_hz: tuple[float, float] = (400.0, 2000.0)) -> np.ndarray:
    x = np.zeros(n)
    count = max(1, rng.poisson(rate_hz * n / fs))
    for _ in range(count):
        length = int(round(rng.uniform(*duration_ms) * fs / 1000.0))
        start = int(rng.integers(0, max(1, n - length)))
        tt = np.arange(length) / fs
        burst = np.sin(2 * np.pi * rng.uniform(*freq_hz) * tt) * np.exp(-tt * 4000.0 / duration_ms[1])
        burst *= np.hanning(length)
        x[start:start + length] += rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0]) * burst
    peak = np.abs(x).max()
    return x / peak if peak > 0 else x


def synth_event(label: EventLabel, rng: np.random.Generator, n: int) -> np.ndarray:
    """One clip of ``n`` samples carrying the signature of ``label``."""
    x = breath_noise(rng, n)
    if label in (EventLabel.W, EventLabel.WC):
        x = 0.3 * x + tone_sweep(rng, n)
    elif label is EventLabel.R:
        x = 0.3 * x + tone_sweep(rng, n, band=(100.0, 250.0))
    elif label is EventLabel.S:
        x = 0.3 * x + tone_sweep(rng, n, band=(900.0, 1400.0), harmonics=3)
    if label in (EventLabel.FC, EventLabel.WC):
        x = x + 3.0 * transient_bursts(rng, n)
    elif label is EventLabel.CC:
        x = x + 3.0 * transient_bursts(rng, n, duration_ms=(15.0, 30.0), rate_hz=3.0,
                                       freq_hz=(150.0, 600.0))
    return x


def _normalize(x: np.ndarray) -> np.ndarray:
    peak = np.abs(x).max()
    return 0.8 * x / peak if peak > 0 else x


def recording_label_for(events: list[EventLabel]) -> RecordingLabel:
    cont = any(e in _CONTINUOUS or e is EventLabel.WC for e in events)
    disc = any(e in _DISCONTINUOUS or e is EventLabel.WC for e in events)
    if cont and disc:
        return RecordingLabel.CD
    if cont:
        return RecordingLabel.CAS
    if disc:
        return RecordingLabel.DAS
    return RecordingLabel.N


def synth_generate(out_dir: str | Path, n_per_class: int, seed: int,
                   task_level: str = "recording") -> DatasetManifest:
    """Write a synthetic corpus and its ``manifest.json`` into ``out_dir``.

    ``recording`` level: ``n_per_class`` recordings of each of N, CAS, DAS
    and CD (poor-quality recordings are never generated), each split into
    four equal events of the matching event class. ``event`` level:
    ``n_per_class`` events of each of the seven event classes, shuffled and
    packed four to a recording.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if task_level not in ("recording", "event"):
        raise ValueError(f"task_level must be 'recording' or 'event', got {task_level!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = int(round(RECORDING_SECONDS * SAMPLE_RATE))
    slot = total // EVENTS_PER_RECORDING

    plans: list[list[EventLabel]] = []
    if task_level == "recording":
        for cls in RECORDING_CLASSES:
            plans.extend([[_EVENT_FOR_RECORDING[cls]] * EVENTS_PER_RECORDING] * n_per_class)
    else:
        labels = [lab for lab in EventLabel for _ in range(n_per_class)]
        order = np.random.default_rng(seed).permutation(len(labels))
        labels = [labels[i] for i in order]
        plans = [labels[i:i + EVENTS_PER_RECORDING]
                 for i in range(0, len(labels), EVENTS_PER_RECORDING)]

    entries = []
    for idx, plan in enumerate(plans):
        rng = np.random.default_rng([seed, idx])
        audio = np.zeros(total)
        events = []
        for k in range(EVENTS_PER_RECORDING):
            start, end = k * slot, (k + 1) * slot if k < EVENTS_PER_RECORDING - 1 else total
            if k < len(plan):
                audio[start:end] = synth_event(plan[k], rng, end - start)
                events.append(EventRecord(start, end, plan[k]))
            else:
                audio[start:end] = breath_noise(rng, end - start)
        audio = _normalize(audio)
        rec_id = f"rec{idx:04d}"
        path = (out / f"{rec_id}.wav").resolve()
        write_wav(path, audio)
        label = (RECORDING_CLASSES[idx // n_per_class] if task_level == "recording"
                 else recording_label_for(plan))
        entries.append(RecordingEntry(rec_id, str(path), SAMPLE_RATE, label, tuple(events), total))

    manifest = DatasetManifest(tuple(entries))
    save_manifest(manifest, out / "manifest.json")
    return manifest
