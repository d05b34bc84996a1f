"""16-bit PCM mono WAV reading and writing via the stdlib ``wave`` module."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import AudioError

SAMPLE_RATE = 8000


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Return samples scaled to [-1, 1) as float64 and the sample rate."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    except OSError as exc:
        raise AudioError(f"{path}: {exc.strerror or exc}") from exc
    if channels != 1:
        raise AudioError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit samples, found {8 * width}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def wav_num_samples(path: str | Path) -> tuple[int, int]:
    """(frame count, sample rate) from the header only."""
    try:
        with wave.open(str(path), "rb") as wf:
            return wf.getnframes(), wf.getframerate()
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    except OSError as exc:
        raise AudioError(f"{path}: {exc.strerror or exc}") from exc


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = to_pcm16(samples)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())
