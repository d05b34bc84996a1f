"""STFT and Mel spectrograms, dB scaling and classifier input images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IMAGE_SIZE = 224


@dataclass(frozen=True)
class StftConfig:
    window_seconds: float = 0.02
    hop_seconds: float = 0.01
    fft_size: int = 256
    center: bool = False

    def window_length(self, sample_rate: int) -> int:
        return int(round(self.window_seconds * sample_rate))

    def hop_length(self, sample_rate: int) -> int:
        return int(round(self.hop_seconds * sample_rate))

    def validate(self, sample_rate: int) -> None:
        win = self.window_length(sample_rate)
        hop = self.hop_length(sample_rate)
        if hop < 1 or win < 2:
            raise ValueError(f"window/hop too small at {sample_rate} Hz")
        if self.hop_seconds > self.window_seconds:
            raise ValueError("hop must not exceed the window length")
        if self.fft_size < win or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two >= {win}, got {self.fft_size}")


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float = 4000.0


@dataclass
class Spectrogram:
    values: np.ndarray      # [n_bins, n_frames]
    bin_hz: float
    frame_hop_s: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def hann_window(n: int, periodic: bool = True) -> np.ndarray:
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    denom = n if periodic else n - 1
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / denom))


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    batch = x.shape[:-1]
    out = x[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*batch, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*batch, n)
        size *= 2
    return out


def frame_signal(samples: np.ndarray, win: int, hop: int) -> np.ndarray:
    if len(samples) < win:
        raise ValueError(f"signal of {len(samples)} samples is shorter than the {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(samples, win)[::hop]
    return frames


def stft_magnitude(samples: np.ndarray, sample_rate: int, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """|STFT| with a periodic Hann window; values are [fft_size/2 + 1, n_frames]."""
    cfg.validate(sample_rate)
    win = cfg.window_length(sample_rate)
    hop = cfg.hop_length(sample_rate)
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("expected a nonempty 1-D waveform")
    if cfg.center:
        x = np.pad(x, win // 2, mode="reflect")
    frames = frame_signal(x, win, hop) * hann_window(win, periodic=True)
    padded = np.zeros((frames.shape[0], cfg.fft_size))
    padded[:, :win] = frames
    spec = np.abs(fft(padded)[:, :cfg.fft_size // 2 + 1])
    return Spectrogram(spec.T.copy(), sample_rate / cfg.fft_size, hop / sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    return pts[1:-1]


def mel_filterbank(cfg: MelConfig, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular filters equally spaced on the HTK mel axis, each scaled to peak 1."""
    if not 0.0 <= cfg.f_min < cfg.f_max <= sample_rate / 2:
        raise ValueError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got {cfg.f_min}, {cfg.f_max}")
    if cfg.n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    peaks = bank.max(axis=1)
    empty = np.flatnonzero(peaks <= 0)
    if empty.size:
        raise ValueError(
            f"{cfg.n_mels} mel filters is too many for fft_size {fft_size}: "
            f"filter(s) {empty.tolist()} contain no FFT bin")
    return bank / peaks[:, None]


def mel_spectrogram(samples: np.ndarray, sample_rate: int, stft_cfg: StftConfig = StftConfig(),
                    mel_cfg: MelConfig = MelConfig()) -> Spectrogram:
    """Mel filterbank applied to the power (squared magnitude) spectrogram."""
    spec = stft_magnitude(samples, sample_rate, stft_cfg)
    bank = mel_filterbank(mel_cfg, stft_cfg.fft_size, sample_rate)
    return Spectrogram(bank @ spec.values ** 2, float("nan"), spec.frame_hop_s)


def to_decibels(values: np.ndarray, floor_db: float = -80.0, power: bool = False) -> np.ndarray:
    """Convert to dB, clamped to ``floor_db`` below the maximum.

    Amplitudes use 20*log10; pass ``power=True`` for power spectra (10*log10).
    """
    if floor_db >= 0:
        raise ValueError("floor_db must be negative")
    values = np.asarray(values, dtype=np.float64)
    db = (10.0 if power else 20.0) * np.log10(np.maximum(values, 1e-10))
    top = db.max()
    return np.clip(db, top - abs(floor_db), top)


def resize_bilinear(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with corner pixels aligned."""
    m = np.asarray(m, dtype=np.float64)
    h, w = m.shape

    def axis(n_in: int, n_out: int):
        pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
        i0 = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, fr = axis(h, out_h)
    c0, c1, fc = axis(w, out_w)
    rows = m[r0] * (1.0 - fr)[:, None] + m[r1] * fr[:, None]
    return rows[:, c0] * (1.0 - fc)[None, :] + rows[:, c1] * fc[None, :]


def to_feature_image(m: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Resize to size x size, min-max normalize to [0, 1] and replicate to 3 channels."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ValueError(f"expected a matrix of at least 2x2, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("feature matrix contains non-finite values")
    if m.min() == m.max():
        # interpolation rounding would otherwise turn a constant into noise
        return np.zeros((3, size, size), dtype=np.float32)
    img = resize_bilinear(m, size, size)
    lo, hi = img.min(), img.max()
    img = np.clip((img - lo) / (hi - lo), 0.0, 1.0) if hi > lo else np.zeros_like(img)
    return np.repeat(img[None].astype(np.float32), 3, axis=0)


def feature_matrix(samples: np.ndarray, sample_rate: int, kind: str,
                   stft_cfg: StftConfig = StftConfig(), mel_cfg: MelConfig = MelConfig(),
                   floor_db: float = -80.0) -> np.ndarray:
    """dB-scaled STFT or Mel spectrogram, low frequencies in row 0."""
    if kind == "stft":
        return to_decibels(stft_magnitude(samples, sample_rate, stft_cfg).values, floor_db)
    if kind == "mel":
        return to_decibels(mel_spectrogram(samples, sample_rate, stft_cfg, mel_cfg).values,
                           floor_db, power=True)
    raise ValueError(f"unknown feature kind {kind!r} (expected 'stft' or 'mel')")


def featurize(samples: np.ndarray, sample_rate: int, kind: str) -> np.ndarray:
    """Waveform -> 3 x 224 x 224 float32 classifier input."""
    return to_feature_image(feature_matrix(samples, sample_rate, kind))
