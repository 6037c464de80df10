"""Waveform to normalized log-mel spectrogram.

16 kHz mono input, periodic Hann window of 1024 samples (64 ms), hop 256 (75%
overlap), reflect-padded centered frames, 80 triangular HTK-mel filters on the
power spectrum over 0-8000 Hz, natural log with a 1e-5 floor, then an affine map
to the training-set statistics scaled to standard deviation 0.5.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import InvalidArgument, UnsupportedFormat

SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 256
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5
TARGET_STD = 0.5
MELF_MAGIC = b"MELF0001"


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = N_FFT
    hop: int = HOP
    n_mels: int = N_MELS
    fmin: float = FMIN
    fmax: float = FMAX
    log_floor: float = LOG_FLOOR

    def to_dict(self) -> dict:
        return dict(sample_rate=self.sample_rate, n_fft=self.n_fft, hop=self.hop, n_mels=self.n_mels,
                    fmin=self.fmin, fmax=self.fmax, log_floor=self.log_floor)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise UnsupportedFormat(f"expected mono samples, got shape {self.samples.shape}")


@dataclass
class MelSpectrogram:
    values: np.ndarray
    normalized: bool = False

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


def read_wav(path) -> Waveform:
    """Mono PCM 16-bit or 32-bit float RIFF/WAVE, scaled to [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedFormat(f"{path}: unreadable WAV ({exc})") from exc
    if data.ndim != 1:
        raise UnsupportedFormat(f"{path}: {data.shape[1]} channels; only mono is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormat(f"{path}: sample type {data.dtype} not supported (PCM16 or float32 only)")
    return Waveform(samples, int(rate))


def write_wav(path, wave: Waveform, pcm16: bool = True) -> None:
    x = np.clip(wave.samples, -1.0, 1.0)
    if pcm16:
        wavfile.write(path, wave.sample_rate, np.round(x * 32767.0).astype(np.int16))
    else:
        wavfile.write(path, wave.sample_rate, x.astype(np.float32))


def _check_rate(wave: Waveform, cfg: FeatureConfig):
    if wave.sample_rate != cfg.sample_rate:
        raise UnsupportedFormat(
            f"sample rate {wave.sample_rate} Hz is not supported; resample to {cfg.sample_rate} Hz first")


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered frames ``(frames, n_fft)``, frames = ceil(len / hop)."""
    frames = -(-len(x) // hop)
    padded = np.pad(x, n_fft // 2, mode="reflect")
    idx = np.arange(frames)[:, None] * hop + np.arange(n_fft)[None, :]
    return padded[idx]


def stft_magnitude(wave: Waveform, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Magnitude STFT ``(n_fft // 2 + 1, frames)``."""
    _check_rate(wave, cfg)
    if len(wave.samples) < cfg.n_fft:
        raise InvalidArgument(f"signal has {len(wave.samples)} samples; at least {cfg.n_fft} are required")
    frames = frame_signal(wave.samples, cfg.n_fft, cfg.hop) * hann_window(cfg.n_fft)
    return np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular filters ``(n_mels, n_fft // 2 + 1)`` with unit peak, HTK mel spacing."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_project(mag, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[0] != cfg.n_fft // 2 + 1:
        raise InvalidArgument(f"expected {cfg.n_fft // 2 + 1} frequency rows, got shape {mag.shape}")
    return mel_filterbank(cfg) @ (mag**2)


def log_mel(wave: Waveform, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Un-normalized natural-log mel power with the floor applied."""
    return np.log(np.maximum(mel_project(stft_magnitude(wave, cfg), cfg), cfg.log_floor))


def log_compress_normalize(mel, stats: tuple[float, float], log_floor: float = LOG_FLOOR) -> MelSpectrogram:
    mean, std = stats
    if std <= 0:
        raise InvalidArgument(f"feature std must be positive, got {std}")
    logged = np.log(np.maximum(np.asarray(mel, dtype=np.float64), log_floor))
    return MelSpectrogram((logged - mean) / std * TARGET_STD, normalized=True)


def featurize(wave: Waveform, stats: tuple[float, float], cfg: FeatureConfig = FeatureConfig()) -> MelSpectrogram:
    return log_compress_normalize(mel_project(stft_magnitude(wave, cfg), cfg), stats, cfg.log_floor)


def compute_dataset_stats(corpus, cfg: FeatureConfig = FeatureConfig()) -> tuple[float, float]:
    """Global mean and population std of log-mel values over every bin of the corpus."""
    logs = [log_mel(wave, cfg) for wave in corpus]
    count = sum(lm.size for lm in logs)
    if count == 0:
        raise InvalidArgument("cannot compute feature statistics of an empty corpus")
    # fsum of per-file sums keeps the result independent of file order
    mean = math.fsum(float(np.sum(lm)) for lm in logs) / count
    var = math.fsum(float(np.sum((lm - mean) ** 2)) for lm in logs) / count
    std = float(np.sqrt(var))
    if std <= 1e-12 * max(1.0, abs(mean)):
        raise InvalidArgument("log-mel values are constant over the corpus (std 0); "
                              "use a corpus with non-silent, varied audio")
    return mean, std


def write_melf(path, spec: MelSpectrogram) -> None:
    values = np.asarray(spec.values)
    with open(path, "wb") as fh:
        fh.write(MELF_MAGIC)
        fh.write(struct.pack("<II", values.shape[0], values.shape[1]))
        fh.write(values.astype("<f4").tobytes(order="C"))


def read_melf(path) -> MelSpectrogram:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MELF_MAGIC:
        raise UnsupportedFormat(f"{path}: not a MELF0001 feature dump")
    n_mels, frames = struct.unpack("<II", blob[8:16])
    data = np.frombuffer(blob[16:], dtype="<f4")
    if data.size != n_mels * frames:
        raise UnsupportedFormat(f"{path}: payload holds {data.size} values, header says {n_mels * frames}")
    return MelSpectrogram(data.reshape(n_mels, frames).astype(np.float64))
