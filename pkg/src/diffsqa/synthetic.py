"""Synthetic "clean" corpus: voiced harmonic utterances with formant-shaped spectra.

Each utterance has a gliding, vibrato-modulated fundamental, a harmonic series
weighted by three randomly placed resonances, and a syllabic amplitude envelope.
Everything derives from one seed through :class:`SeededRng`.
"""

from __future__ import annotations

import numpy as np

from .features import SAMPLE_RATE, Waveform
from .numerics import SeededRng

DEFAULT_SAMPLES = 32768


def harmonic_utterance(rng: SeededRng, num_samples: int = DEFAULT_SAMPLES,
                       sample_rate: int = SAMPLE_RATE) -> Waveform:
    u = rng.uniform(16)
    t = np.arange(num_samples) / sample_rate
    dur = num_samples / sample_rate

    f0_start = 90.0 + 160.0 * u[0]
    f0_end = f0_start * (0.75 + 0.5 * u[1])
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * (4.0 + 3.0 * u[2]) * t + 2 * np.pi * u[3])
    f0 = (f0_start + (f0_end - f0_start) * t / dur) * vibrato
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    formants = np.array([300 + 500 * u[4], 900 + 1200 * u[5], 2200 + 1300 * u[6]])
    widths = np.array([120.0, 200.0, 350.0])
    gains = np.array([1.0, 0.5 + 0.4 * u[7], 0.2 + 0.3 * u[8]])

    # formant weights follow the slow f0 contour; evaluate coarsely and interpolate
    coarse = np.arange(0, num_samples, 128)
    signal = np.zeros(num_samples)
    nyquist = sample_rate / 2
    max_h = int(nyquist / f0_start)
    base = np.exp(1j * phase)
    rot = np.ones(num_samples, dtype=complex)
    for h in range(1, max_h + 1):
        rot *= base
        fh = h * f0[coarse]
        amp = np.sum(gains[:, None] * np.exp(-0.5 * ((fh[None, :] - formants[:, None]) / widths[:, None]) ** 2), axis=0)
        amp = (amp + 0.01) / h**0.5 * (fh < nyquist * 0.95)
        if not amp.any():
            continue
        signal += np.interp(np.arange(num_samples), coarse, amp) * rot.imag

    rate = 2.5 + 2.5 * u[9]
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * rate * t + 2 * np.pi * u[10])
    ramp = np.minimum(1.0, np.minimum(t, dur - t) / 0.02)
    signal *= envelope * ramp
    peak = np.max(np.abs(signal))
    return Waveform(signal / peak * (0.3 + 0.4 * u[11]), sample_rate)


def harmonic_corpus(count: int, seed: int = 0, num_samples: int = DEFAULT_SAMPLES) -> list[Waveform]:
    root = SeededRng(seed)
    return [harmonic_utterance(root.spawn(k), num_samples) for k in range(count)]


def white_noise(rng: SeededRng, num_samples: int, sample_rate: int = SAMPLE_RATE) -> Waveform:
    return Waveform(rng.normal(num_samples), sample_rate)
