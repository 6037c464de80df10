import math

import numpy as np
import pytest
from scipy.io import wavfile

from diffsqa.errors import InvalidArgument, UnsupportedFormat
from diffsqa.features import (FeatureConfig, MelSpectrogram, Waveform, compute_dataset_stats, featurize, frame_signal,
                              hann_window, hz_to_mel, log_compress_normalize, log_mel, mel_filterbank, mel_to_hz,
                              read_melf, read_wav, stft_magnitude, write_melf, write_wav)
from diffsqa.numerics import SeededRng
from diffsqa.synthetic import harmonic_corpus


def tone(freq, seconds=1.0, amp=0.5, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t), rate)


def test_hann_periodic():
    w = hann_window(8)
    assert w[0] == 0.0 and w[4] == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(w[1:], w[1:][::-1], atol=1e-15)


def test_frame_count_and_shape():
    mag = stft_magnitude(tone(440))
    assert mag.shape == (513, math.ceil(16000 / 256))
    assert frame_signal(np.arange(1030.0), 1024, 256).shape == (5, 1024)


def test_bin_centered_sine_concentrates():
    # 1000 Hz falls on bin 64 exactly
    mag = stft_magnitude(tone(1000.0)) ** 2
    interior = mag[:, 5:-5]
    share = interior[63:66].sum(axis=0) / interior.sum(axis=0)
    assert share.min() > 0.99
    assert np.all(np.argmax(interior, axis=0) == 64)


def test_parseval_per_frame():
    rng = SeededRng(0)
    x = Waveform(0.1 * rng.normal(4096))
    frames = frame_signal(x.samples, 1024, 256) * hann_window(1024)
    mag = stft_magnitude(x)
    for k in (0, 5, 15):
        p = mag[:, k] ** 2
        spectral = (p[0] + p[-1] + 2 * p[1:-1].sum()) / 1024
        assert spectral == pytest.approx(np.sum(frames[k] ** 2), rel=1e-12)


def test_zero_signal_hits_floor():
    lm = log_mel(Waveform(np.zeros(4096)))
    assert np.all(lm == np.log(1e-5))


def test_mel_scale_values():
    assert hz_to_mel(700.0) == pytest.approx(781.17, abs=0.01)
    assert hz_to_mel(0.0) == 0.0
    assert mel_to_hz(hz_to_mel(3210.0)) == pytest.approx(3210.0, rel=1e-13)


def test_filterbank_rows():
    fb = mel_filterbank()
    assert fb.shape == (80, 513)
    assert fb.max() <= 1.0 and fb.min() >= 0.0
    assert np.all(fb.sum(axis=1) > 0)
    peaks = np.argmax(fb, axis=1)
    assert np.all(np.diff(peaks) >= 0)


def test_amplitude_scaling_shifts_log_mel():
    quiet, loud = log_mel(tone(440, amp=0.1)), log_mel(tone(440, amp=0.2))
    above = quiet > np.log(1e-5) + 1
    assert np.allclose((loud - quiet)[above], np.log(4.0), atol=1e-9)
    assert np.all(loud >= quiet)


def test_time_shift_moves_frames():
    x = 0.1 * SeededRng(2).normal(16384)
    a = log_mel(Waveform(np.concatenate([x, np.zeros(256)])))
    b = log_mel(Waveform(np.concatenate([np.zeros(256), x])))
    assert np.allclose(a[:, 4:60], b[:, 5:61], atol=1e-9)


def test_normalization_formula():
    mel = np.array([[1e-7, 1.0], [np.e, np.e**2]])
    out = log_compress_normalize(mel, (1.0, 2.0))
    expected = (np.array([[np.log(1e-5), 0.0], [1.0, 2.0]]) - 1.0) / 2.0 * 0.5
    assert out.normalized and np.allclose(out.values, expected, rtol=1e-14)
    with pytest.raises(InvalidArgument):
        log_compress_normalize(mel, (0.0, 0.0))


def test_normalized_corpus_has_target_moments():
    corpus = harmonic_corpus(4, seed=3, num_samples=8192)
    stats = compute_dataset_stats(corpus)
    values = np.concatenate([featurize(w, stats).values.ravel() for w in corpus])
    assert values.mean() == pytest.approx(0.0, abs=1e-10)
    assert values.std() == pytest.approx(0.5, rel=1e-10)


def test_stats_order_invariant():
    corpus = harmonic_corpus(5, seed=7, num_samples=6000)
    assert compute_dataset_stats(corpus) == compute_dataset_stats(corpus[::-1])
    assert compute_dataset_stats(corpus) == compute_dataset_stats([corpus[2], corpus[0], corpus[4], corpus[1], corpus[3]])


def test_stats_errors():
    with pytest.raises(InvalidArgument):
        compute_dataset_stats([])
    with pytest.raises(InvalidArgument, match="constant"):
        compute_dataset_stats([Waveform(np.zeros(4096))])


def test_wrong_rate_and_short_signal():
    with pytest.raises(UnsupportedFormat, match="16000"):
        featurize(Waveform(np.zeros(8000), 8000), (0.0, 1.0))
    with pytest.raises(InvalidArgument):
        stft_magnitude(Waveform(np.zeros(1000)))
    with pytest.raises(UnsupportedFormat):
        Waveform(np.zeros((10, 2)))


def test_wav_round_trip(tmp_path):
    w = tone(300, seconds=0.1)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000 and np.max(np.abs(back.samples - w.samples)) < 1 / 32767
    write_wav(tmp_path / "b.wav", w, pcm16=False)
    assert np.allclose(read_wav(tmp_path / "b.wav").samples, w.samples, atol=1e-7)


def test_wav_rejections(tmp_path):
    wavfile.write(tmp_path / "st.wav", 16000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(UnsupportedFormat, match="mono"):
        read_wav(tmp_path / "st.wav")
    wavfile.write(tmp_path / "i32.wav", 16000, np.zeros(100, dtype=np.int32))
    with pytest.raises(UnsupportedFormat):
        read_wav(tmp_path / "i32.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(UnsupportedFormat):
        read_wav(tmp_path / "junk.wav")


def test_melf_round_trip(tmp_path):
    spec = MelSpectrogram(SeededRng(0).normal(80 * 7).reshape(80, 7), normalized=True)
    write_melf(tmp_path / "x.melf", spec)
    back = read_melf(tmp_path / "x.melf")
    assert back.values.shape == (80, 7)
    assert np.array_equal(back.values, spec.values.astype(np.float32).astype(np.float64))
    raw = (tmp_path / "x.melf").read_bytes()
    assert raw[:8] == b"MELF0001" and len(raw) == 16 + 4 * 80 * 7
    (tmp_path / "bad.melf").write_bytes(raw[:-4])
    with pytest.raises(UnsupportedFormat):
        read_melf(tmp_path / "bad.melf")


def test_config_dict():
    d = FeatureConfig().to_dict()
    assert d["n_mels"] == 80 and d["hop"] == 256 and d["sample_rate"] == 16000
