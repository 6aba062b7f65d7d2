"""Log-mel frontend: framing arithmetic, chunking invariance, DFT oracle."""

from __future__ import annotations

import wave

import numpy as np
import pytest

from reference_impls import htk_hz, htk_mel, naive_log_mel
from speechmotion.dsp import (
    AudioConfig,
    MelStream,
    frame_count,
    hz_to_mel,
    mel_band_edges_hz,
    mel_filterbank,
    mel_frames,
    mel_to_hz,
    read_wav,
    write_wav,
)
from speechmotion.errors import ConfigError, DataError


def _tone(freq_hz: float, seconds: float, rate: int = 16000) -> np.ndarray:
    t = np.arange(int(seconds * rate)) / rate
    return 0.5 * np.sin(2.0 * np.pi * freq_hz * t)


def test_frame_count_formula():
    cfg = AudioConfig()
    assert frame_count(0, cfg) == 0
    assert frame_count(266, cfg) == 0
    assert frame_count(267, cfg) == 1
    assert frame_count(267 + 132, cfg) == 1
    assert frame_count(267 + 133, cfg) == 2
    assert frame_count(16000, cfg) == 119
    assert frame_count(32000, cfg) == 239


def test_one_second_emits_119_frames_with_dense_metadata():
    frames = mel_frames(np.zeros(16000))
    assert len(frames) == 119
    for i, f in enumerate(frames):
        assert f.frame_index == i
        assert f.start_sample == i * 133
        assert f.values.shape == (80,)
        assert f.values.dtype == np.float32


def test_silence_hits_the_log_floor():
    frames = mel_frames(np.zeros(16000))
    np.testing.assert_allclose(frames[0].values, np.log(1e-10), atol=1e-6)


def test_chunking_is_bit_exact():
    rng = np.random.default_rng(31)
    signal = rng.uniform(-1.0, 1.0, 16000)
    whole = mel_frames(signal)

    for sizes in ([1] * 600, [7, 133, 267, 1000, 13], [16000], [5188, 10812]):
        stream = MelStream()
        got = []
        pos = 0
        i = 0
        while pos < signal.size:
            n = sizes[i % len(sizes)]
            got.extend(stream.push(signal[pos:pos + n]))
            pos += n
            i += 1
        assert len(got) == len(whole)
        for a, b in zip(whole, got):
            assert a.values.tobytes() == b.values.tobytes()
            assert a.frame_index == b.frame_index
            assert a.start_sample == b.start_sample


def test_log_mel_matches_naive_dft_reference():
    rng = np.random.default_rng(32)
    signal = rng.uniform(-1.0, 1.0, 4000)
    got = np.stack([f.values for f in mel_frames(signal)]).astype(np.float64)
    ref = naive_log_mel(signal)
    assert got.shape == ref.shape
    np.testing.assert_allclose(got, ref, atol=1e-4)


def test_band_center_tone_maximizes_its_own_band():
    cfg = AudioConfig()
    for band in (30, 50, 70):
        mel_hi = htk_mel(cfg.mel_fmax)
        center_hz = float(htk_hz(mel_hi * (band + 1) / (cfg.n_mels + 1)))
        frames = mel_frames(_tone(center_hz, 0.25))
        mean_logmel = np.mean([f.values for f in frames], axis=0)
        assert int(np.argmax(mean_logmel)) == band


def test_band_edges_are_monotonic_and_span_the_range():
    edges = mel_band_edges_hz(AudioConfig())
    assert edges.shape == (82,)
    assert edges[0] == pytest.approx(0.0, abs=1e-9)
    assert edges[-1] == pytest.approx(8000.0, abs=1e-6)
    assert np.all(np.diff(edges) > 0)


def test_mel_scale_round_trips():
    hz = np.array([0.0, 100.0, 700.0, 3500.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(hz)), hz, atol=1e-9)
    assert hz_to_mel(0.0) == 0.0
    # 2595 * log10(2) at the 700 Hz knee.
    assert float(hz_to_mel(700.0)) == pytest.approx(2595.0 * np.log10(2.0))


def test_filterbank_rows_are_nonnegative_and_cover_bins():
    fb = mel_filterbank(AudioConfig())
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0.0)
    assert np.all(fb.max(axis=1) > 0.0)


def test_too_many_narrow_bands_is_a_config_error():
    with pytest.raises(ConfigError, match="covers no FFT bin"):
        mel_filterbank(AudioConfig(n_mels=200))


def test_non_finite_sample_reports_absolute_offset():
    stream = MelStream()
    stream.push(np.zeros(100))
    chunk = np.zeros(10)
    chunk[5] = np.nan
    with pytest.raises(DataError, match="offset 105"):
        stream.push(chunk)


def test_config_validation():
    with pytest.raises(ConfigError):
        AudioConfig(hop_len=0)
    with pytest.raises(ConfigError):
        AudioConfig(hop_len=300)  # larger than frame_len
    with pytest.raises(ConfigError):
        AudioConfig(frame_len=600)  # larger than fft_size
    with pytest.raises(ConfigError):
        AudioConfig(mel_fmax=9000.0)  # above Nyquist
    with pytest.raises(ConfigError):
        AudioConfig(mel_fmin=5000.0, mel_fmax=4000.0)
    with pytest.raises(ConfigError):
        AudioConfig(log_floor=0.0)
    with pytest.raises(ConfigError):
        AudioConfig(n_mels=0)


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(33)
    samples = rng.uniform(-0.9, 0.9, 1600).astype(np.float32)
    path = str(tmp_path / "t.wav")
    write_wav(path, samples)
    back = read_wav(path)
    assert back.dtype == np.float32
    assert back.shape == samples.shape
    np.testing.assert_allclose(back, samples, atol=1.0 / 32768.0)


def test_read_wav_rejects_wrong_formats(tmp_path):
    stereo = str(tmp_path / "stereo.wav")
    with wave.open(stereo, "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(b"\x00" * 64)
    with pytest.raises(DataError, match="mono"):
        read_wav(stereo)

    slow = str(tmp_path / "slow.wav")
    with wave.open(slow, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(b"\x00" * 64)
    with pytest.raises(DataError, match="16000"):
        read_wav(slow)

    wide = str(tmp_path / "wide.wav")
    with wave.open(wide, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(16000)
        w.writeframes(b"\x00" * 64)
    with pytest.raises(DataError, match="16-bit"):
        read_wav(wide)

    junk = str(tmp_path / "junk.wav")
    with open(junk, "wb") as f:
        f.write(b"this is not audio")
    with pytest.raises(DataError, match="WAV"):
        read_wav(junk)
