"""Streaming log-mel frontend for 16 kHz mono audio.

Framing is sample-exact: a frame starts every ``hop_len`` samples and covers
``frame_len`` samples, so a signal of S samples yields
floor((S - frame_len) / hop_len) + 1 frames once S >= frame_len (119 frames
per second at the defaults). Each frame is Hann-windowed, zero-padded to the
FFT size, and reduced to mel-band log powers:

    power[j] = |rfft(window * frame)[j]|^2
    mel[b]   = ln(max(sum_j fb[b, j] * power[j], log_floor))

The filterbank uses triangular weights spaced uniformly on the HTK mel scale
mel(f) = 2595 * log10(1 + f / 700) between mel_fmin and mel_fmax.

Frames are transformed one at a time (never batched across a chunk) and the
stream keeps only the tail that has not yet filled a frame, so splitting the
input into chunks at any boundaries produces bit-identical frames.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 16000     # Hz
    frame_len: int = 267         # samples per analysis frame (1/60 s)
    hop_len: int = 133           # samples between frame starts (1/120 s)
    fft_size: int = 512
    n_mels: int = 80
    mel_fmin: float = 0.0        # Hz
    mel_fmax: float = 8000.0     # Hz
    log_floor: float = 1e-10     # power clamp before the log

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not 0 < self.hop_len <= self.frame_len:
            raise ConfigError(
                f"need 0 < hop_len <= frame_len, got hop {self.hop_len}, "
                f"frame {self.frame_len}"
            )
        if self.frame_len > self.fft_size:
            raise ConfigError(
                f"frame_len {self.frame_len} exceeds fft_size {self.fft_size}"
            )
        n_bins = self.fft_size // 2 + 1
        if not 0 < self.n_mels < n_bins:
            raise ConfigError(
                f"n_mels must be in (0, {n_bins}), got {self.n_mels}"
            )
        if self.mel_fmax > self.sample_rate / 2:
            raise ConfigError(
                f"mel_fmax {self.mel_fmax} exceeds Nyquist {self.sample_rate / 2}"
            )
        if not 0 <= self.mel_fmin < self.mel_fmax:
            raise ConfigError(
                f"need 0 <= mel_fmin < mel_fmax, got {self.mel_fmin}, {self.mel_fmax}"
            )
        if self.log_floor <= 0:
            raise ConfigError(f"log_floor must be positive, got {self.log_floor}")


def hz_to_mel(hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges_hz(config: AudioConfig) -> np.ndarray:
    """n_mels + 2 band edge frequencies, uniform on the mel scale. float64."""
    mel_lo = hz_to_mel(config.mel_fmin)
    mel_hi = hz_to_mel(config.mel_fmax)
    mels = np.linspace(mel_lo, mel_hi, config.n_mels + 2)
    return np.asarray(mel_to_hz(mels))


def mel_filterbank(config: AudioConfig) -> np.ndarray:
    """Triangular filterbank, shape (n_mels, fft_size // 2 + 1), float64.

    Band b rises from edge b to edge b+1 and falls to edge b+2. Every band
    must capture at least one FFT bin with positive weight; a geometry where
    a triangle falls between bins is a configuration error.
    """
    n_bins = config.fft_size // 2 + 1
    freqs = np.arange(n_bins, dtype=np.float64) * config.sample_rate / config.fft_size
    edges = mel_band_edges_hz(config)
    fb = np.zeros((config.n_mels, n_bins), dtype=np.float64)
    for b in range(config.n_mels):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        fb[b] = np.maximum(0.0, np.minimum(rising, falling))
        if not np.any(fb[b] > 0.0):
            raise ConfigError(
                f"mel band {b} ({lo:.1f}-{hi:.1f} Hz) covers no FFT bin; "
                "increase fft_size or reduce n_mels"
            )
    return fb


def frame_count(n_samples: int, config: AudioConfig) -> int:
    """How many frames a signal of n_samples yields."""
    if n_samples < config.frame_len:
        return 0
    return (n_samples - config.frame_len) // config.hop_len + 1


@dataclass
class MelFrame:
    values: np.ndarray      # (n_mels,) float32 natural-log band powers
    frame_index: int        # 0-based position in the stream
    start_sample: int       # index of the frame's first sample


@dataclass
class MelStream:
    """Incremental frame extractor. push() accepts arbitrary chunk sizes."""

    config: AudioConfig = field(default_factory=AudioConfig)

    def __post_init__(self) -> None:
        self._window = np.hanning(self.config.frame_len)  # float64
        self._fb = mel_filterbank(self.config)
        self._pending = np.zeros(0, dtype=np.float64)
        self._frames_done = 0
        self._samples_seen = 0

    @property
    def samples_consumed(self) -> int:
        return self._samples_seen

    @property
    def frames_emitted(self) -> int:
        return self._frames_done

    def push(self, samples: np.ndarray) -> list[MelFrame]:
        """Consume a chunk and return every frame it completes, in order."""
        chunk = np.asarray(samples, dtype=np.float64).reshape(-1)
        bad = ~np.isfinite(chunk)
        if bad.any():
            offset = self._samples_seen + int(np.argmax(bad))
            raise DataError(f"non-finite audio sample at offset {offset}")
        self._samples_seen += chunk.size
        self._pending = np.concatenate([self._pending, chunk])

        cfg = self.config
        out: list[MelFrame] = []
        pos = 0
        while pos + cfg.frame_len <= self._pending.size:
            frame = self._pending[pos:pos + cfg.frame_len]
            out.append(self._transform(frame))
            pos += cfg.hop_len
        self._pending = self._pending[pos:]
        return out

    def _transform(self, frame: np.ndarray) -> MelFrame:
        cfg = self.config
        windowed = frame * self._window
        spectrum = np.fft.rfft(windowed, n=cfg.fft_size)
        power = spectrum.real**2 + spectrum.imag**2
        banded = self._fb @ power
        values = np.log(np.maximum(banded, cfg.log_floor)).astype(np.float32)
        idx = self._frames_done
        self._frames_done += 1
        return MelFrame(
            values=values,
            frame_index=idx,
            start_sample=idx * cfg.hop_len,
        )


def mel_frames(signal: np.ndarray, config: AudioConfig | None = None) -> list[MelFrame]:
    """One-shot extraction over a whole signal."""
    stream = MelStream(config or AudioConfig())
    return stream.push(signal)


def read_wav(path: str) -> np.ndarray:
    """Load a 16 kHz mono 16-bit PCM WAV as float32 in [-1, 1)."""
    try:
        with wave.open(path, "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            if channels != 1:
                raise DataError(f"{path}: expected mono audio, got {channels} channels")
            if width != 2:
                raise DataError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
            if rate != 16000:
                raise DataError(f"{path}: expected 16000 Hz, got {rate} Hz")
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise DataError(f"{path}: not a readable WAV file ({e})") from None
    pcm = np.frombuffer(raw, dtype="<i2")
    return (pcm.astype(np.float32)) / 32768.0


def write_wav(path: str, samples: np.ndarray, sample_rate: int = 16000) -> None:
    """Write float samples in [-1, 1] as 16-bit mono PCM."""
    scaled = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())
