"""Waveform containers, 16-bit PCM WAV I/O, STFT/ISTFT and mel projection."""

from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-9
WSUM_FLOOR = 1e-8


class WavError(Exception):
    """Base class for WAV decoding problems."""


class WavFileNotFoundError(WavError, FileNotFoundError):
    pass


class WavFormatError(WavError, ValueError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedEncodingError(WavError, ValueError):
    """Valid RIFF/WAVE, but not 16-bit integer PCM."""


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with its sample rate.

    Samples are stored as a read-only float64 array.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


@dataclass(frozen=True)
class ComplexSpectrogram:
    frames: np.ndarray  # (T, K) complex
    frame_len: int
    hop: int
    fft_size: int
    sample_rate: int
    n_samples: int = field(default=0)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class MagnitudeSpectrogram:
    frames: np.ndarray  # (T, K) non-negative
    frame_len: int
    hop: int
    fft_size: int
    sample_rate: int


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_mels, K)
    f_min: float
    f_max: float
    sample_rate: int

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


# ---------------------------------------------------------------------------
# WAV I/O


def _read_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("missing RIFF/WAVE header")
    pos = 12
    chunks = {}
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise WavFormatError(f"truncated {cid!r} chunk")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM WAV file, downmixing to mono and scaling by 1/32768."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise WavFileNotFoundError(path)
    with open(path, "rb") as fh:
        data = fh.read()
    chunks = _read_chunks(data)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise WavFormatError("missing fmt or data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise WavFormatError("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == 0xFFFE and len(fmt) >= 26:
        # WAVE_FORMAT_EXTENSIBLE: the real tag is the first two bytes of the subformat GUID
        (tag,) = struct.unpack("<H", fmt[24:26])
    if tag != 1 or bits != 16:
        raise UnsupportedEncodingError(f"format tag {tag}, {bits} bits; only 16-bit PCM is supported")
    if channels < 1 or rate <= 0 or block_align != 2 * channels:
        raise WavFormatError("inconsistent fmt chunk")
    raw = chunks[b"data"]
    n = len(raw) // block_align
    pcm = np.frombuffer(raw[:n * block_align], dtype="<i2").reshape(n, channels)
    samples = pcm.astype(np.float64).mean(axis=1) / 32768.0
    return AudioClip(samples, rate)


def save_wav(clip: AudioClip, path) -> None:
    """Write ``clip`` as mono 16-bit PCM, clipping to [-1, 1 - 2**-15]."""
    x = np.clip(clip.samples, -1.0, 1.0 - 2.0 ** -15)
    pcm = np.round(x * 32768.0).astype("<i2")
    with wave.open(os.fspath(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# STFT


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _check_geometry(frame_len, hop, fft_size):
    if frame_len <= 0 or hop <= 0 or fft_size <= 0:
        raise ValueError("frame_len, hop and fft_size must be positive")
    if frame_len > fft_size:
        raise ValueError(f"frame_len {frame_len} exceeds fft_size {fft_size}")
    if fft_size % 2:
        raise ValueError("fft_size must be even")


def n_frames(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return 1 + (n_samples - frame_len) // hop


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    t = n_frames(x.shape[-1], frame_len, hop)
    if t == 0:
        return np.zeros(x.shape[:-1] + (0, frame_len))
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len, axis=-1)
    return view[..., ::hop, :][..., :t, :]


def stft(clip: AudioClip, frame_len: int = 1024, hop: int = 256, fft_size: int | None = None) -> ComplexSpectrogram:
    """Hann-windowed STFT without padding; trailing partial frames are dropped."""
    fft_size = frame_len if fft_size is None else fft_size
    _check_geometry(frame_len, hop, fft_size)
    frames = frame_signal(clip.samples, frame_len, hop) * hann(frame_len)
    spec = np.fft.rfft(frames, n=fft_size, axis=-1)
    return ComplexSpectrogram(spec, frame_len, hop, fft_size, clip.sample_rate, len(clip))


def istft(spec: ComplexSpectrogram) -> AudioClip:
    """Weighted overlap-add inverse of :func:`stft`.

    Output length is ``frame_len + (T - 1) * hop`` (zero for an empty spectrogram).
    """
    frame_len, hop = spec.frame_len, spec.hop
    if hop * 2 != frame_len and hop * 4 != frame_len:
        raise ValueError(f"hop {hop} is not frame_len/2 or frame_len/4; geometry not supported for inversion")
    t = spec.frames.shape[0]
    if t == 0:
        return AudioClip(np.zeros(0), spec.sample_rate)
    w = hann(frame_len)
    frames = np.fft.irfft(spec.frames, n=spec.fft_size, axis=-1)[:, :frame_len] * w
    n = frame_len + (t - 1) * hop
    out = np.zeros(n)
    wsum = np.zeros(n)
    for i in range(t):
        out[i * hop:i * hop + frame_len] += frames[i]
        wsum[i * hop:i * hop + frame_len] += w * w
    return AudioClip(out / np.maximum(wsum, WSUM_FLOOR), spec.sample_rate)


def magnitude(spec: ComplexSpectrogram) -> MagnitudeSpectrogram:
    return MagnitudeSpectrogram(np.abs(spec.frames), spec.frame_len, spec.hop, spec.fft_size, spec.sample_rate)


# ---------------------------------------------------------------------------
# Mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def triangular_filters(edges_hz: np.ndarray, fft_size: int, sample_rate: int) -> np.ndarray:
    """Unit-height triangles; filter i rises on edges[i]..edges[i+1] and falls to edges[i+2]."""
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int, f_min: float = 0.0,
                   f_max: float | None = None) -> MelFilterbank:
    f_max = sample_rate / 2 if f_max is None else f_max
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ValueError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got {f_min}, {f_max}")
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    weights = triangular_filters(edges, fft_size, sample_rate)
    if np.any(weights.sum(axis=1) <= 0):
        raise ValueError("some mel filters cover no FFT bin; use fewer filters or a larger fft_size")
    return MelFilterbank(weights, float(f_min), float(f_max), sample_rate)


def mel_centers(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))[1:-1]


def log_mel(clip: AudioClip, fb: MelFilterbank, frame_len: int, hop: int, fft_size: int | None = None) -> np.ndarray:
    """``log(max(fb @ |STFT|, 1e-9))`` as a (T, n_mels) matrix."""
    mag = magnitude(stft(clip, frame_len, hop, fft_size)).frames
    if mag.shape[1] != fb.weights.shape[1]:
        raise ValueError("filterbank does not match fft_size")
    return np.log(np.maximum(mag @ fb.weights.T, LOG_FLOOR))
