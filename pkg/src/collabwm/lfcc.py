"""Linear-frequency cepstral coefficients with delta and delta-delta streams."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .signal import LOG_FLOOR, AudioClip, magnitude, stft, triangular_filters


@dataclass(frozen=True)
class LfccConfig:
    frame_ms: float = 20.0
    hop_ms: float = 10.0
    fft_size: int = 1024
    n_filters: int = 20
    n_ceps: int = 20
    include_deltas: bool = True
    f_max_policy: float = 0.25  # fraction of the sample rate: half of Nyquist
    delta_width: int = 2

    def __post_init__(self):
        if self.n_ceps > self.n_filters:
            raise ValueError("n_ceps must not exceed n_filters")
        if not 0 < self.f_max_policy <= 0.5:
            raise ValueError("f_max_policy must be in (0, 0.5]")

    @property
    def dim(self) -> int:
        return self.n_ceps * (3 if self.include_deltas else 1)

    def frame_len(self, sample_rate: int) -> int:
        return int(round(self.frame_ms * sample_rate / 1000))

    def hop(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000))


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (T, D)
    hop: int
    frame_len: int
    sample_rate: int

    @property
    def shape(self):
        return self.values.shape

    def frame_times(self) -> np.ndarray:
        """Centre time of each frame in seconds."""
        t = np.arange(self.values.shape[0])
        return (t * self.hop + self.frame_len / 2) / self.sample_rate

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s"] + [f"c{i}" for i in range(self.values.shape[1])])
            for ts, row in zip(self.frame_times(), self.values):
                w.writerow([repr(float(ts))] + [repr(float(v)) for v in row])


def linear_filter_centers(n_filters: int, f_max: float) -> np.ndarray:
    return np.linspace(0.0, f_max, n_filters + 2)[1:-1]


def linear_filterbank(n_filters: int, fft_size: int, sample_rate: int, f_max: float) -> np.ndarray:
    """(n_filters, fft_size/2+1) unit-height triangles evenly spaced over [0, f_max]."""
    if not 0 < f_max <= sample_rate / 2:
        raise ValueError(f"f_max must be in (0, {sample_rate / 2}], got {f_max}")
    if n_filters < 1:
        raise ValueError("n_filters must be >= 1")
    fb = triangular_filters(np.linspace(0.0, f_max, n_filters + 2), fft_size, sample_rate)
    if np.any(fb.sum(axis=1) <= 0):
        raise ValueError("some filters cover no FFT bin")
    return fb


def delta_matrix(n_frames: int, width: int = 2) -> np.ndarray:
    """(T, T) matrix ``D`` with ``D @ f`` the regression deltas of ``f`` (edges replicated)."""
    denom = 2.0 * sum(k * k for k in range(1, width + 1))
    d = np.zeros((n_frames, n_frames))
    for t in range(n_frames):
        for k in range(1, width + 1):
            d[t, min(t + k, n_frames - 1)] += k / denom
            d[t, max(t - k, 0)] -= k / denom
    return d


def deltas(feat: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas along axis 0 with edge replication."""
    feat = np.asarray(feat, dtype=np.float64)
    t = feat.shape[0]
    if t == 0:
        return feat.copy()
    padded = np.concatenate([np.repeat(feat[:1], width, axis=0), feat, np.repeat(feat[-1:], width, axis=0)])
    denom = 2.0 * sum(k * k for k in range(1, width + 1))
    out = np.zeros_like(feat)
    for k in range(1, width + 1):
        out += k * (padded[width + k:width + k + t] - padded[width - k:width - k + t])
    return out / denom


def lfcc_array(x: np.ndarray, sample_rate: int, cfg: LfccConfig = LfccConfig()) -> np.ndarray:
    clip = AudioClip(x, sample_rate)
    return lfcc(clip, cfg).values


def lfcc(clip: AudioClip, cfg: LfccConfig = LfccConfig()) -> FeatureMatrix:
    """LFCC features of ``clip``: (T, 60) with deltas, (T, 20) without."""
    sr = clip.sample_rate
    frame_len, hop = cfg.frame_len(sr), cfg.hop(sr)
    if frame_len > cfg.fft_size:
        raise ValueError(f"{cfg.frame_ms} ms at {sr} Hz does not fit in fft_size {cfg.fft_size}")
    power = magnitude(stft(clip, frame_len, hop, cfg.fft_size)).frames ** 2
    fb = linear_filterbank(cfg.n_filters, cfg.fft_size, sr, cfg.f_max_policy * sr)
    logfb = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    ceps = dct(logfb, type=2, norm="ortho", axis=1)[:, :cfg.n_ceps] if logfb.size else np.zeros((0, cfg.n_ceps))
    if cfg.include_deltas and ceps.shape[0]:
        d1 = deltas(ceps, cfg.delta_width)
        ceps = np.concatenate([ceps, d1, deltas(d1, cfg.delta_width)], axis=1)
    elif cfg.include_deltas:
        ceps = np.zeros((0, cfg.dim))
    return FeatureMatrix(ceps, hop, frame_len, sr)
