"""Six-tap Hann-windowed sinc resampler.

The resampler is a fixed sparse linear map from ``N`` input samples to
``round(N * target / source)`` output samples, which is what lets the toy
training loop use it as a differentiable layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .signal import AudioClip

N_TAPS = 6
CUTOFF_FRACTION = 0.9


@dataclass(frozen=True)
class SincKernel:
    taps: np.ndarray     # (n_out, 6) weights, zero on out-of-range taps
    index: np.ndarray    # (n_out, 6) input sample indices (may be out of range)
    source_rate: int
    target_rate: int
    cutoff: float

    def matrix(self, n_in: int) -> sp.csr_matrix:
        n_out = self.taps.shape[0]
        rows = np.repeat(np.arange(n_out), N_TAPS)
        cols = self.index.reshape(-1)
        vals = self.taps.reshape(-1)
        keep = (cols >= 0) & (cols < n_in)
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n_out, n_in))


def output_length(n: int, source_rate: int, target_rate: int) -> int:
    return int(round(n * target_rate / source_rate))


def sinc_kernel(n_in: int, source_rate: int, target_rate: int) -> SincKernel:
    n_out = output_length(n_in, source_rate, target_rate)
    cutoff = CUTOFF_FRACTION * min(source_rate, target_rate) / 2
    pos = np.arange(n_out) * (source_rate / target_rate)
    base = np.floor(pos).astype(np.int64)
    index = base[:, None] + np.arange(-(N_TAPS // 2) + 1, N_TAPS // 2 + 1)[None, :]
    dist = pos[:, None] - index
    half_width = N_TAPS / 2
    window = np.where(np.abs(dist) < half_width, 0.5 + 0.5 * np.cos(np.pi * dist / half_width), 0.0)
    taps = np.sinc(2.0 * cutoff / source_rate * dist) * window
    taps = np.where((index >= 0) & (index < n_in), taps, 0.0)
    total = taps.sum(axis=1, keepdims=True)
    # only in-range taps are renormalised so DC gain stays exactly one at the edges
    taps = np.divide(taps, total, out=np.zeros_like(taps), where=np.abs(total) > 0)
    return SincKernel(taps, index, source_rate, target_rate, cutoff)


@lru_cache(maxsize=64)
def resample_matrix(n_in: int, source_rate: int, target_rate: int) -> sp.csr_matrix:
    """The (n_out, n_in) matrix applied by :func:`resample`."""
    if source_rate == target_rate:
        return sp.identity(n_in, format="csr")
    return sinc_kernel(n_in, source_rate, target_rate).matrix(n_in)


def resample_array(x: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Resample along the last axis of ``x``."""
    if target_rate <= 0 or source_rate <= 0:
        raise ValueError("sample rates must be positive")
    n = x.shape[-1]
    if source_rate == target_rate:
        return np.array(x, dtype=np.float64, copy=True)
    if n == 0:
        return np.zeros(x.shape[:-1] + (0,))
    m = resample_matrix(n, int(source_rate), int(target_rate))
    flat = np.asarray(x, dtype=np.float64).reshape(-1, n)
    return np.asarray(m @ flat.T).T.reshape(x.shape[:-1] + (m.shape[0],))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    return AudioClip(resample_array(clip.samples, clip.sample_rate, int(target_rate)), int(target_rate))
