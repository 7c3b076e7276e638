"""Time stretching, SNR-controlled additive noise and the four test conditions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .manifest import CorpusManifest, split_manifest
from .signal import AudioClip, load_wav

STRETCH_RANGE = (0.9, 1.1)
SNR_DB = 10.0
MIN_NOISE_RMS = 1e-8


class Condition(str, Enum):
    CLEAN = "clean"
    STRETCH = "stretch"
    NOISE = "noise"
    STRETCH_NOISE = "s+n"

    @classmethod
    def parse(cls, value) -> "Condition":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace(" ", "")
        aliases = {"sn": "s+n", "stretch+noise": "s+n", "stretch_noise": "s+n"}
        return cls(aliases.get(key, key))

    @property
    def stretches(self) -> bool:
        return self in (Condition.STRETCH, Condition.STRETCH_NOISE)

    @property
    def noisy(self) -> bool:
        return self in (Condition.NOISE, Condition.STRETCH_NOISE)


ALL_CONDITIONS = tuple(Condition)


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    return 20.0 * np.log10(rms(signal) / rms(noise))


# ---------------------------------------------------------------------------
# time stretch


def stretch_length(n: int, factor: float) -> int:
    return int(round(n * factor))


def _check_factor(factor):
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"stretch factor must be in [0.5, 2.0], got {factor}")


def stretch_positions(n: int, factor: float) -> np.ndarray:
    return np.arange(stretch_length(n, factor)) / factor


def stretch_matrix(n: int, factor: float) -> sp.csr_matrix:
    """Linear-interpolation stretch as an (M, N) sparse matrix."""
    _check_factor(factor)
    pos = np.minimum(stretch_positions(n, factor), max(n - 1, 0))
    m = pos.shape[0]
    if n == 0 or m == 0:
        return sp.csr_matrix((m, n))
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([lo, hi])
    vals = np.concatenate([1.0 - frac, frac])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))


def time_stretch_array(x: np.ndarray, factor: float) -> np.ndarray:
    _check_factor(factor)
    x = np.asarray(x, dtype=np.float64)
    if factor == 1.0:
        return x.copy()
    n = x.shape[-1]
    if n == 0:
        return np.zeros(x.shape[:-1] + (stretch_length(0, factor),))
    pos = stretch_positions(n, factor)
    if x.ndim == 1:
        return np.interp(pos, np.arange(n), x)
    return np.stack([np.interp(pos, np.arange(n), row) for row in x.reshape(-1, n)]).reshape(
        x.shape[:-1] + (pos.shape[0],))


def time_stretch(clip: AudioClip, factor: float) -> AudioClip:
    """Stretch duration by ``factor`` (1.1 is 10% longer) using linear interpolation."""
    return clip.with_samples(time_stretch_array(clip.samples, factor))


# ---------------------------------------------------------------------------
# noise


def noise_segment(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Loop or crop ``noise`` to ``length`` samples from a random start offset."""
    start = int(rng.integers(len(noise)))
    return np.take(noise, (start + np.arange(length)) % len(noise))


def noise_gain(signal: np.ndarray, segment: np.ndarray, snr: float) -> float:
    return rms(signal) / (rms(segment) * 10.0 ** (snr / 20.0))


def add_noise(clip: AudioClip, noise: AudioClip, snr: float = SNR_DB, seed=0) -> AudioClip:
    if noise.sample_rate != clip.sample_rate:
        raise ValueError(f"noise at {noise.sample_rate} Hz, clip at {clip.sample_rate} Hz")
    if len(noise) == 0 or rms(noise.samples) <= MIN_NOISE_RMS:
        raise ValueError("noise clip is silent")
    seg = noise_segment(noise.samples, len(clip), np.random.default_rng(seed))
    g = noise_gain(clip.samples, seg, snr)
    return clip.with_samples(clip.samples + g * seg)


def colored_noise(n: int, rng: np.random.Generator, exponent: float | None = None) -> np.ndarray:
    """Unit-RMS noise with a 1/f**exponent power spectrum (exponent drawn from [0, 2] if omitted)."""
    if exponent is None:
        exponent = float(rng.uniform(0.0, 2.0))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.shape[0], dtype=np.float64)
    f[0] = 1.0
    y = np.fft.irfft(spec / f ** (exponent / 2.0), n=n)
    return y / rms(y)


class NoiseCorpus:
    """Noise clips with train/val/test labels.

    Either backed by a JSONL manifest of WAV paths, or by a seeded synthetic
    generator of coloured noise (``NoiseCorpus.synthetic``).
    """

    def __init__(self, manifest: CorpusManifest, loader: Callable[[str], AudioClip] = load_wav):
        self.manifest = manifest
        self._loader = loader
        self._cache: dict[str, AudioClip] = {}

    @classmethod
    def from_jsonl(cls, path) -> "NoiseCorpus":
        return cls(CorpusManifest.from_jsonl(path))

    @classmethod
    def synthetic(cls, n_files: int = 100, sample_rate: int = 16000, duration_s: float = 3.0,
                  seed: int = 0) -> "NoiseCorpus":
        names = [f"synthetic-noise-{seed}-{i:03d}" for i in range(n_files)]
        manifest = split_manifest(names, seed=seed)
        n = int(round(duration_s * sample_rate))

        def load(name: str) -> AudioClip:
            i = int(name.rsplit("-", 1)[1])
            return AudioClip(0.1 * colored_noise(n, np.random.default_rng([seed, i])), sample_rate)

        return cls(manifest, load)

    def paths(self, split: str) -> list[str]:
        return self.manifest.paths(split)

    def load(self, path: str) -> AudioClip:
        if path not in self._cache:
            self._cache[path] = self._loader(path)
        return self._cache[path]

    def choose(self, split: str, seed) -> str:
        paths = self.paths(split)
        if not paths:
            raise ValueError(f"noise split {split!r} is empty")
        return paths[int(np.random.default_rng(seed).integers(len(paths)))]


def sample_noise(corpus: NoiseCorpus, split: str = "test", seed=0) -> AudioClip:
    return corpus.load(corpus.choose(split, seed))


_default_corpora: dict[int, NoiseCorpus] = {}


def default_noise_corpus(sample_rate: int) -> NoiseCorpus:
    if sample_rate not in _default_corpora:
        _default_corpora[sample_rate] = NoiseCorpus.synthetic(sample_rate=sample_rate)
    return _default_corpora[sample_rate]


def draw_stretch_factor(rng: np.random.Generator, bounds: Sequence[float] = STRETCH_RANGE) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def apply_condition(clip: AudioClip, condition, rng_seed=0, noise_corpus: NoiseCorpus | None = None,
                    factor: float | None = None, snr: float = SNR_DB) -> AudioClip:
    """Apply one test condition; stretch+noise stretches first, then adds noise."""
    condition = Condition.parse(condition)
    if condition is Condition.CLEAN:
        return clip
    rng = np.random.default_rng(rng_seed)
    out = clip
    if condition.stretches:
        f = draw_stretch_factor(rng) if factor is None else float(factor)
        out = time_stretch(out, f)
    if condition.noisy:
        corpus = noise_corpus if noise_corpus is not None else default_noise_corpus(clip.sample_rate)
        noise = sample_noise(corpus, "test", int(rng.integers(2 ** 32)))
        out = add_noise(out, noise, snr, seed=int(rng.integers(2 ** 32)))
    return out
