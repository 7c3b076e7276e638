"""Synthetic harmonic "speech" corpus used in place of a recorded speech corpus."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..manifest import CorpusManifest, split_manifest
from ..signal import AudioClip

NOISE_FLOOR_DB = -40.0


@dataclass(frozen=True)
class ToyUtterance:
    clip: AudioClip
    f0: float
    n_harmonics: int


def _envelope(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth syllable-like amplitude envelope in [0.1, 1]."""
    n_knots = max(4, int(n / sample_rate * 6))
    knots = rng.uniform(0.1, 1.0, n_knots)
    t = np.linspace(0, n_knots - 1, n)
    env = np.interp(t, np.arange(n_knots), knots)
    k = max(1, sample_rate // 50)
    env = np.convolve(env, np.hanning(k) / np.hanning(k).sum(), mode="same")
    return np.clip(env, 0.1, 1.0)


def synth_utterance(duration_s: float, sample_rate: int, rng: np.random.Generator) -> ToyUtterance:
    n = int(round(duration_s * sample_rate))
    f0 = float(rng.uniform(80.0, 300.0))
    max_h = int((0.45 * sample_rate) // f0)
    n_h = int(min(rng.integers(3, 9), max_h))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for h in range(1, n_h + 1):
        amp = rng.uniform(0.2, 1.0) / h
        x += amp * _envelope(n, sample_rate, rng) * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    x *= _envelope(n, sample_rate, rng)
    x *= rng.uniform(0.1, 0.3) / np.sqrt(np.mean(x ** 2))
    floor = np.sqrt(np.mean(x ** 2)) * 10 ** (NOISE_FLOOR_DB / 20)
    x += floor * rng.standard_normal(n)
    return ToyUtterance(AudioClip(x, sample_rate), f0, n_h)


def synth_toy_corpus(n_utterances: int, duration_s: float, sample_rate: int = 8000, seed: int = 0,
                     with_meta: bool = False):
    """Return ``(clips, manifest)``; manifest paths are ``toy://<seed>/<index>`` names.

    With ``with_meta`` the first element is a list of :class:`ToyUtterance`.
    """
    rng = np.random.default_rng(seed)
    utts = [synth_utterance(duration_s, sample_rate, rng) for _ in range(n_utterances)]
    names = [f"toy://{seed}/{i:04d}" for i in range(n_utterances)]
    manifest = split_manifest(names, seed=seed) if n_utterances >= 10 else CorpusManifest()
    if with_meta:
        return utts, manifest
    return [u.clip for u in utts], manifest
