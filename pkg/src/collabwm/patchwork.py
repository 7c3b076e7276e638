"""Spectral patchwork watermarking with a 128-bit payload.

Each STFT frame carries one payload bit. Two keyed, disjoint sets of bins
``A`` and ``B`` are pushed apart with a power law on normalised magnitudes
(``u**(1+d)`` versus ``u**(1-d)``); detection compares the mean log-magnitude
of the two sets and sums the evidence over payload repetitions.

Magnitudes are normalised to 16-bit PCM units by default (``u = s / 2**-15``,
floored at 1) so the power law always acts in the ``u >= 1`` regime.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .augment import time_stretch_array
from .signal import WSUM_FLOOR, AudioClip, ComplexSpectrogram, hann, istft, stft

PAYLOAD_BITS = 128
FRAME_LEN = 1024
HOP = 512
REF_FRACTION = 1e-4
LSB = 2.0 ** -15
MIN_BAND_BINS = 8


class PayloadError(ValueError):
    pass


class ClipTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class WatermarkKey:
    seed: int = 0
    band: tuple[float, float] | None = None  # None: 500 Hz to 0.45 * sample_rate
    frames_per_bit: int = 1

    def __post_init__(self):
        if self.frames_per_bit < 1:
            raise ValueError("frames_per_bit must be >= 1")
        if self.band is not None and not 0 <= self.band[0] < self.band[1]:
            raise ValueError(f"bad band {self.band}")

    def band_for(self, sample_rate: int) -> tuple[float, float]:
        lo, hi = self.band if self.band is not None else (500.0, 0.45 * sample_rate)
        if hi > sample_rate / 2:
            raise ValueError(f"band upper edge {hi} Hz exceeds Nyquist")
        return lo, hi


@dataclass(frozen=True)
class Payload:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != PAYLOAD_BITS or any(b not in (0, 1) for b in bits):
            raise PayloadError(f"payload must be {PAYLOAD_BITS} bits of 0/1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_hex(cls, text: str) -> "Payload":
        text = text.strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        if len(text) != PAYLOAD_BITS // 4 or any(c not in "0123456789abcdef" for c in text):
            raise PayloadError(f"payload must be {PAYLOAD_BITS // 4} hex characters, got {text!r}")
        value = int(text, 16)
        return cls(tuple((value >> (PAYLOAD_BITS - 1 - i)) & 1 for i in range(PAYLOAD_BITS)))

    @classmethod
    def from_text(cls, text: str) -> "Payload":
        """Fixed-length payload from a short text string (UTF-8, zero padded to 16 bytes)."""
        raw = text.encode("utf-8")
        if len(raw) > PAYLOAD_BITS // 8:
            raise PayloadError("text longer than 16 bytes")
        return cls.from_hex(raw.ljust(PAYLOAD_BITS // 8, b"\0").hex())

    @classmethod
    def random(cls, seed=0) -> "Payload":
        return cls(tuple(np.random.default_rng(seed).integers(0, 2, PAYLOAD_BITS).tolist()))

    def to_hex(self) -> str:
        return bits_to_hex(self.bits)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int64)


def bits_to_hex(bits: Sequence[int]) -> str:
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return f"{value:0{(len(bits) + 3) // 4}x}"


@dataclass(frozen=True)
class StrengthGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        if not v or any(not 0 < x < 1 for x in v):
            raise ValueError("strengths must lie in (0, 1)")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("strength grid must be strictly ascending")
        object.__setattr__(self, "values", v)

    @classmethod
    def linear(cls, lo: float = 0.01, hi: float = 0.2, step: float = 0.01) -> "StrengthGrid":
        n = int(round((hi - lo) / step)) + 1
        return cls(tuple(round(lo + i * step, 10) for i in range(n)))


@dataclass
class DetectionResult:
    decoded_bits: np.ndarray
    per_bit_margin: np.ndarray
    score: float | None = None
    hard_decision: bool = False
    valid: bool = True
    speed: float = 1.0
    n_frames: int = 0

    @property
    def payload_hex(self) -> str:
        return bits_to_hex(self.decoded_bits) if self.valid else ""

    def bit_errors(self, payload: Payload) -> int:
        if not self.valid:
            return PAYLOAD_BITS
        return int(np.sum(self.decoded_bits != payload.as_array()))


@dataclass(frozen=True)
class StrengthSearchResult:
    strength: float
    success: bool

    def __str__(self):
        return f"{self.strength:g}" if self.success else "FAILED"


# ---------------------------------------------------------------------------


def band_bins(key: WatermarkKey, fft_size: int, sample_rate: int) -> np.ndarray:
    lo, hi = key.band_for(sample_rate)
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    return np.flatnonzero((freqs >= lo) & (freqs <= hi))


def derive_bin_sets(key: WatermarkKey, fft_size: int = FRAME_LEN, sample_rate: int = 16000):
    """Keyed disjoint bin sets (A, B) of equal size drawn from the embedding band."""
    bins = band_bins(key, fft_size, sample_rate)
    if bins.size < MIN_BAND_BINS:
        raise ValueError(f"band covers {bins.size} bins; need at least {MIN_BAND_BINS}")
    perm = np.random.default_rng(np.uint64(key.seed & 0xFFFFFFFFFFFFFFFF)).permutation(bins)
    half = bins.size // 2
    return np.sort(perm[:half]), np.sort(perm[half:2 * half])


def reference_level(mag: np.ndarray, mode: str = "lsb") -> float:
    """Normalisation level for magnitudes.

    ``"lsb"`` measures magnitudes in 16-bit PCM units (one LSB = 2**-15);
    ``"peak"`` uses 1e-4 of the utterance's peak magnitude.
    """
    if mode == "lsb":
        return LSB
    if mode == "peak":
        return REF_FRACTION * (float(mag.max()) if mag.size else 0.0)
    raise ValueError(f"unknown reference mode {mode!r}")


def normalize(mag: np.ndarray, s_ref: float) -> np.ndarray:
    """Map magnitudes to ``u >= 1``; bins below the reference level sit at exactly 1."""
    return np.maximum(mag, s_ref) / s_ref


def embed_bit(frame: np.ndarray, a: np.ndarray, b: np.ndarray, bit: int, d: float,
              s_ref: float | None = None) -> np.ndarray:
    """Apply the patchwork power law to one magnitude row.

    With ``s_ref`` omitted the row is treated as already normalised (``u`` values).
    """
    if not 0 <= d < 1:
        raise ValueError("strength must be in [0, 1)")
    out = np.array(frame, dtype=np.float64, copy=True)
    if d == 0:
        return out
    up, down = (a, b) if bit else (b, a)
    if s_ref is None:
        out[up] = out[up] ** (1 + d)
        out[down] = out[down] ** (1 - d)
        return out
    if s_ref <= 0:
        return out
    u = normalize(out, s_ref)
    out[up] = u[up] ** (1 + d) * s_ref
    out[down] = u[down] ** (1 - d) * s_ref
    return out


def _frame_bits(n_frames: int, frames_per_bit: int, n_bits: int = PAYLOAD_BITS) -> np.ndarray:
    return (np.arange(n_frames) // frames_per_bit) % n_bits


def _resynthesize(spec: ComplexSpectrogram, clip: AudioClip) -> AudioClip:
    """ISTFT trimmed or padded back to the input length.

    Samples no frame covers with non-zero window weight (the first sample, and
    anything past the last frame) are copied from the input.
    """
    y = istft(spec).samples
    out = np.array(clip.samples, copy=True)
    n = min(len(y), len(out))
    w2 = hann(spec.frame_len) ** 2
    wsum = np.zeros(n)
    for i in range(spec.frames.shape[0]):
        seg = wsum[i * spec.hop:i * spec.hop + spec.frame_len]
        seg += w2[:len(seg)]
    covered = wsum > WSUM_FLOOR
    out[:n][covered] = y[:n][covered]
    return clip.with_samples(out)


def reconstruct(clip: AudioClip) -> AudioClip:
    """The STFT/ISTFT round trip used by :func:`embed`, without modification."""
    return _resynthesize(stft(clip, FRAME_LEN, HOP, FRAME_LEN), clip)


def embed(clip: AudioClip, payload: Payload, key: WatermarkKey, d: float, norm: str = "lsb") -> AudioClip:
    spec = stft(clip, FRAME_LEN, HOP, FRAME_LEN)
    t = spec.frames.shape[0]
    need = PAYLOAD_BITS * key.frames_per_bit
    if t < need:
        raise ClipTooShortError(f"clip has {t} frames; one payload repetition needs {need}")
    if not 0 <= d < 1:
        raise ValueError("strength must be in [0, 1)")
    if d == 0:
        return _resynthesize(spec, clip)
    a, b = derive_bin_sets(key, FRAME_LEN, clip.sample_rate)
    mag = np.abs(spec.frames)
    phase = np.exp(1j * np.angle(spec.frames))
    s_ref = reference_level(mag, norm)
    bits = payload.as_array()[_frame_bits(t, key.frames_per_bit)]
    new = np.empty_like(mag)
    for i in range(t):
        new[i] = embed_bit(mag[i], a, b, int(bits[i]), d, s_ref)
    out = ComplexSpectrogram(new * phase, spec.frame_len, spec.hop, spec.fft_size, spec.sample_rate, len(clip))
    return _resynthesize(out, clip)


def frame_margins(mag: np.ndarray, a: np.ndarray, b: np.ndarray, s_ref: float | None = None,
                  statistic: str = "log") -> np.ndarray:
    """Per-frame patchwork statistic: mean over A minus mean over B."""
    if statistic == "raw":
        return mag[:, a].mean(axis=1) - mag[:, b].mean(axis=1)
    if statistic != "log":
        raise ValueError(f"unknown statistic {statistic!r}")
    if s_ref is None:
        lu = np.log(mag)
    elif s_ref <= 0:
        return np.zeros(mag.shape[0])
    else:
        lu = np.log(normalize(mag, s_ref))
    return lu[:, a].mean(axis=1) - lu[:, b].mean(axis=1)


def detect_bit(frames: np.ndarray, a: np.ndarray, b: np.ndarray, s_ref: float | None = None,
               statistic: str = "log") -> tuple[int, float]:
    """Decode one bit from the magnitude rows of its frame group.

    Without ``s_ref`` the rows are taken as normalised values ``u``.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[0] == 0:
        raise ValueError("need at least one frame")
    margin = float(frame_margins(frames, a, b, s_ref, statistic).mean())
    return int(margin > 0), margin


def _bit_margins(clip: AudioClip, key: WatermarkKey, statistic: str, norm: str):
    spec = stft(clip, FRAME_LEN, HOP, FRAME_LEN)
    mag = np.abs(spec.frames)
    t = mag.shape[0]
    if t == 0:
        return None, 0
    a, b = derive_bin_sets(key, FRAME_LEN, clip.sample_rate)
    fm = frame_margins(mag, a, b, reference_level(mag, norm), statistic)
    fpb = key.frames_per_bit
    group = np.arange(t) // fpb
    n_groups = int(group[-1]) + 1
    group_mean = np.bincount(group, weights=fm, minlength=n_groups) / np.bincount(group, minlength=n_groups)
    per_bit = np.bincount(np.arange(n_groups) % PAYLOAD_BITS, weights=group_mean, minlength=PAYLOAD_BITS)
    return per_bit, t


def detect(clip: AudioClip, key: WatermarkKey, reference: Payload | None = None,
           statistic: str = "log", speeds: Sequence[float] | None = None,
           norm: str = "lsb") -> DetectionResult:
    """Decode the payload from ``clip``.

    ``speeds`` optionally lists playback-speed hypotheses (stretch factors); the
    clip is un-stretched by each. With a ``reference`` the hypothesis whose
    margins agree best with it wins, otherwise the one with the largest total
    absolute margin.
    """
    sign = None if reference is None else 2.0 * reference.as_array() - 1
    best = None
    for speed in (speeds if speeds else (1.0,)):
        x = clip if speed == 1.0 else clip.with_samples(time_stretch_array(clip.samples, 1.0 / speed))
        margins, t = _bit_margins(x, key, statistic, norm)
        if margins is None:
            continue
        strength = float(np.abs(margins).sum() if sign is None else (margins * sign).sum())
        if best is None or strength > best[0]:
            best = (strength, margins, t, speed)
    if best is None:
        return DetectionResult(np.zeros(PAYLOAD_BITS, dtype=np.int64), np.zeros(PAYLOAD_BITS), None, False, False)
    _, margins, t, speed = best
    decoded = (margins > 0).astype(np.int64)
    result = DetectionResult(decoded, margins, None, False, True, speed, t)
    if sign is not None:
        result.score = float(np.mean(margins * sign))
        result.hard_decision = bool(np.array_equal(decoded, reference.as_array()))
    return result


def speed_grid(lo: float = 0.9, hi: float = 1.1, step: float = 0.0025) -> tuple[float, ...]:
    n = int(round((hi - lo) / step)) + 1
    return tuple(round(lo + i * step, 10) for i in range(n))


def search_strength(clip: AudioClip, payload: Payload, key: WatermarkKey,
                    grid: StrengthGrid = StrengthGrid.linear(), statistic: str = "log",
                    norm: str = "lsb") -> StrengthSearchResult:
    """Smallest grid strength whose clean round trip decodes the payload exactly."""
    for d in grid.values:
        marked = embed(clip, payload, key, d, norm)
        if detect(marked, key, payload, statistic, norm=norm).hard_decision:
            return StrengthSearchResult(d, True)
    return StrengthSearchResult(grid.values[-1], False)


def log_spectral_distortion(a: AudioClip, b: AudioClip) -> float:
    """RMS difference of log10 power spectra in dB, averaged over frames."""
    sa = np.abs(stft(a, FRAME_LEN, HOP, FRAME_LEN).frames) ** 2 + 1e-12
    sb = np.abs(stft(b, FRAME_LEN, HOP, FRAME_LEN).frames) ** 2 + 1e-12
    diff = 10 * np.log10(sa) - 10 * np.log10(sb)
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=1))))
