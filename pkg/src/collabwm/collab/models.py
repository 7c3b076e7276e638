"""Toy generator and detectors built on :mod:`collabwm.autograd`.

None of the networks contains a normalisation layer; detectors are plain
convolution stacks followed by global averaging and an affine scalar head.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dct

from .. import autograd as ag
from ..lfcc import LfccConfig, delta_matrix, linear_filterbank
from ..signal import LOG_FLOOR, hann, mel_filterbank

LEAK = 0.1


class Module:
    """Holds named parameters; sub-modules are discovered through attributes."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, ag.Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, list):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[ag.Tensor]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            raise ValueError("state dict keys do not match the model")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv1d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, gain: float = np.sqrt(2.0)):
        std = gain / np.sqrt(cin * kernel)
        self.weight = ag.Tensor(rng.normal(0.0, std, (cout, cin, kernel)), requires_grad=True)
        self.bias = ag.Tensor(np.zeros(cout), requires_grad=True)
        self.stride = stride
        self.padding = (kernel - 1) // 2 if padding is None else padding

    def __call__(self, x):
        return ag.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = ag.Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out)), requires_grad=True)
        self.bias = ag.Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return ag.affine(x, self.weight, self.bias)


# ---------------------------------------------------------------------------
# fixed differentiable front ends


def dft_matrix(frame_len: int, fft_size: int, max_bin: int | None = None, window: bool = True) -> np.ndarray:
    """(2K, frame_len) matrix giving [Re X; Im X] of a zero-padded windowed frame."""
    k_bins = fft_size // 2 + 1 if max_bin is None else max_bin + 1
    n = np.arange(frame_len)
    ang = 2.0 * np.pi * np.outer(np.arange(k_bins), n) / fft_size
    w = hann(frame_len) if window else np.ones(frame_len)
    return np.concatenate([np.cos(ang) * w, -np.sin(ang) * w])


class LogMelFrontEnd:
    """Differentiable ``log(max(fb @ |STFT(x)|, 1e-9))``; output (B, T, n_mels)."""

    def __init__(self, sample_rate: int, n_mels: int = 32, frame_len: int = 256, hop: int = 64,
                 fft_size: int = 256, f_min: float = 0.0, f_max: float | None = None):
        self.frame_len, self.hop = frame_len, hop
        self.fb = mel_filterbank(n_mels, fft_size, sample_rate, f_min, f_max)
        k = fft_size // 2 + 1
        self.dft = dft_matrix(frame_len, fft_size)
        self.pair_sum = np.concatenate([np.eye(k), np.eye(k)], axis=1)

    def __call__(self, x):
        spec = ag.linear_map(ag.frame(x, self.frame_len, self.hop), self.dft)
        mag = ag.sqrt(ag.linear_map(ag.square(spec), self.pair_sum))
        return ag.log(ag.maximum(ag.linear_map(mag, self.fb.weights), LOG_FLOOR))


class LfccFrontEnd:
    """Differentiable LFCC (static + delta + delta-delta); output (B, 3*n_ceps, T)."""

    def __init__(self, sample_rate: int, cfg: LfccConfig = LfccConfig()):
        self.cfg = cfg
        self.frame_len, self.hop = cfg.frame_len(sample_rate), cfg.hop(sample_rate)
        fb = linear_filterbank(cfg.n_filters, cfg.fft_size, sample_rate, cfg.f_max_policy * sample_rate)
        max_bin = int(np.max(np.nonzero(fb.any(axis=0))[0]))
        fb = fb[:, :max_bin + 1]
        self.dft = dft_matrix(self.frame_len, cfg.fft_size, max_bin)
        self.power_fb = np.concatenate([fb, fb], axis=1)  # sums Re^2 and Im^2 inside the filterbank
        self.dct = dct(np.eye(cfg.n_filters), type=2, norm="ortho", axis=0)[:cfg.n_ceps]
        self._delta_cache: dict[int, np.ndarray] = {}

    def _delta(self, t: int) -> np.ndarray:
        if t not in self._delta_cache:
            self._delta_cache[t] = delta_matrix(t, self.cfg.delta_width)
        return self._delta_cache[t]

    def __call__(self, x):
        spec = ag.linear_map(ag.frame(x, self.frame_len, self.hop), self.dft)
        energy = ag.linear_map(ag.square(spec), self.power_fb)
        ceps = ag.linear_map(ag.log(ag.maximum(energy, LOG_FLOOR)), self.dct)  # (B, T, n_ceps)
        ceps = ag.transpose(ceps, (0, 2, 1))
        if not self.cfg.include_deltas:
            return ceps
        dmat = self._delta(ceps.shape[-1])
        d1 = ag.linear_map(ceps, dmat)
        d2 = ag.linear_map(d1, dmat)
        return ag.concat([ceps, d1, d2], axis=1)


# ---------------------------------------------------------------------------
# networks


class ToyGenerator(Module):
    """Mel frames (B, n_mels, T) -> waveform (B, T * 2**n_stages) in (-1, 1)."""

    def __init__(self, n_mels: int = 20, channels=(24, 16, 12, 8, 8), kernel: int = 5, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.n_stages = len(channels) - 1
        if not 2 <= self.n_stages <= 4:
            raise ValueError("the toy generator has 2 to 4 upsampling stages")
        self.pre = Conv1d(n_mels, channels[0], kernel, rng)
        self.stages = [Conv1d(channels[i], channels[i + 1], kernel, rng) for i in range(self.n_stages)]
        self.post = Conv1d(channels[-1], 1, kernel, rng, gain=0.5)

    @property
    def upsample_factor(self) -> int:
        return 2 ** self.n_stages

    def __call__(self, mel):
        h = ag.leaky_relu(self.pre(mel), LEAK)
        for conv in self.stages:
            h = ag.leaky_relu(conv(ag.upsample_nearest(h, 2)), LEAK)
        y = ag.tanh(self.post(h))
        return ag.reshape(y, (y.shape[0], y.shape[2]))


class RawDetector(Module):
    """Waveform (B, L) -> score (B,), plus the hidden activations."""

    def __init__(self, channels=(8, 16, 16), kernels=(15, 11, 11), strides=(4, 4, 4), seed: int = 0,
                 input_length: int | None = None):
        rng = np.random.default_rng(seed)
        cin = [1] + list(channels[:-1])
        self.convs = [Conv1d(ci, co, k, rng, stride=s) for ci, co, k, s in zip(cin, channels, kernels, strides)]
        self.head = Linear(channels[-1], 1, rng)
        self.input_length = input_length

    def fit_length(self, x):
        """Zero-pad or truncate (B, L) input to ``input_length`` when it is set."""
        if self.input_length is None:
            return x
        n = x.shape[-1]
        if n >= self.input_length:
            return x[:, :self.input_length]
        return ag.concat([x, ag.Tensor(np.zeros((x.shape[0], self.input_length - n)))], axis=1)

    def features(self, x):
        h = ag.reshape(self.fit_length(x), (x.shape[0], 1, -1))
        acts = []
        for conv in self.convs:
            h = ag.leaky_relu(conv(h), LEAK)
            acts.append(h)
        return acts

    def __call__(self, x):
        acts = self.features(x)
        score = self.head(ag.mean(acts[-1], axis=2))
        return ag.reshape(score, (score.shape[0],)), acts


class LfccDetector(Module):
    """Waveform (B, L) -> LFCC -> two convolutions -> average -> affine score."""

    def __init__(self, sample_rate: int, channels: int = 16, cfg: LfccConfig = LfccConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.front = LfccFrontEnd(sample_rate, cfg)
        self.conv1 = Conv1d(cfg.dim, channels, 3, rng)
        self.conv2 = Conv1d(channels, channels, 3, rng)
        self.head = Linear(channels, 1, rng)

    def __call__(self, x):
        feats = self.front(x)
        h1 = ag.leaky_relu(self.conv1(feats), LEAK)
        h2 = ag.leaky_relu(self.conv2(h1), LEAK)
        score = self.head(ag.mean(h2, axis=2))
        return ag.reshape(score, (score.shape[0],)), [h1, h2]


def has_batch_norm(model: Module) -> bool:
    """Structural check: no attribute anywhere in the model looks like a normalisation layer."""
    stack = [model]
    while stack:
        m = stack.pop()
        for name, value in vars(m).items():
            if "norm" in name.lower() or "norm" in type(value).__name__.lower():
                return True
            if isinstance(value, Module):
                stack.append(value)
            elif isinstance(value, list):
                stack.extend(v for v in value if isinstance(v, Module))
    return False
