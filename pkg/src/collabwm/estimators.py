"""scikit-learn style wrappers over the functional modules.

Waveform batches are 2-D arrays with one equal-length signal per row.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import patchwork as pw
from .lfcc import LfccConfig, lfcc_array
from .resample import resample_array
from .signal import AudioClip


def _check_waveforms(X) -> np.ndarray:
    return check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)


class LFCCTransformer(TransformerMixin, BaseEstimator):
    """Waveform rows -> LFCC features.

    ``pooling="flatten"`` returns the (T, dim) matrix flattened per row;
    ``"mean_std"`` returns per-coefficient mean and standard deviation.
    """

    def __init__(self, sample_rate: int = 16000, n_filters: int = 20, n_ceps: int = 20,
                 include_deltas: bool = True, pooling: str = "flatten"):
        self.sample_rate = sample_rate
        self.n_filters = n_filters
        self.n_ceps = n_ceps
        self.include_deltas = include_deltas
        self.pooling = pooling

    def _config(self) -> LfccConfig:
        return LfccConfig(n_filters=self.n_filters, n_ceps=self.n_ceps, include_deltas=self.include_deltas)

    def fit(self, X, y=None):
        X = _check_waveforms(X)
        if self.pooling not in ("flatten", "mean_std"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        self.n_features_in_ = X.shape[1]
        self.config_ = self._config()
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = _check_waveforms(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} samples per row, got {X.shape[1]}")
        out = []
        for row in X:
            f = lfcc_array(row, self.sample_rate, self.config_)
            out.append(f.reshape(-1) if self.pooling == "flatten" else np.concatenate([f.mean(0), f.std(0)]))
        return np.stack(out)


class ResampleTransformer(TransformerMixin, BaseEstimator):
    def __init__(self, source_rate: int = 22050, target_rate: int = 16000):
        self.source_rate = source_rate
        self.target_rate = target_rate

    def fit(self, X, y=None):
        X = _check_waveforms(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _check_waveforms(X)
        return np.stack([resample_array(row, self.source_rate, self.target_rate) for row in X])


class PatchworkWatermarker(ClassifierMixin, BaseEstimator):
    """Embeds a keyed 128-bit payload (``transform``) and detects it (``predict``).

    ``fit`` searches a strength per row unless ``strength`` is fixed; the
    median of the found strengths is used for later ``transform`` calls.
    ``predict`` returns 1 for rows whose payload decodes exactly.
    """

    def __init__(self, key_seed: int = 0, payload: str | None = None, strength: float | None = None,
                 grid_min: float = 0.01, grid_max: float = 0.2, grid_step: float = 0.01,
                 sample_rate: int = 16000, speed_compensation: bool = True):
        self.key_seed = key_seed
        self.payload = payload
        self.strength = strength
        self.grid_min = grid_min
        self.grid_max = grid_max
        self.grid_step = grid_step
        self.sample_rate = sample_rate
        self.speed_compensation = speed_compensation

    def _key(self):
        return pw.WatermarkKey(self.key_seed)

    def _payload(self):
        return pw.Payload.from_hex(self.payload) if self.payload else pw.Payload.random(self.key_seed)

    def fit(self, X, y=None):
        X = _check_waveforms(X)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.payload_ = self._payload()
        if self.strength is not None:
            self.strengths_ = np.full(len(X), float(self.strength))
            self.success_ = np.ones(len(X), dtype=bool)
        else:
            grid = pw.StrengthGrid.linear(self.grid_min, self.grid_max, self.grid_step)
            found = [pw.search_strength(AudioClip(row, self.sample_rate), self.payload_, self._key(), grid)
                     for row in X]
            self.strengths_ = np.array([r.strength for r in found])
            self.success_ = np.array([r.success for r in found])
        self.strength_ = float(np.median(self.strengths_))
        return self

    def transform(self, X):
        check_is_fitted(self, "strength_")
        X = _check_waveforms(X)
        return np.stack([pw.embed(AudioClip(row, self.sample_rate), self.payload_, self._key(), self.strength_).samples
                         for row in X])

    def fit_transform(self, X, y=None):
        """Embed each row at its own searched strength."""
        self.fit(X)
        X = _check_waveforms(X)
        return np.stack([pw.embed(AudioClip(row, self.sample_rate), self.payload_, self._key(), s).samples
                         for row, s in zip(X, self.strengths_)])

    def _detect(self, X):
        check_is_fitted(self, "payload_")
        X = _check_waveforms(X)
        speeds = pw.speed_grid(step=0.005) if self.speed_compensation else None
        return [pw.detect(AudioClip(row, self.sample_rate), self._key(), self.payload_, speeds=speeds) for row in X]

    def decision_function(self, X):
        """Mean signed per-bit margin against the payload (higher means marked)."""
        return np.array([r.score if r.valid else -np.inf for r in self._detect(X)])

    def predict(self, X):
        return np.array([int(r.hard_decision) for r in self._detect(X)])


class CollaborativeWatermarker(ClassifierMixin, BaseEstimator):
    """Trains the toy generator jointly with a watermark detector.

    ``fit(X)`` trains on the waveform rows of ``X`` (or on the synthetic toy
    corpus when ``X`` is None). ``decision_function`` returns detector scores,
    higher meaning natural; ``predict`` labels a row 1 when it looks generated.
    """

    def __init__(self, role: str = "collaborator", augment: bool = False, iterations: int = 2000,
                 seed: int = 0, sample_rate: int = 8000, batch_size: int = 2, segment: int = 4096,
                 lr: float = 2e-4, wm_weight: float = 1.0, threshold: float = 0.5):
        self.role = role
        self.augment = augment
        self.iterations = iterations
        self.seed = seed
        self.sample_rate = sample_rate
        self.batch_size = batch_size
        self.segment = segment
        self.lr = lr
        self.wm_weight = wm_weight
        self.threshold = threshold

    def _config(self):
        from .collab.losses import LossWeights
        from .collab.train import TrainConfig
        return TrainConfig(seed=self.seed, iterations=self.iterations, batch_size=self.batch_size,
                           segment=self.segment, lr=self.lr,
                           augment=self.augment, sample_rate=self.sample_rate,
                           weights=LossWeights(wm=self.wm_weight))

    def fit(self, X=None, y=None):
        from .collab.train import build_data, data_from_clips, train
        cfg = self._config()
        if X is None:
            data = build_data(cfg)
        else:
            X = _check_waveforms(X)
            self.n_features_in_ = X.shape[1]
            data = data_from_clips(list(X), cfg)
        self.state_ = train(cfg, self.role, data=data)
        self.classes_ = np.array([0, 1])
        return self

    def generate(self, mel: np.ndarray) -> np.ndarray:
        """Conditioning log-mel (n_mels, T) -> waveform."""
        from .collab.train import generate
        check_is_fitted(self, "state_")
        return generate(self.state_.models, np.asarray(mel, dtype=np.float64), self.sample_rate).samples

    def decision_function(self, X):
        from .collab.train import detector_score_fn
        check_is_fitted(self, "state_")
        X = _check_waveforms(X)
        score = detector_score_fn(self.state_.models, self.state_.cfg)
        return np.array([score(AudioClip(row, self.sample_rate)) for row in X])

    def predict(self, X):
        return (self.decision_function(X) < self.threshold).astype(int)
