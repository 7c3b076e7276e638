"""Audio watermarking toolkit: spectral patchwork, augmentation, EER evaluation and collaborative training."""

from .augment import ALL_CONDITIONS, Condition, NoiseCorpus, add_noise, apply_condition, time_stretch
from .lfcc import FeatureMatrix, LfccConfig, lfcc
from .manifest import CorpusManifest, split_manifest
from .metrics import EvalReport, ScoreSet, eer, evaluate_detector, evaluate_patchwork
from .patchwork import (DetectionResult, Payload, StrengthGrid, WatermarkKey, detect, embed,
                        search_strength)
from .resample import resample
from .signal import AudioClip, istft, load_wav, log_mel, mel_filterbank, save_wav, stft

__version__ = "0.1.0"

__all__ = [
    "ALL_CONDITIONS", "AudioClip", "Condition", "CorpusManifest", "DetectionResult", "EvalReport",
    "FeatureMatrix", "LfccConfig", "NoiseCorpus", "Payload", "ScoreSet", "StrengthGrid", "WatermarkKey",
    "add_noise", "apply_condition", "detect", "eer", "embed", "evaluate_detector", "evaluate_patchwork",
    "istft", "lfcc", "load_wav", "log_mel", "mel_filterbank", "resample", "save_wav", "search_strength",
    "split_manifest", "stft", "time_stretch",
]
