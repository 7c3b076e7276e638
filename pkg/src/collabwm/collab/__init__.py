"""Toy generator, detectors and the alternating collaborative training loop."""

from .corpus import synth_toy_corpus
from .losses import LossWeights, Role, generator_total_loss, loss_d, loss_fm, loss_g_adv, loss_mel, loss_wm
from .models import LfccDetector, RawDetector, ToyGenerator, has_batch_norm
from .train import AdamW, TrainConfig, run_experiment, train, train_step

__all__ = [
    "AdamW", "LfccDetector", "LossWeights", "RawDetector", "Role", "ToyGenerator", "TrainConfig",
    "generator_total_loss", "has_batch_norm", "loss_d", "loss_fm", "loss_g_adv", "loss_mel", "loss_wm",
    "run_experiment", "synth_toy_corpus", "train", "train_step",
]
