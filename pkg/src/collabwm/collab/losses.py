"""Least-squares GAN, feature-matching, mel and watermark-detector losses."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .. import autograd as ag


class Role(str, Enum):
    DISCRIMINATOR = "discriminator"
    OBSERVER = "observer"
    COLLABORATOR = "collaborator"

    @classmethod
    def parse(cls, value) -> "Role":
        try:
            return value if isinstance(value, cls) else cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown role {value!r}") from None


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    fm: float = 2.0
    mel: float = 45.0
    wm: float = 1.0


def loss_d(d_real, d_gen) -> ag.Tensor:
    """``mean[(D(real) - 1)^2 + D(gen)^2]``."""
    d_real, d_gen = ag.as_tensor(d_real), ag.as_tensor(d_gen)
    if d_real.shape != d_gen.shape:
        raise ValueError("real and generated score batches differ in shape")
    return ag.mean(ag.square(d_real - 1.0) + ag.square(d_gen))


loss_wm = loss_d


def loss_g_adv(d_gen) -> ag.Tensor:
    return ag.mean(ag.square(ag.as_tensor(d_gen) - 1.0))


def loss_fm(real_acts, gen_acts) -> ag.Tensor:
    """Sum over layers of the mean squared activation difference."""
    if len(real_acts) != len(gen_acts):
        raise ValueError("layer counts differ")
    total = ag.Tensor(0.0)
    for r, g in zip(real_acts, gen_acts):
        r, g = ag.as_tensor(r), ag.as_tensor(g)
        if r.shape != g.shape:
            raise ValueError(f"activation shapes differ: {r.shape} vs {g.shape}")
        total = total + ag.mean(ag.square(r - g))
    return total


def loss_mel(x_real, x_gen, front_end) -> ag.Tensor:
    """Mean absolute log-mel difference; ``front_end`` is a differentiable log-mel."""
    return ag.mean(ag.abs_(front_end(x_real) - front_end(x_gen)))


def generator_total_loss(role, adv, fm, mel, wm=None, weights: LossWeights = LossWeights()) -> ag.Tensor:
    """Weighted generator objective.

    The watermark term enters only for a collaborating detector. In observer
    mode it is left out and the caller must feed the detector a detached copy
    of the generated signal.
    """
    role = Role.parse(role)
    total = weights.adv * ag.as_tensor(adv) + weights.fm * ag.as_tensor(fm) + weights.mel * ag.as_tensor(mel)
    if role is Role.COLLABORATOR:
        if wm is None:
            raise ValueError("collaborator role needs the watermark loss")
        total = total + weights.wm * ag.as_tensor(wm)
    elif role is not Role.OBSERVER:
        raise ValueError(f"{role.value} is not a watermark-detector role")
    return total
