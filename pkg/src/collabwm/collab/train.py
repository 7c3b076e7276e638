"""Alternating-minibatch training of the toy generator with a watermark detector."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .. import autograd as ag
from ..augment import NoiseCorpus, noise_segment, rms
from ..signal import AudioClip, log_mel, mel_filterbank
from .corpus import synth_toy_corpus
from .losses import LossWeights, Role, generator_total_loss, loss_d, loss_fm, loss_g_adv, loss_mel, loss_wm
from .models import LfccDetector, LogMelFrontEnd, Module, RawDetector, ToyGenerator

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    iterations: int = 2000
    batch_size: int = 2
    segment: int = 4096
    lr: float = 2e-4
    betas: tuple[float, float] = (0.8, 0.99)
    weight_decay: float = 0.01
    lr_decay: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    augment: bool = False
    stretch_range: tuple[float, float] = (0.9, 1.1)
    snr_db: float = 10.0
    wm_variant: str = "lfcc"  # or "raw"
    detector_rate: int | None = None  # resample between generator and detector when set
    sample_rate: int = 8000
    n_utterances: int = 200
    utterance_s: float = 2.0
    data_seed: int = 0
    cond_mels: int = 20
    cond_frame: int = 128
    cond_hop: int = 16
    eval_rounds: int = 3
    eval_segment: int = 400  # detector decisions are scored on non-overlapping segments of this many samples
    noise_files: int = 100

    def to_json(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["stretch_range"] = list(self.stretch_range)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        for k in ("betas", "stretch_range"):
            if k in d:
                d[k] = tuple(d[k])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.lr < 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("lr must be >= 0 and lr_decay in (0, 1]")
        if self.wm_variant not in ("lfcc", "raw"):
            raise ValueError(f"unknown wm_variant {self.wm_variant!r}")
        if self.segment % self.cond_hop:
            raise ValueError("segment must be a multiple of cond_hop")


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr: float, betas=(0.8, 0.99), weight_decay: float = 0.01, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data = p.data - self.lr * self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "lr": self.lr, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state(self, state: dict) -> None:
        self.t, self.lr = int(state["t"]), float(state["lr"])
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]


# ---------------------------------------------------------------------------
# data


@dataclass
class ToyData:
    clips: list
    mels: list           # per utterance (n_mels, T) conditioning frames, T = N / cond_hop
    train: list
    val: list
    test: list
    noise: NoiseCorpus


def conditioning_mel(x: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Log-mel frames aligned so frame t covers output samples [t*hop, (t+1)*hop)."""
    pad = (cfg.cond_frame - cfg.cond_hop) // 2
    xp = np.pad(x, (pad, cfg.cond_frame - cfg.cond_hop - pad))
    fb = mel_filterbank(cfg.cond_mels, cfg.cond_frame, cfg.sample_rate)
    return log_mel(AudioClip(xp, cfg.sample_rate), fb, cfg.cond_frame, cfg.cond_hop).T


def build_data(cfg: TrainConfig) -> ToyData:
    clips, _ = synth_toy_corpus(cfg.n_utterances, cfg.utterance_s, cfg.sample_rate, cfg.data_seed)
    return data_from_clips([c.samples for c in clips], cfg)


def data_from_clips(clips, cfg: TrainConfig) -> ToyData:
    """Split equal-length waveforms 80/10/10 (seeded) and precompute conditioning mels."""
    from ..manifest import split_manifest
    n = (min(len(c) for c in clips) // cfg.cond_hop) * cfg.cond_hop
    if n < cfg.segment:
        raise ValueError(f"clips hold {n} samples, fewer than one training segment ({cfg.segment})")
    clips = [np.asarray(c, dtype=np.float64)[:n] for c in clips]
    names = [f"clip/{i:05d}" for i in range(len(clips))]
    manifest = split_manifest(names, seed=cfg.data_seed)
    split = {s: sorted(int(p.rsplit("/", 1)[1]) for p in manifest.paths(s)) for s in ("train", "val", "test")}
    mels = [conditioning_mel(x, cfg) for x in clips]
    noise = NoiseCorpus.synthetic(cfg.noise_files, cfg.sample_rate, 3.0, seed=cfg.data_seed)
    return ToyData(clips, mels, split["train"], split["val"], split["test"], noise)


def sample_batch(data: ToyData, cfg: TrainConfig, rng: np.random.Generator):
    idx = rng.choice(data.train, size=cfg.batch_size)
    frames = cfg.segment // cfg.cond_hop
    xs, ms = [], []
    for i in idx:
        n_frames = data.mels[i].shape[1]
        start = int(rng.integers(0, n_frames - frames + 1))
        ms.append(data.mels[i][:, start:start + frames])
        xs.append(data.clips[i][start * cfg.cond_hop:(start + frames) * cfg.cond_hop])
    return np.stack(ms), np.stack(xs)


# ---------------------------------------------------------------------------
# models and state


@dataclass
class ToyModels:
    generator: ToyGenerator
    discriminator: RawDetector
    detector: Module
    mel_loss_front: LogMelFrontEnd

    def modules(self) -> dict[str, Module]:
        return {"generator": self.generator, "discriminator": self.discriminator, "detector": self.detector}


def build_models(cfg: TrainConfig) -> ToyModels:
    g = ToyGenerator(cfg.cond_mels, seed=cfg.seed)
    d = RawDetector(seed=cfg.seed + 1)
    rate = cfg.detector_rate or cfg.sample_rate
    if cfg.wm_variant == "lfcc":
        wm = LfccDetector(rate, seed=cfg.seed + 2)
    else:
        wm = RawDetector(seed=cfg.seed + 2, input_length=cfg.segment)
    return ToyModels(g, d, wm, LogMelFrontEnd(cfg.sample_rate))


@dataclass
class TrainState:
    cfg: TrainConfig
    models: ToyModels
    opt_g: AdamW
    opt_d: AdamW
    opt_wm: AdamW
    role: Role
    data_rng: np.random.Generator
    aug_rng: np.random.Generator
    data: ToyData | None = None
    step: int = 0
    log: list = field(default_factory=list)


def init_state(cfg: TrainConfig, role, models: ToyModels | None = None, data: ToyData | None = None) -> TrainState:
    cfg.validate()
    models = models or build_models(cfg)
    kw = dict(lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    return TrainState(cfg, models, AdamW(models.generator.parameters(), **kw),
                      AdamW(models.discriminator.parameters(), **kw), AdamW(models.detector.parameters(), **kw),
                      Role.parse(role), np.random.default_rng([cfg.seed, 1]), np.random.default_rng([cfg.seed, 2]), data)


def _to_detector_rate(x, cfg: TrainConfig):
    if cfg.detector_rate and cfg.detector_rate != cfg.sample_rate:
        return ag.resample(x, cfg.sample_rate, cfg.detector_rate)
    return x


def _check_finite(name: str, value: ag.Tensor, step: int) -> float:
    v = float(value.data)
    if not np.isfinite(v):
        raise FloatingPointError(f"non-finite {name} loss ({v}) at step {step}")
    return v


@dataclass(frozen=True)
class Augmentation:
    """Per-batch augmentation draw: one stretch factor and one noise segment per batch element."""

    factor: float
    noise: np.ndarray  # (B, L_stretched) unit noise segments


def draw_augmentation(cfg: TrainConfig, corpus: NoiseCorpus, batch: int, length: int,
                      rng: np.random.Generator) -> Augmentation:
    factor = float(rng.uniform(*cfg.stretch_range))
    n = int(round(length * factor))
    segs = []
    for _ in range(batch):
        clip = corpus.load(corpus.choose("train", int(rng.integers(2 ** 32))))
        segs.append(noise_segment(clip.samples, n, rng))
    return Augmentation(factor, np.stack(segs))


def augment_batch(x, aug: Augmentation, snr_db: float):
    """Differentiable stretch (shared factor) then additive noise at ``snr_db``."""
    y = ag.time_stretch(x, aug.factor)
    gains = np.array([rms(row) / (rms(seg) * 10 ** (snr_db / 20)) for row, seg in zip(y.data, aug.noise)])
    return ag.add_constant(y, gains[:, None] * aug.noise)


def wm_input(x_gen, role: Role, weight: float):
    """Generated signal as seen by the detector: gradient-scaled for a collaborator, detached otherwise."""
    if role is Role.COLLABORATOR:
        return ag.grad_scale(x_gen, weight)
    return ag.detach(x_gen)


def d_step(state: TrainState, mel: np.ndarray, x_real: np.ndarray) -> dict:
    m = state.models
    with ag.no_grad():
        x_gen = m.generator(ag.Tensor(mel)).data
    m.discriminator.zero_grad()
    d_real, _ = m.discriminator(ag.Tensor(x_real))
    d_gen, _ = m.discriminator(ag.Tensor(x_gen))
    loss = loss_d(d_real, d_gen)
    value = _check_finite("discriminator", loss, state.step)
    loss.backward()
    state.opt_d.step()
    return {"phase": "d", "loss_d": value}


def g_step(state: TrainState, mel: np.ndarray, x_real: np.ndarray) -> dict:
    cfg, m, w = state.cfg, state.models, state.cfg.weights
    for mod in m.modules().values():
        mod.zero_grad()
    x_gen = m.generator(ag.Tensor(mel))
    with ag.no_grad():
        _, real_acts = m.discriminator(ag.Tensor(x_real))
    d_gen, gen_acts = m.discriminator(x_gen)
    adv = loss_g_adv(d_gen)
    fm = loss_fm(real_acts, gen_acts)
    mel_l = loss_mel(ag.Tensor(x_real), x_gen, m.mel_loss_front)

    real_in, gen_in = ag.Tensor(x_real), wm_input(x_gen, state.role, w.wm)
    if cfg.augment:
        aug = draw_augmentation(cfg, state.data.noise, x_real.shape[0], x_real.shape[1], state.aug_rng)
        real_in = augment_batch(real_in, aug, cfg.snr_db)
        gen_in = augment_batch(gen_in, aug, cfg.snr_db)
    wm_real, _ = m.detector(_to_detector_rate(real_in, cfg))
    wm_gen, _ = m.detector(_to_detector_rate(gen_in, cfg))
    l_wm = loss_wm(wm_real, wm_gen)

    base = w.adv * adv + w.fm * fm + w.mel * mel_l
    # the detector receives dL_wm; the generator receives weight * dL_wm through wm_input
    (base + l_wm).backward()
    total = generator_total_loss(state.role, adv.data, fm.data, mel_l.data, l_wm.data, w)
    logs = {"phase": "g", "loss_g": _check_finite("generator", total, state.step),
            "adv": float(adv.data), "fm": float(fm.data), "mel": float(mel_l.data),
            "wm": _check_finite("watermark", l_wm, state.step)}
    state.opt_g.step()
    state.opt_wm.step()
    return logs


def train_step(state: TrainState, batch=None) -> dict:
    """One alternating step: odd steps train D, even steps train G and the detector."""
    state.step += 1
    if batch is None:
        batch = sample_batch(state.data, state.cfg, state.data_rng)
    mel, x_real = batch
    logs = d_step(state, mel, x_real) if state.step % 2 == 1 else g_step(state, mel, x_real)
    logs["step"] = state.step
    logs["lr"] = state.opt_g.lr
    n_train = len(state.data.train) if state.data is not None else state.cfg.batch_size
    epoch_steps = max(1, n_train // state.cfg.batch_size)
    if state.step % epoch_steps == 0:
        for opt in (state.opt_g, state.opt_d, state.opt_wm):
            opt.lr *= state.cfg.lr_decay
    state.log.append(logs)
    return logs


def train(cfg: TrainConfig, role, data: ToyData | None = None, checkpoint: str | None = None,
          checkpoint_every: int = 0, resume: bool = False) -> TrainState:
    data = data or build_data(cfg)
    state = init_state(cfg, role, data=data)
    if resume and checkpoint and os.path.exists(checkpoint):
        load_checkpoint(state, checkpoint)
    if checkpoint and state.step == 0:
        save_checkpoint(state, checkpoint)
    while state.step < cfg.iterations:
        train_step(state)
        if checkpoint and checkpoint_every and state.step % checkpoint_every == 0:
            save_checkpoint(state, checkpoint)
    if checkpoint:
        save_checkpoint(state, checkpoint)
    return state


# ---------------------------------------------------------------------------
# checkpoints and logs


def save_checkpoint(state: TrainState, path: str) -> None:
    """Write an ``.npz`` checkpoint atomically (temp file then rename)."""
    arrays = {"__version__": np.array(CHECKPOINT_VERSION)}
    for mname, mod in state.models.modules().items():
        for k, v in mod.state_dict().items():
            arrays[f"model/{mname}/{k}"] = v
    for oname in ("opt_g", "opt_d", "opt_wm"):
        st = getattr(state, oname).state()
        arrays[f"optim/{oname}/t"] = np.array(st["t"])
        arrays[f"optim/{oname}/lr"] = np.array(st["lr"])
        for i, (m, v) in enumerate(zip(st["m"], st["v"])):
            arrays[f"optim/{oname}/m/{i}"] = m
            arrays[f"optim/{oname}/v/{i}"] = v
    meta = {"step": state.step, "role": state.role.value, "config": state.cfg.to_json(),
            "data_rng": state.data_rng.bit_generator.state, "aug_rng": state.aug_rng.bit_generator.state}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def read_checkpoint(path: str) -> dict:
    with np.load(path, allow_pickle=False) as z:
        if int(z["__version__"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(z['__version__'])}")
        return {k: z[k] for k in z.files}


def load_checkpoint(state: TrainState, path: str) -> None:
    z = read_checkpoint(path)
    meta = json.loads(str(z["__meta__"]))
    if Role.parse(meta["role"]) != state.role:
        raise ValueError(f"checkpoint {path} was written for role {meta['role']}, not {state.role.value}")
    for mname, mod in state.models.modules().items():
        prefix = f"model/{mname}/"
        mod.load_state_dict({k[len(prefix):]: v for k, v in z.items() if k.startswith(prefix)})
    for oname in ("opt_g", "opt_d", "opt_wm"):
        opt = getattr(state, oname)
        n = len(opt.params)
        opt.load_state({"t": z[f"optim/{oname}/t"], "lr": z[f"optim/{oname}/lr"],
                        "m": [z[f"optim/{oname}/m/{i}"] for i in range(n)],
                        "v": [z[f"optim/{oname}/v/{i}"] for i in range(n)]})
    state.step = int(meta["step"])
    state.data_rng.bit_generator.state = meta["data_rng"]
    state.aug_rng.bit_generator.state = meta["aug_rng"]


LOG_FIELDS = ("step", "phase", "lr", "loss_d", "loss_g", "adv", "fm", "mel", "wm")


def write_log_csv(log: list, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(LOG_FIELDS) + "\n")
        for row in log:
            fh.write(",".join("" if row.get(k) is None else (repr(row[k]) if isinstance(row[k], float) else str(row[k]))
                              for k in LOG_FIELDS) + "\n")


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


# ---------------------------------------------------------------------------
# evaluation


def generate(models: ToyModels, mel: np.ndarray, sample_rate: int) -> AudioClip:
    with ag.no_grad():
        y = models.generator(ag.Tensor(mel[None]))
    return AudioClip(y.data[0], sample_rate)


def detector_score_fn(models: ToyModels, cfg: TrainConfig):
    """Clip -> watermark-detector score (higher means more natural)."""
    def score(clip: AudioClip) -> float:
        x = clip.samples[None]
        with ag.no_grad():
            s, _ = models.detector(_to_detector_rate(ag.Tensor(x), cfg))
        return float(s.data[0])
    return score


def row_key(role, augment: bool) -> tuple:
    role = Role.parse(role)
    return ("toy generator", "collaborative" if role is Role.COLLABORATOR else "standard",
            "stretch+noise" if augment else "none", role.value)


def segments(x: np.ndarray, length: int) -> list[np.ndarray]:
    """Non-overlapping ``length``-sample pieces of ``x`` (the remainder is dropped); ``length <= 0`` keeps ``x``."""
    if length <= 0:
        return [x]
    return [x[j:j + length] for j in range(0, len(x) - length + 1, length)]


def evaluate_state(state: TrainState, conditions=None, rounds: int | None = None, seed: int = 0, jobs: int = 1):
    """EER of the trained watermark detector on test-split segments, natural versus generated."""
    from ..augment import ALL_CONDITIONS
    from ..metrics import evaluate_detector
    cfg, data = state.cfg, state.data
    sr, seg = cfg.sample_rate, cfg.eval_segment
    real = [AudioClip(p, sr) for i in data.test for p in segments(data.clips[i], seg)]
    gen = [AudioClip(p, sr) for i in data.test
           for p in segments(generate(state.models, data.mels[i], sr).samples, seg)]
    return evaluate_detector(detector_score_fn(state.models, cfg), real, gen,
                             conditions or ALL_CONDITIONS, rounds or cfg.eval_rounds, seed,
                             noise_corpus=data.noise, row=row_key(state.role, cfg.augment), jobs=jobs)


EXPERIMENT_GRID = (("collaborator", False), ("observer", False), ("collaborator", True), ("observer", True))


def run_experiment(cfg: TrainConfig, grid=EXPERIMENT_GRID, data: ToyData | None = None, jobs: int = 1,
                   out_dir: str | None = None):
    """Train and evaluate every (role, augmentation) pair; returns ``(report, states)``."""
    data = data or build_data(cfg)
    report, states = None, {}
    for role, augment in grid:
        run_cfg = replace(cfg, augment=augment)
        ckpt = None
        if out_dir:
            ckpt = os.path.join(out_dir, f"{Role.parse(role).value}_{'aug' if augment else 'noaug'}_s{cfg.seed}.npz")
        state = train(run_cfg, role, data=data, checkpoint=ckpt)
        if out_dir:
            write_log_csv(state.log, ckpt[:-4] + "_log.csv")
        rep = evaluate_state(state, seed=cfg.seed, jobs=jobs)
        report = rep if report is None else report.merge(rep)
        states[(Role.parse(role).value, augment)] = state
    return report, states
