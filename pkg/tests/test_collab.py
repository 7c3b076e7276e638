import numpy as np
import pytest

from collabwm import autograd as ag
from collabwm.collab.corpus import synth_toy_corpus, synth_utterance
from collabwm.collab.losses import (LossWeights, Role, generator_total_loss, loss_d, loss_fm, loss_g_adv,
                                    loss_mel, loss_wm)
from collabwm.collab.models import (LfccDetector, LfccFrontEnd, LogMelFrontEnd, RawDetector, ToyGenerator,
                                    has_batch_norm)
from collabwm.collab.train import (AdamW, TrainConfig, build_data, init_state, load_checkpoint, read_checkpoint,
                                   sample_batch, save_checkpoint, train, train_step, write_log_csv)
from collabwm.lfcc import lfcc
from collabwm.signal import AudioClip, log_mel, mel_filterbank
from helpers import numeric_grad, rel_error

SMALL = TrainConfig(segment=1024, batch_size=1, n_utterances=20, utterance_s=0.5, iterations=4)


@pytest.fixture(scope="module")
def small_data():
    return build_data(SMALL)


def _params(state):
    return {name: {k: v.copy() for k, v in mod.state_dict().items()} for name, mod in state.models.modules().items()}


def _same(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


# losses -------------------------------------------------------------------


@pytest.mark.parametrize("fn", [loss_d, loss_wm])
def test_lsgan_detector_losses(fn):
    assert float(fn([1.0], [0.0]).data) == 0.0
    assert float(fn([0.0], [1.0]).data) == 2.0
    assert float(fn([0.5], [0.5]).data) == 0.5
    with pytest.raises(ValueError):
        fn([1.0, 1.0], [0.0])


def test_adversarial_loss():
    assert float(loss_g_adv([1.0]).data) == 0.0
    assert float(loss_g_adv([0.0]).data) == 1.0
    assert float(loss_g_adv([0.5, 1.5]).data) == 0.25


def test_feature_matching(rng):
    acts = [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 5))]
    assert float(loss_fm(acts, acts).data) == 0.0
    assert float(loss_fm(acts, [a + 1 for a in acts]).data) == pytest.approx(2.0)
    other = [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 5))]
    oracle = sum(np.mean((a - b) ** 2) for a, b in zip(acts, other))
    assert float(loss_fm(acts, other).data) == pytest.approx(oracle, abs=1e-9)
    with pytest.raises(ValueError):
        loss_fm(acts, acts[:1])


def test_mel_loss(rng):
    front = LogMelFrontEnd(8000)
    x = rng.standard_normal((1, 2048))
    assert float(loss_mel(x, x, front).data) == 0.0
    assert float(loss_mel(x, 2 * x, front).data) == pytest.approx(np.log(2), abs=1e-9)
    y = rng.standard_normal((1, 2048))
    fb = mel_filterbank(32, 256, 8000)
    a = log_mel(AudioClip(x[0], 8000), fb, 256, 64)
    b = log_mel(AudioClip(y[0], 8000), fb, 256, 64)
    assert float(loss_mel(x, y, front).data) == pytest.approx(np.mean(np.abs(a - b)), abs=1e-6)


def test_generator_total_loss_roles():
    w = LossWeights(adv=1, fm=2, mel=45, wm=3)
    assert float(generator_total_loss("observer", 1.0, 1.0, 1.0, 10.0, w).data) == 48.0
    assert float(generator_total_loss("collaborator", 1.0, 1.0, 1.0, 10.0, w).data) == 78.0
    with pytest.raises(ValueError):
        generator_total_loss("discriminator", 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        generator_total_loss("spectator", 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        generator_total_loss("collaborator", 1.0, 1.0, 1.0, None)
    assert Role.parse("Observer") is Role.OBSERVER


# models -------------------------------------------------------------------


def test_generator_shape_range_and_size(rng):
    g = ToyGenerator(20, seed=0)
    y = g(ag.Tensor(5 * rng.standard_normal((2, 20, 16))))
    assert y.shape == (2, 16 * 16)
    assert np.all(np.abs(y.data) < 1)
    assert 5_000 <= g.n_parameters() <= 20_000


def test_generator_stage_limits():
    with pytest.raises(ValueError):
        ToyGenerator(channels=(4, 4))
    with pytest.raises(ValueError):
        ToyGenerator(channels=(4,) * 6)


def test_detectors_score_per_item_and_have_no_norm(rng):
    x = ag.Tensor(0.1 * rng.standard_normal((3, 2048)))
    for det in (RawDetector(seed=1, input_length=2048), LfccDetector(8000, seed=1)):
        s, acts = det(x)
        assert s.shape == (3,)
        assert len(acts) >= 2
        assert not has_batch_norm(det)
        s2, _ = det(x)
        assert np.array_equal(s.data, s2.data)


def test_has_batch_norm_detects_norm_layers():
    det = RawDetector()
    det.batch_norm = object()
    assert has_batch_norm(det)


def test_raw_detector_fixed_length(rng):
    det = RawDetector(input_length=1000)
    assert det.fit_length(ag.Tensor(np.ones((1, 600)))).shape == (1, 1000)
    assert det.fit_length(ag.Tensor(np.ones((1, 1600)))).shape == (1, 1000)


def test_lfcc_front_end_matches_lfcc(rng):
    x = rng.standard_normal(4000)
    front = LfccFrontEnd(8000)
    got = front(ag.Tensor(x[None])).data[0].T
    np.testing.assert_allclose(got, lfcc(AudioClip(x, 8000)).values, atol=1e-6)


def test_state_dict_round_trip():
    a, b = ToyGenerator(seed=1), ToyGenerator(seed=2)
    b.load_state_dict(a.state_dict())
    assert _same(a.state_dict(), b.state_dict())
    with pytest.raises(ValueError):
        b.load_state_dict({})


# optimiser ----------------------------------------------------------------


def test_adamw_first_step_by_hand():
    p = ag.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, -0.1])
    opt = AdamW([p], lr=0.1, betas=(0.8, 0.99), weight_decay=0.01)
    opt.step()
    decayed = np.array([1.0, -2.0]) * (1 - 0.1 * 0.01)
    # the first bias-corrected step has magnitude lr in every coordinate
    expect = decayed - 0.1 * np.sign([0.5, -0.1]) * (np.abs([0.5, -0.1]) / (np.abs([0.5, -0.1]) + 1e-8))
    np.testing.assert_allclose(p.data, expect, atol=1e-12)


def test_adamw_zero_lr_is_noop():
    p = ag.Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([3.0])
    AdamW([p], lr=0.0).step()
    assert p.data[0] == 1.0


# corpus -------------------------------------------------------------------


def test_corpus_deterministic_and_bounded():
    a, ma = synth_toy_corpus(12, 0.5, seed=4)
    b, mb = synth_toy_corpus(12, 0.5, seed=4)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert ma == mb
    for c in a:
        r = np.sqrt(np.mean(c.samples ** 2))
        assert 0.05 <= r <= 0.5
        assert c.sample_rate == 8000


def test_corpus_peak_at_harmonic():
    rng = np.random.default_rng(9)
    for _ in range(10):
        u = synth_utterance(1.0, 8000, rng)
        spec = np.abs(np.fft.rfft(u.clip.samples * np.hanning(8000)))
        peak = np.argmax(spec) * 8000 / 8000
        h = peak / u.f0
        assert abs(h - round(h)) * u.f0 <= 3.0 and 1 <= round(h) <= u.n_harmonics


# training -----------------------------------------------------------------


def test_sample_batch_shapes(small_data):
    mel, x = sample_batch(small_data, SMALL, np.random.default_rng(0))
    assert mel.shape == (1, 20, 1024 // 16)
    assert x.shape == (1, 1024)


def test_zero_learning_rate_leaves_parameters(small_data):
    from dataclasses import replace
    state = init_state(replace(SMALL, lr=0.0, weight_decay=0.0), "collaborator", data=small_data)
    before = _params(state)
    train_step(state)
    train_step(state)
    after = _params(state)
    assert all(_same(before[k], after[k]) for k in before)


def test_alternation_contract(small_data):
    state = init_state(SMALL, "collaborator", data=small_data)
    p0 = _params(state)
    assert train_step(state)["phase"] == "d"
    p1 = _params(state)
    assert _same(p0["generator"], p1["generator"]) and _same(p0["detector"], p1["detector"])
    assert not _same(p0["discriminator"], p1["discriminator"])
    assert train_step(state)["phase"] == "g"
    p2 = _params(state)
    assert _same(p1["discriminator"], p2["discriminator"])
    assert not _same(p1["generator"], p2["generator"]) and not _same(p1["detector"], p2["detector"])


@pytest.mark.parametrize("augment", [False, True])
def test_observer_equals_zero_weight_collaborator(small_data, augment):
    from dataclasses import replace
    cfg = replace(SMALL, augment=augment)
    obs = init_state(cfg, "observer", data=small_data)
    col = init_state(replace(cfg, weights=LossWeights(wm=0.0)), "collaborator", data=small_data)
    for _ in range(2):
        train_step(obs)
        train_step(col)
    a, b = _params(obs), _params(col)
    assert all(_same(a[k], b[k]) for k in a)


def test_collaborator_gradient_reduces_to_wm_term(rng):
    """With the other weights at zero, G's gradient is the watermark-loss gradient."""
    from collabwm.collab.train import wm_input
    g = ToyGenerator(4, channels=(6, 4, 3), kernel=3, seed=0)
    wm = LfccDetector(8000, channels=4, seed=1)
    mel = rng.standard_normal((1, 4, 256))
    x_real = 0.1 * rng.standard_normal((1, 1024))

    def wm_loss(x_gen):
        return loss_wm(wm(ag.Tensor(x_real))[0], wm(x_gen)[0])

    g.zero_grad()
    x_gen = g(ag.Tensor(mel))
    w = LossWeights(adv=0, fm=0, mel=0, wm=1.0)
    total = generator_total_loss("collaborator", 0.0, 0.0, 0.0, wm_loss(wm_input(x_gen, Role.COLLABORATOR, 1.0)), w)
    total.backward()
    got = [p.grad.copy() for p in g.parameters()]
    g.zero_grad()
    wm_loss(g(ag.Tensor(mel))).backward()
    for a, b in zip(got, [p.grad for p in g.parameters()]):
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_total_loss_gradient_finite_differences(rng):
    g = ToyGenerator(2, channels=(6, 4, 3), kernel=3, seed=3)
    assert 150 <= g.n_parameters() <= 250
    d = RawDetector(channels=(2, 2), kernels=(5, 5), strides=(2, 2), seed=4)
    wm = RawDetector(channels=(2,), kernels=(5,), strides=(2,), seed=5)
    front = LogMelFrontEnd(8000, n_mels=8, frame_len=64, hop=32, fft_size=64)
    mel = rng.standard_normal((1, 2, 32))
    x_real = 0.1 * rng.standard_normal((1, 128))

    def total_loss():
        x_gen = g(ag.Tensor(mel))
        d_gen, gen_acts = d(x_gen)
        _, real_acts = d(ag.Tensor(x_real))
        wm_real, _ = wm(ag.Tensor(x_real))
        wm_gen, _ = wm(x_gen)
        return generator_total_loss("collaborator", loss_g_adv(d_gen), loss_fm(real_acts, gen_acts),
                                    loss_mel(ag.Tensor(x_real), x_gen, front), loss_wm(wm_real, wm_gen))

    g.zero_grad()
    total_loss().backward()
    worst = 0.0
    for p in g.parameters():
        def f(v, p=p):
            old = p.data
            p.data = v
            val = float(total_loss().data)
            p.data = old
            return val
        worst = max(worst, rel_error(p.grad, numeric_grad(f, p.data.copy(), eps=1e-5)))
    assert worst < 1e-4


def test_nonfinite_loss_aborts(small_data):
    state = init_state(SMALL, "collaborator", data=small_data)
    state.models.discriminator.head.bias.data[:] = np.nan
    with pytest.raises(FloatingPointError, match="step 1"):
        train_step(state)


def test_determinism_over_100_steps(small_data):
    a = init_state(SMALL, "collaborator", data=small_data)
    b = init_state(SMALL, "collaborator", data=small_data)
    for _ in range(100):
        la, lb = train_step(a), train_step(b)
        assert la == lb
    pa, pb = _params(a), _params(b)
    assert all(_same(pa[k], pb[k]) for k in pa)


def test_checkpoint_resume_matches_uninterrupted(tmp_path, small_data):
    from dataclasses import replace
    cfg = replace(SMALL, iterations=6, augment=True)
    full = train(cfg, "collaborator", data=small_data)
    ckpt = str(tmp_path / "c.npz")
    train(replace(cfg, iterations=3), "collaborator", data=small_data, checkpoint=ckpt)
    resumed = train(cfg, "collaborator", data=small_data, checkpoint=ckpt, resume=True)
    assert resumed.step == 6
    pa, pb = _params(full), _params(resumed)
    assert all(_same(pa[k], pb[k]) for k in pa)


def test_zero_iteration_checkpoint(tmp_path, small_data):
    from dataclasses import replace
    ckpt = str(tmp_path / "z.npz")
    state = train(replace(SMALL, iterations=0), "observer", data=small_data, checkpoint=ckpt)
    z = read_checkpoint(ckpt)
    assert int(z["__version__"]) == 1
    fresh = init_state(SMALL, "observer", data=small_data)
    load_checkpoint(fresh, ckpt)
    assert fresh.step == 0
    pa, pb = _params(state), _params(fresh)
    assert all(_same(pa[k], pb[k]) for k in pa)


def test_checkpoint_version_guard(tmp_path, small_data):
    state = init_state(SMALL, "observer", data=small_data)
    ckpt = str(tmp_path / "v.npz")
    save_checkpoint(state, ckpt)
    z = dict(np.load(ckpt))
    z["__version__"] = np.array(99)
    np.savez(ckpt, **z)
    with pytest.raises(ValueError, match="version"):
        read_checkpoint(ckpt)


def test_log_csv(tmp_path, small_data):
    from dataclasses import replace
    state = train(replace(SMALL, iterations=3), "observer", data=small_data)
    write_log_csv(state.log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0].startswith("step,phase,lr")
    assert len(lines) == 4


def test_config_json_round_trip():
    cfg = TrainConfig(seed=3, weights=LossWeights(wm=2.0))
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_json({"bogus": 1})
    with pytest.raises(ValueError):
        TrainConfig.from_json({"lr_decay": 0.0})
