import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collabwm.lfcc import LfccConfig, delta_matrix, deltas, lfcc, linear_filterbank
from collabwm.signal import AudioClip
from helpers import lfcc_oracle


def test_one_second_shape():
    f = lfcc(AudioClip(np.random.default_rng(0).standard_normal(16000), 16000))
    assert f.shape == (99, 60)
    assert f.values.shape[1] == LfccConfig().dim


def test_static_only_dim():
    cfg = LfccConfig(include_deltas=False)
    assert lfcc(AudioClip(np.ones(16000), 16000), cfg).shape == (99, 20)


def test_short_clip_gives_empty_matrix():
    assert lfcc(AudioClip(np.ones(100), 16000)).shape == (0, 60)


def test_deltas_of_constant_features_are_zero():
    feat = np.tile(np.arange(5.0), (30, 1))
    assert np.all(deltas(feat) == 0.0)


def test_stationary_signal_has_zero_deltas_exactly():
    # a signal periodic in the hop repeats every frame exactly
    sr, hop = 16000, 160
    x = np.tile(np.random.default_rng(3).standard_normal(hop), 100)
    v = lfcc(AudioClip(x, sr)).values
    assert np.all(v[:, 20:] == 0.0)


def test_delta_of_ramp():
    feat = np.arange(20.0)[:, None]
    d = deltas(feat)
    np.testing.assert_allclose(d[2:-2], 1.0)


def test_delta_matrix_matches_deltas(rng):
    feat = rng.standard_normal((17, 3))
    np.testing.assert_allclose(delta_matrix(17) @ feat, deltas(feat), atol=1e-12)


def test_matches_straight_line_oracle(rng):
    x = rng.standard_normal(8000)
    np.testing.assert_allclose(lfcc(AudioClip(x, 16000)).values, lfcc_oracle(x, 16000), atol=1e-6)


def test_matches_oracle_at_8khz(rng):
    x = rng.standard_normal(4000)
    np.testing.assert_allclose(lfcc(AudioClip(x, 8000)).values, lfcc_oracle(x, 8000), atol=1e-6)


def test_filterbank_covers_quarter_rate():
    fb = linear_filterbank(20, 1024, 16000, 4000)
    assert fb.shape == (20, 513)
    assert not fb[:, 257:].any()
    assert fb.max() <= 1.0


def test_frame_times_and_csv(tmp_path):
    f = lfcc(AudioClip(np.random.default_rng(1).standard_normal(3200), 16000))
    np.testing.assert_allclose(f.frame_times()[:3], [0.01, 0.02, 0.03])
    f.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == f.shape[0] + 1


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0))
def test_gain_shifts_only_c0(g):
    x = np.random.default_rng(5).standard_normal(4000)
    a = lfcc(AudioClip(x, 16000), LfccConfig(include_deltas=False)).values
    b = lfcc(AudioClip(g * x, 16000), LfccConfig(include_deltas=False)).values
    np.testing.assert_allclose(b[:, 0] - a[:, 0], 2 * np.log(g) * np.sqrt(20), atol=1e-8)
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-8)


def test_config_validation():
    with pytest.raises(ValueError):
        LfccConfig(n_ceps=30, n_filters=20)
    with pytest.raises(ValueError):
        lfcc(AudioClip(np.zeros(100000), 96000))
