import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collabwm.resample import N_TAPS, output_length, resample, resample_array, resample_matrix
from collabwm.signal import AudioClip
from helpers import tone


def test_identity_for_equal_rates(rng):
    x = rng.standard_normal(500)
    np.testing.assert_array_equal(resample_array(x, 16000, 16000), x)


def test_output_length():
    assert output_length(22050, 22050, 16000) == 16000
    assert len(resample(AudioClip(np.zeros(441), 44100), 16000)) == 160


def test_dc_preserved_including_edges():
    y = resample(AudioClip(np.full(22050, 0.5), 22050), 16000).samples
    np.testing.assert_allclose(y, 0.5, atol=1e-6)


def test_tone_peak_and_amplitude():
    y = resample(AudioClip(tone(1000, 22050, 1.0), 22050), 16000).samples
    spec = np.abs(np.fft.rfft(y * np.hanning(len(y))))
    freqs = np.fft.rfftfreq(len(y), 1 / 16000)
    k = int(np.argmax(spec))
    assert abs(freqs[k] - 1000) <= freqs[1]
    inner = y[200:-200]
    amp = np.sqrt(2) * np.sqrt(np.mean(inner ** 2))
    assert abs(20 * np.log10(amp / 0.5)) <= 1.0


def test_matrix_rows_have_at_most_six_taps():
    m = resample_matrix(1000, 22050, 16000)
    assert np.diff(m.indptr).max() <= N_TAPS
    np.testing.assert_allclose(np.asarray(m.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_downsampling_attenuates_above_new_nyquist():
    # 7 kHz at 22.05 kHz lies above the 3.6 kHz cutoff for an 8 kHz target
    y = resample(AudioClip(tone(7000, 22050, 1.0), 22050), 8000).samples
    assert np.sqrt(np.mean(y[100:-100] ** 2)) < 0.5 * 0.5 / np.sqrt(2)


@settings(max_examples=30, deadline=None)
@given(st.integers(50, 2000), st.sampled_from([8000, 16000, 22050, 44100]),
       st.sampled_from([8000, 16000, 22050, 44100]))
def test_linearity(n, src, tgt):
    r = np.random.default_rng(n)
    a, b = r.standard_normal(n), r.standard_normal(n)
    lhs = resample_array(2 * a - b, src, tgt)
    rhs = 2 * resample_array(a, src, tgt) - resample_array(b, src, tgt)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    assert len(lhs) == output_length(n, src, tgt)


def test_rejects_bad_rate():
    with pytest.raises(ValueError):
        resample(AudioClip(np.zeros(10), 8000), 0)
