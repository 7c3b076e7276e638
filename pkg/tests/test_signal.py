import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collabwm.signal import (LOG_FLOOR, AudioClip, UnsupportedEncodingError, WavFileNotFoundError,
                             WavFormatError, hann, hz_to_mel, istft, load_wav, log_mel, magnitude,
                             mel_filterbank, mel_to_hz, save_wav, stft)


def test_clip_rejects_non_finite():
    with pytest.raises(ValueError):
        AudioClip([0.0, np.nan], 16000)
    with pytest.raises(ValueError):
        AudioClip([0.0], 0)


def test_clip_is_read_only():
    c = AudioClip(np.zeros(4), 8000)
    with pytest.raises(ValueError):
        c.samples[0] = 1.0
    assert c.duration == 4 / 8000


def test_wav_round_trip_within_one_lsb(tmp_path, rng):
    x = rng.uniform(-0.99, 0.99, 5000)
    save_wav(AudioClip(x, 22050), tmp_path / "a.wav")
    y = load_wav(tmp_path / "a.wav")
    assert y.sample_rate == 22050
    assert np.max(np.abs(y.samples - x)) <= 2.0 ** -15


def test_wav_clipping(tmp_path):
    save_wav(AudioClip([2.0, -3.0], 8000), tmp_path / "c.wav")
    y = load_wav(tmp_path / "c.wav").samples
    assert y[0] == pytest.approx(1 - 2 ** -15)
    assert y[1] == -1.0


def test_wav_empty_data(tmp_path):
    save_wav(AudioClip(np.zeros(0), 8000), tmp_path / "e.wav")
    assert len(load_wav(tmp_path / "e.wav")) == 0


def test_wav_stereo_downmix(tmp_path):
    pcm = np.array([[1000, 3000], [-2000, 0]], dtype="<i2")
    with wave.open(str(tmp_path / "s.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(pcm.tobytes())
    y = load_wav(tmp_path / "s.wav").samples
    np.testing.assert_allclose(y, [2000 / 32768, -1000 / 32768])


def test_wav_errors(tmp_path):
    with pytest.raises(WavFileNotFoundError):
        load_wav(tmp_path / "missing.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav at all")
    with pytest.raises(WavFormatError):
        load_wav(tmp_path / "junk.wav")
    # 8-bit PCM header
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 2) + b"\x80\x80"
    (tmp_path / "u8.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedEncodingError):
        load_wav(tmp_path / "u8.wav")


def test_hann_is_periodic():
    w = hann(8)
    assert w[0] == 0.0
    assert w[4] == pytest.approx(1.0)
    np.testing.assert_allclose(w[1:4], w[7:4:-1])


def test_stft_shape_and_zero_clip():
    spec = stft(AudioClip(np.zeros(4096), 16000), 1024, 256)
    assert spec.frames.shape == (1 + (4096 - 1024) // 256, 513)
    assert not np.any(spec.frames)


def test_stft_short_clip_has_no_frames():
    assert stft(AudioClip(np.ones(100), 16000), 256, 64).frames.shape[0] == 0


def test_stft_tone_peak():
    sr = 16000
    x = np.sin(2 * np.pi * 1000 * np.arange(sr) / sr)
    mag = magnitude(stft(AudioClip(x, sr), 1024, 256)).frames
    assert np.argmax(mag.mean(axis=0)) == 64


@pytest.mark.parametrize("frame,hop", [(1024, 256), (512, 256)])
def test_istft_reconstruction_snr(rng, frame, hop):
    x = rng.standard_normal(16000)
    y = istft(stft(AudioClip(x, 16000), frame, hop)).samples
    inner = slice(frame, len(y) - frame)
    err = x[:len(y)][inner] - y[inner]
    assert 10 * np.log10(np.sum(x[inner] ** 2) / np.sum(err ** 2)) >= 60


def test_istft_rejects_unsupported_hop(rng):
    spec = stft(AudioClip(rng.standard_normal(2048), 8000), 512, 200)
    with pytest.raises(ValueError):
        istft(spec)


def test_stft_geometry_errors():
    with pytest.raises(ValueError):
        stft(AudioClip(np.zeros(100), 8000), 64, 16, 32)
    with pytest.raises(ValueError):
        stft(AudioClip(np.zeros(100), 8000), 32, 0)


@given(st.floats(0, 20000))
def test_mel_scale_inverse(f):
    assert mel_to_hz(hz_to_mel(f)) == pytest.approx(f, abs=1e-6)


def test_mel_scale_anchor():
    assert hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2))


def test_mel_filterbank_shape_and_peaks():
    fb = mel_filterbank(40, 1024, 16000)
    assert fb.weights.shape == (40, 513)
    assert np.all(fb.weights.max(axis=1) <= 1.0 + 1e-12)
    assert np.all(fb.weights >= 0)
    peaks = np.argmax(fb.weights, axis=1)
    assert np.all(np.diff(peaks) >= 0)


def test_mel_filterbank_errors():
    with pytest.raises(ValueError):
        mel_filterbank(10, 512, 8000, f_min=100, f_max=5000)
    with pytest.raises(ValueError):
        mel_filterbank(200, 64, 8000)


def test_log_mel_zero_clip_floor():
    fb = mel_filterbank(20, 512, 16000)
    out = log_mel(AudioClip(np.zeros(2048), 16000), fb, 512, 128)
    np.testing.assert_array_equal(out, np.log(LOG_FLOOR))


def test_log_mel_scaling_adds_log_gain(rng):
    fb = mel_filterbank(20, 512, 16000)
    x = rng.standard_normal(4096)
    a = log_mel(AudioClip(x, 16000), fb, 512, 128)
    b = log_mel(AudioClip(3 * x, 16000), fb, 512, 128)
    np.testing.assert_allclose(b - a, np.log(3), atol=1e-9)


def test_log_mel_matches_oracle(rng):
    x = rng.standard_normal(3000)
    fb = mel_filterbank(24, 512, 16000)
    out = log_mel(AudioClip(x, 16000), fb, 400, 100, 512)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400)
    rows = []
    for t in range(1 + (3000 - 400) // 100):
        mag = np.abs(np.fft.rfft(x[t * 100:t * 100 + 400] * w, 512))
        rows.append(np.log(np.maximum(fb.weights @ mag, 1e-9)))
    np.testing.assert_allclose(out, np.array(rows), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([(256, 64), (256, 128)]))
def test_istft_inverts_interior(seed, geom):
    frame, hop = geom
    x = np.random.default_rng(seed).standard_normal(2048)
    y = istft(stft(AudioClip(x, 8000), frame, hop)).samples
    np.testing.assert_allclose(y[frame:len(y) - frame], x[frame:len(y) - frame], atol=1e-9)
