import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitradar.sim import IqSignal
from gaitradar.tfa import (
    Spectrogram,
    StftParams,
    denoise,
    n_frames,
    power_to_db,
    stft_spectrogram,
    to_db,
    to_gray,
)

FS = 2560.0


def tone(freq, n=15360, fs=FS, phase=0.0):
    t = np.arange(n) / fs
    return IqSignal(np.exp(2j * np.pi * freq * t + 1j * phase), fs)


def direct_frame(x, n, params):
    """Literal double sum of the STFT definition for one frame."""
    L, K, hop = params.window_length, params.fft_size, params.hop
    m = np.arange(L)
    w = 0.54 - 0.46 * np.cos(2 * np.pi * m / (L - 1))
    seg = w * x[n * hop:n * hop + L]
    k = np.arange(K)
    row = np.abs(np.exp(-2j * np.pi * np.outer(k, m) / K) @ seg) ** 2
    return np.concatenate([row[K // 2:], row[:K // 2]])  # -fs/2 first


def test_matches_direct_definition():
    params = StftParams(hop=37)
    rng = np.random.default_rng(0)
    x = rng.normal(size=3000) + 1j * rng.normal(size=3000)
    spec = stft_spectrogram(IqSignal(x, FS), params)
    for n in (0, 5, spec.n_frames - 1):
        np.testing.assert_allclose(spec.values[n], direct_frame(x, n, params), rtol=1e-9, atol=1e-9)


def test_frame_count_and_axes():
    params = StftParams(hop=8)
    spec = stft_spectrogram(tone(0.0), params)
    assert spec.n_frames == (15360 - 255) // 8 + 1 == n_frames(15360, params)
    assert spec.values.shape == (spec.n_frames, 2048)
    assert spec.freq_axis[0] == -1280.0 and spec.freq_axis[-1] == 1280.0 - 1.25
    assert np.all(np.diff(spec.freq_axis) > 0)
    assert spec.bin_width == 1.25


def test_tone_160hz_lands_in_bin_128_above_centre():
    spec = stft_spectrogram(tone(160.0, n=4000), StftParams(hop=16))
    centre = 1024
    assert np.all(np.argmax(spec.values, axis=1) == centre + 128)


def test_zero_and_constant_signal():
    zero = stft_spectrogram(IqSignal(np.zeros(1000, complex), FS), StftParams(hop=10))
    assert np.all(zero.values == 0)
    dc = stft_spectrogram(IqSignal(np.full(1000, 2 + 1j), FS), StftParams(hop=10))
    assert np.all(dc.freq_axis[np.argmax(dc.values, axis=1)] == 0.0)


def test_short_signal_rejected():
    with pytest.raises(ValueError):
        stft_spectrogram(IqSignal(np.zeros(100, complex), FS))


def test_params_validation():
    with pytest.raises(ValueError):
        StftParams(window_length=300, fft_size=256)
    with pytest.raises(ValueError):
        StftParams(hop=0)
    w = StftParams().coefficients()
    assert np.all(w > 0) and np.allclose(w, w[::-1])


def test_hop_shift_invariance():
    rng = np.random.default_rng(1)
    x = rng.normal(size=4000) + 1j * rng.normal(size=4000)
    params = StftParams(hop=8)
    a = stft_spectrogram(IqSignal(x, FS), params).values
    b = stft_spectrogram(IqSignal(x[8:], FS), params).values
    np.testing.assert_allclose(b[:-1], a[1:b.shape[0]], rtol=1e-9, atol=1e-9 * a.max())


@settings(max_examples=20, deadline=None)
@given(st.floats(-1000, 1000), st.floats(0, 2 * np.pi))
def test_tone_localized_within_one_bin(freq, phase):
    spec = stft_spectrogram(tone(freq, n=2000, phase=phase), StftParams(hop=64))
    peak = spec.freq_axis[np.argmax(spec.values, axis=1)]
    assert np.all(np.abs(peak - freq) <= spec.bin_width)


def test_runtime_hop8():
    sig = tone(300.0)
    t0 = time.perf_counter()
    stft_spectrogram(sig, StftParams(hop=8))
    assert time.perf_counter() - t0 < 5.0


def noise_spec(seed=0, n=15360):
    rng = np.random.default_rng(seed)
    x = (rng.normal(size=n) + 1j * rng.normal(size=n)) / np.sqrt(2)
    return stft_spectrogram(IqSignal(x, FS), StftParams(hop=8))


def test_pure_noise_mostly_suppressed():
    spec = noise_spec()
    den = denoise(spec, margin_db=6)
    suppressed = np.mean(~den.signal_mask())
    assert suppressed >= 0.95


def test_tone_ridge_survives():
    rng = np.random.default_rng(2)
    n = 15360
    x = np.exp(2j * np.pi * 200.0 * np.arange(n) / FS) + 0.01 * (rng.normal(size=n) + 1j * rng.normal(size=n))
    spec = stft_spectrogram(IqSignal(x, FS), StftParams(hop=8))
    den = denoise(spec)
    col = np.argmin(np.abs(spec.freq_axis - 200.0))
    np.testing.assert_array_equal(den.values[:, col], spec.values[:, col])
    assert np.all(den.signal_mask()[:, col])


def test_margin_zero_on_constant_matrix_is_identity():
    spec = noise_spec()
    flat = Spectrogram(np.full((50, 2048), 3.0), spec.frame_times[:50], spec.freq_axis, spec.params, FS)
    np.testing.assert_array_equal(denoise(flat, margin_db=0).values, flat.values)


def test_denoise_idempotent_and_scale_invariant():
    spec = noise_spec(3)
    once = denoise(spec)
    twice = denoise(once)
    np.testing.assert_array_equal(once.values, twice.values)
    scaled = denoise(Spectrogram(spec.values * 1e6, spec.frame_times, spec.freq_axis, spec.params, FS))
    np.testing.assert_array_equal(scaled.signal_mask(), once.signal_mask())


def test_denoise_rejects_negative_margin():
    with pytest.raises(ValueError):
        denoise(noise_spec(), margin_db=-1)


def test_db_and_gray():
    p = np.array([[1.0, 10 ** -2.5, 1e-6, 0.0]])
    db = power_to_db(p)
    np.testing.assert_allclose(db[0, :3], [0.0, -25.0, -60.0])
    g = to_gray(db, -50, 0).pixels
    np.testing.assert_allclose(g, [[1.0, 0.5, 0.0, 0.0]])
    assert to_gray(np.array([[-50.0]])).pixels[0, 0] == 0.0
    with pytest.raises(ValueError):
        to_gray(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        to_gray(db, 0, -50)


def test_to_db_spectrogram():
    spec = noise_spec(4)
    db = to_db(spec)
    assert db.unit == "db" and db.values.max() == 0.0
