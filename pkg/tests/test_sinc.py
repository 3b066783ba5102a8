"""Sinc filterbank tests. The band-pass property is checked against an
independent FFT oracle rather than the module's own response code."""

import numpy as np
import pytest

from sincasr import nn
from sincasr.sinc import (
    SincLayerConfig,
    SincParams,
    effective_cutoffs,
    frequency_response,
    init_sinc_params,
    materialize_filters,
    sinc,
    sinc_conv_backward,
    sinc_conv_forward,
    window_vector,
)


def _config(**kw):
    base = dict(num_filters=1, kernel_length=129, sample_rate=8000.0)
    base.update(kw)
    return SincLayerConfig(**base)


def _params(f1, f2, dtype=np.float64):
    return SincParams(
        low_hz=np.array(np.atleast_1d(f1), dtype=dtype),
        band_hz=np.array(np.atleast_1d(f2), dtype=dtype) - np.array(np.atleast_1d(f1), dtype=dtype),
    )


# ---------------------------------------------------------------------------
# sinc and windows


def test_sinc_at_zero():
    assert sinc(0.0) == 1.0


def test_sinc_matches_definition():
    x = np.array([-2.0, -0.5, 0.3, 4.0])
    assert np.allclose(sinc(x), np.sin(x) / x)


def test_sinc_is_even():
    x = np.linspace(0.01, 20, 100)
    assert np.allclose(sinc(x), sinc(-x))


def test_window_standard_hamming_endpoints():
    w = window_vector(129, "standard-hamming")
    assert np.isclose(w[0], 0.08)
    assert np.isclose(w[-1], 0.08)
    assert np.isclose(w[64], 1.0)
    assert np.allclose(w, w[::-1])  # symmetric


def test_window_paper_literal_is_asymmetric():
    w = window_vector(129, "paper-literal")
    assert np.isclose(w[0], 0.08)
    m = np.arange(129)
    assert np.allclose(w, 0.54 - 0.46 * np.cos(np.pi * m / 129))
    assert not np.allclose(w, w[::-1])


def test_window_rejects_even_length():
    with pytest.raises(ValueError, match="odd"):
        window_vector(128)


def test_config_rejects_even_kernel():
    with pytest.raises(ValueError, match="odd"):
        _config(kernel_length=128)


def test_config_rejects_unknown_window():
    with pytest.raises(ValueError, match="window_mode"):
        _config(window_mode="hann")


# ---------------------------------------------------------------------------
# parameterization


def test_init_cutoffs_inside_band():
    config = _config(num_filters=200)
    params = init_sinc_params(config, seed_or_rng=7, dtype=np.float64)
    f1, f2 = effective_cutoffs(params, config)
    assert np.all(f1 >= 0) and np.all(f2 <= 4000.0) and np.all(f1 <= f2)


def test_effective_cutoffs_clamp_and_order():
    config = _config(num_filters=3)
    params = SincParams(
        low_hz=np.array([-500.0, 9000.0, 1000.0]),
        band_hz=np.array([200.0, 100.0, -8000.0]),
    )
    f1, f2 = effective_cutoffs(params, config)
    assert np.allclose(f1, [500.0, 4000.0, 1000.0])
    assert np.allclose(f2, [700.0, 4000.0, 4000.0])
    assert np.all(f1 <= f2)


def test_center_tap_value():
    """g[0] = 2 (f2 - f1) / fs times the window's center value."""
    config = _config()
    params = _params(300.0, 1200.0)
    g = materialize_filters(params, config)
    w = window_vector(129, "standard-hamming")
    assert np.isclose(g[0, 64], 2.0 * 900.0 / 8000.0 * w[64])


def test_zero_band_gives_zero_filter():
    config = _config()
    g = materialize_filters(_params(1000.0, 1000.0), config)
    assert np.allclose(g, 0.0)


def test_filters_even_symmetric():
    config = _config(num_filters=4)
    params = init_sinc_params(config, seed_or_rng=3, dtype=np.float64)
    g = materialize_filters(params, config)
    assert np.allclose(g, g[:, ::-1])


# ---------------------------------------------------------------------------
# band-pass behaviour, FFT oracle


def _fft_band_ratio(kernel, sample_rate, f1, f2, margin):
    """Mean stop-band magnitude over mean pass-band magnitude via np.fft."""
    n_fft = 4096
    mag = np.abs(np.fft.rfft(kernel, n=n_fft))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    stop = (freqs < f1 - margin) | (freqs > f2 + margin)
    band = (freqs >= f1) & (freqs <= f2)
    assert band.any()
    if not stop.any():  # margins cover the whole band: vacuously concentrated
        return 0.0
    return mag[stop].mean() / mag[band].mean()


def test_bandpass_fixed_example():
    """f1 = 0.1 fs, f2 = 0.2 fs at L = 129: out-of-band mean is under 15%
    of the in-band mean, with a 0.05 fs transition margin."""
    fs = 8000.0
    config = _config()
    g = materialize_filters(_params(0.1 * fs, 0.2 * fs), config)
    ratio = _fft_band_ratio(g[0], fs, 0.1 * fs, 0.2 * fs, margin=0.05 * fs)
    assert ratio <= 0.15, ratio


def test_bandpass_random_pairs():
    fs = 8000.0
    config = _config()
    rng = np.random.default_rng(11)
    ok = 0
    trials = 100
    for _ in range(trials):
        f1 = rng.uniform(0.0, 0.35 * fs)
        f2 = f1 + rng.uniform(0.05 * fs, 0.5 * fs - f1)
        g = materialize_filters(_params(f1, f2), config)
        if _fft_band_ratio(g[0], fs, f1, f2, margin=0.05 * fs) <= 0.15:
            ok += 1
    assert ok >= 95, f"only {ok}/{trials} filters concentrated in band"


def test_frequency_response_matches_fft_oracle():
    fs = 8000.0
    config = _config()
    g = materialize_filters(_params(600.0, 1800.0), config)
    freqs, mag = frequency_response(g, fs, n_points=129)
    n_fft = 256  # rfft bins then line up with 129 uniform points on [0, fs/2]
    # center the kernel's group delay out by rolling: compare magnitudes only
    oracle = np.abs(np.fft.rfft(g[0], n=n_fft))
    assert np.allclose(mag[0], oracle, atol=1e-9)
    assert freqs[0] == 0.0 and freqs[-1] == fs / 2


# ---------------------------------------------------------------------------
# convolution wrapper and gradients


def test_sinc_conv_output_shape():
    config = _config(num_filters=5)
    params = init_sinc_params(config, seed_or_rng=0, dtype=np.float64)
    x = np.random.default_rng(0).normal(size=(2, 1, 400))
    y = sinc_conv_forward(x, params, config)
    assert y.shape == (2, 5, 400 - 129 + 1)


def test_sinc_conv_rejects_short_waveform():
    config = _config()
    params = init_sinc_params(config, seed_or_rng=0, dtype=np.float64)
    with pytest.raises(ValueError, match="shorter than the"):
        sinc_conv_forward(np.zeros((1, 1, 100)), params, config)


def test_sinc_conv_isolates_tones():
    """A pass-band tone must come through much stronger than a stop-band tone."""
    fs = 8000.0
    config = _config()
    params = _params(800.0, 1600.0)
    t = np.arange(2000) / fs
    inside = np.sin(2 * np.pi * 1200.0 * t)[None, None, :]
    outside = np.sin(2 * np.pi * 3200.0 * t)[None, None, :]
    y_in = sinc_conv_forward(inside, params, config)
    y_out = sinc_conv_forward(outside, params, config)
    assert np.sqrt((y_in**2).mean()) > 10 * np.sqrt((y_out**2).mean())


@pytest.mark.parametrize("seed", range(3))
def test_sinc_conv_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    fs = 8000.0
    config = _config(num_filters=3, kernel_length=31)
    # keep cutoffs well inside (0, fs/2) so |.| and clamp kinks stay far away
    params = SincParams(
        low_hz=rng.uniform(0.05 * fs, 0.3 * fs, size=3),
        band_hz=rng.uniform(0.05 * fs, 0.15 * fs, size=3),
    )
    x = rng.normal(size=(2, 1, 80))
    proj = rng.normal(size=(2, 3, 50))

    def loss():
        return float(np.sum(sinc_conv_forward(x, params, config) * proj))

    gx, glow, gband = sinc_conv_backward(proj, x, params, config)
    report = nn.grad_check(
        loss,
        {"x": x, "low_hz": params.low_hz, "band_hz": params.band_hz},
        {"x": gx, "low_hz": glow, "band_hz": gband},
    )
    assert report.passed, report


def test_sinc_grad_zero_when_clamped():
    """A filter pinned at the Nyquist clamp stops responding to band_hz."""
    fs = 8000.0
    config = _config()
    params = SincParams(low_hz=np.array([1000.0]), band_hz=np.array([6000.0]))
    x = np.random.default_rng(5).normal(size=(1, 1, 200))
    proj = np.ones((1, 1, 72))
    _, _, gband = sinc_conv_backward(proj, x, params, config)
    assert gband[0] == 0.0
