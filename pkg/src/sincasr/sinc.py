"""Learnable sinc filterbank: band-pass FIR kernels parametrized by two
cutoff frequencies per filter.

Each kernel is the difference of two windowed ideal low-pass filters,

    g[n] = (2*f2/fs) * sinc(2*pi*f2*n/fs) - (2*f1/fs) * sinc(2*pi*f1*n/fs),

sampled on symmetric taps n in [-(L-1)/2, (L-1)/2] and multiplied by a
Hamming window, so only 2 scalars per filter are learned. The raw parameters
are unconstrained; effective cutoffs come from

    f1 = min(|low_hz|, fs/2),   f2 = min(f1 + |band_hz|, fs/2),

which keeps 0 <= f1 <= f2 <= fs/2 for any parameter values. The amplitude
normalization by fs gives roughly unit pass-band gain.

Two window shapes are supported: "standard-hamming" is the symmetric window
0.54 - 0.46*cos(2*pi*m/(L-1)); "paper-literal" is the half-cosine variant
0.54 - 0.46*cos(pi*m/L), kept as an alternative mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import nn

WINDOW_MODES = ("standard-hamming", "paper-literal")


@dataclass
class SincLayerConfig:
    num_filters: int = 64
    kernel_length: int = 129
    sample_rate: float = 8000.0
    window_mode: str = "standard-hamming"

    def __post_init__(self):
        if self.num_filters < 1:
            raise ValueError(f"num_filters must be positive, got {self.num_filters}")
        if self.kernel_length < 3 or self.kernel_length % 2 == 0:
            raise ValueError(f"kernel_length must be odd and >= 3, got {self.kernel_length}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.window_mode not in WINDOW_MODES:
            raise ValueError(f"unknown window_mode {self.window_mode!r}, expected one of {WINDOW_MODES}")


@dataclass
class SincParams:
    """Raw learnable parameters, one pair per filter."""

    low_hz: np.ndarray
    band_hz: np.ndarray


def init_sinc_params(config: SincLayerConfig, seed_or_rng, dtype=np.float32) -> SincParams:
    """Cutoffs drawn uniformly over the full band [0, fs/2]."""
    rng = seed_or_rng
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    nyquist = config.sample_rate / 2.0
    a = rng.uniform(0.0, nyquist, size=config.num_filters)
    b = rng.uniform(0.0, nyquist, size=config.num_filters)
    f1 = np.minimum(a, b)
    f2 = np.maximum(a, b)
    return SincParams(low_hz=f1.astype(dtype), band_hz=(f2 - f1).astype(dtype))


def sinc(x):
    """Unnormalized sinc, sin(x)/x, with the removable singularity filled in."""
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    out = np.ones_like(arr)
    mask = arr != 0
    out[mask] = np.sin(arr[mask]) / arr[mask]
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def window_vector(length: int, mode: str = "standard-hamming") -> np.ndarray:
    if length % 2 == 0:
        raise ValueError(f"window length must be odd, got {length}")
    m = np.arange(length, dtype=np.float64)
    if mode == "standard-hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * m / (length - 1))
    if mode == "paper-literal":
        return 0.54 - 0.46 * np.cos(np.pi * m / length)
    raise ValueError(f"unknown window_mode {mode!r}, expected one of {WINDOW_MODES}")


def effective_cutoffs(params: SincParams, config: SincLayerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Map raw parameters to ordered cutoffs clamped inside [0, fs/2]."""
    nyquist = config.sample_rate / 2.0
    f1 = np.minimum(np.abs(params.low_hz), nyquist)
    f2 = np.minimum(f1 + np.abs(params.band_hz), nyquist)
    return f1, f2


def materialize_filters(params: SincParams, config: SincLayerConfig) -> np.ndarray:
    """Realize the (num_filters, kernel_length) windowed band-pass kernels."""
    f1, f2 = effective_cutoffs(params, config)
    half = (config.kernel_length - 1) // 2
    taps = np.arange(-half, half + 1, dtype=f1.dtype)
    omega = 2.0 * np.pi * taps / config.sample_rate
    scale = 2.0 / config.sample_rate
    low_pass_1 = scale * f1[:, None] * sinc(f1[:, None] * omega[None, :])
    low_pass_2 = scale * f2[:, None] * sinc(f2[:, None] * omega[None, :])
    window = window_vector(config.kernel_length, config.window_mode).astype(f1.dtype)
    return (low_pass_2 - low_pass_1) * window[None, :]


def _cutoff_jacobians(params: SincParams, config: SincLayerConfig):
    """d(filter)/d(f1), d(filter)/d(f2), and the chain factors back to the raw
    parameters through the |.| and clamp reparameterization."""
    nyquist = config.sample_rate / 2.0
    f1, f2 = effective_cutoffs(params, config)
    half = (config.kernel_length - 1) // 2
    taps = np.arange(-half, half + 1, dtype=f1.dtype)
    omega = 2.0 * np.pi * taps / config.sample_rate
    window = window_vector(config.kernel_length, config.window_mode).astype(f1.dtype)
    scale = 2.0 / config.sample_rate
    # d/df [(2f/fs) sinc(f w)] = (2/fs) cos(f w), including the w = 0 tap.
    dg_df2 = scale * np.cos(f2[:, None] * omega[None, :]) * window[None, :]
    dg_df1 = -scale * np.cos(f1[:, None] * omega[None, :]) * window[None, :]
    d_f1_d_low = np.sign(params.low_hz) * (np.abs(params.low_hz) < nyquist)
    d_f2_d_band = np.sign(params.band_hz) * (f1 + np.abs(params.band_hz) < nyquist)
    d_f2_d_low = d_f1_d_low * (f1 + np.abs(params.band_hz) < nyquist)
    return dg_df1, dg_df2, d_f1_d_low, d_f2_d_low, d_f2_d_band


def sinc_conv_forward(waveforms: np.ndarray, params: SincParams, config: SincLayerConfig) -> np.ndarray:
    """waveforms: (B, 1, N) -> (B, num_filters, N - kernel_length + 1)."""
    if waveforms.ndim != 3 or waveforms.shape[1] != 1:
        raise ValueError(f"expected (B, 1, N) waveforms, got {waveforms.shape}")
    if waveforms.shape[2] < config.kernel_length:
        raise ValueError(
            f"waveform length {waveforms.shape[2]} is shorter than the "
            f"kernel length {config.kernel_length}"
        )
    filters = materialize_filters(params, config)
    return nn.conv1d(waveforms, filters[:, None, :].astype(waveforms.dtype))


def sinc_conv_backward(
    gy: np.ndarray, waveforms: np.ndarray, params: SincParams, config: SincLayerConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_waveforms, grad_low_hz, grad_band_hz)."""
    filters = materialize_filters(params, config)
    gx, gfilters = nn.conv1d_backward(gy, waveforms, filters[:, None, :].astype(waveforms.dtype))
    gfilters = gfilters[:, 0, :]
    dg_df1, dg_df2, d_f1_d_low, d_f2_d_low, d_f2_d_band = _cutoff_jacobians(params, config)
    g_f1 = (gfilters * dg_df1).sum(axis=1)
    g_f2 = (gfilters * dg_df2).sum(axis=1)
    grad_low = g_f1 * d_f1_d_low + g_f2 * d_f2_d_low
    grad_band = g_f2 * d_f2_d_band
    return gx, grad_low.astype(params.low_hz.dtype), grad_band.astype(params.band_hz.dtype)


def frequency_response(filters: np.ndarray, sample_rate: float, n_points: int = 256):
    """Magnitude response |H(f)| at n_points uniform frequencies in [0, fs/2].

    Evaluated as a plain discrete-time Fourier transform over the symmetric
    taps, so the phase of the centered kernel drops out of the magnitude.
    """
    length = filters.shape[1]
    half = (length - 1) // 2
    taps = np.arange(-half, half + 1)
    freqs = np.linspace(0.0, sample_rate / 2.0, n_points)
    phase = np.exp(-2j * np.pi * np.outer(freqs, taps) / sample_rate)
    return freqs, np.abs(filters.astype(np.float64) @ phase.T)


def write_filter_csv(params: SincParams, config: SincLayerConfig, path, n_points: int = 256) -> None:
    """One row per filter: index, effective cutoffs, then |H| samples."""
    f1, f2 = effective_cutoffs(params, config)
    filters = materialize_filters(params, config)
    _, magnitude = frequency_response(filters, config.sample_rate, n_points)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "f1_hz", "f2_hz"] + [f"h_{i:03d}" for i in range(n_points)])
        for i in range(config.num_filters):
            writer.writerow(
                [i, f"{float(f1[i]):.6f}", f"{float(f2[i]):.6f}"]
                + [f"{v:.8e}" for v in magnitude[i]]
            )
