"""Spectrogram, adaptive noise suppression and dB / gray-scale conversion."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .sim import IqSignal


@dataclass(frozen=True)
class StftParams:
    window_length: int = 255
    fft_size: int = 2048
    hop: int = 1
    window: str = "hamming"

    def __post_init__(self):
        if not 0 < self.window_length <= self.fft_size:
            raise ValueError("need 0 < window_length <= fft_size")
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        w = self.coefficients()
        if np.any(w <= 0) or not np.allclose(w, w[::-1]):
            raise ValueError("window must be strictly positive and symmetric")

    def coefficients(self) -> np.ndarray:
        return get_window(self.window, self.window_length, fftbins=False)


@dataclass(frozen=True)
class Spectrogram:
    """Power (or dB) matrix of shape ``(frames, fft_size)``.

    Columns are frequency-centered: column ``k`` holds ``freq_axis[k]``, which
    runs from ``-fs/2`` upwards, so negative Doppler sits in the low columns.
    """

    values: np.ndarray
    frame_times: np.ndarray
    freq_axis: np.ndarray
    params: StftParams
    fs: float
    unit: str = "power"
    # set by denoise(): per-bin floor and detection threshold (linear power)
    noise_floor: Optional[np.ndarray] = field(default=None, repr=False)
    threshold: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def bin_width(self) -> float:
        return self.fs / self.params.fft_size

    @property
    def frame_rate(self) -> float:
        return self.fs / self.params.hop

    @property
    def denoised(self) -> bool:
        return self.threshold is not None

    def signal_mask(self) -> np.ndarray:
        """Cells above the adaptive threshold (everything if not denoised)."""
        if self.threshold is None:
            return self.values > 0
        return self.values > self.threshold[None, :]


def n_frames(n_samples: int, params: StftParams) -> int:
    return (n_samples - params.window_length) // params.hop + 1


def stft_spectrogram(signal: IqSignal, params: StftParams = StftParams(), chunk: int = 2048) -> Spectrogram:
    """Squared-magnitude STFT with a zero-padded FFT of ``params.fft_size``.

    ``S[n, k] = |sum_m w[m] s[n*hop + m] exp(-2j*pi*m*k/K)|**2`` with the
    frequency axis shifted so that it spans ``[-fs/2, fs/2)``.
    """
    x = np.asarray(signal.samples, dtype=np.complex128)
    L, K, hop = params.window_length, params.fft_size, params.hop
    if x.size < L:
        raise ValueError(f"signal has {x.size} samples, shorter than the window ({L})")
    w = params.coefficients()
    frames = sliding_window_view(x, L)[::hop]
    n = frames.shape[0]
    out = np.empty((n, K), dtype=np.float64)
    for start in range(0, n, chunk):
        block = np.fft.fft(frames[start:start + chunk] * w, n=K, axis=1)
        out[start:start + chunk] = np.fft.fftshift(block.real ** 2 + block.imag ** 2, axes=1)
    frame_times = (np.arange(n) * hop + (L - 1) / 2) / signal.fs
    freq_axis = np.fft.fftshift(np.fft.fftfreq(K, d=1.0 / signal.fs))
    return Spectrogram(out, frame_times, freq_axis, params, signal.fs)


def denoise(spec: Spectrogram, margin_db: float = 8.0, percentile: float = 20.0,
            floor_cap_db: float = 10.0) -> Spectrogram:
    """Adaptive per-frequency-bin noise suppression.

    Each bin's floor is its ``percentile``-th power over time, capped at
    ``floor_cap_db`` above the median floor so that persistently occupied bins
    (the torso ridge) do not raise their own threshold. The noise mean is
    estimated from the floor assuming exponentially distributed noise power;
    cells below ``noise mean * 10**(margin_db/10)`` are set to the floor.
    """
    if margin_db < 0:
        raise ValueError("margin_db must be >= 0")
    if spec.unit != "power":
        raise ValueError("denoise expects a linear power spectrogram")
    S = spec.values
    q = np.percentile(S, percentile, axis=0, method="lower")
    floor = np.minimum(q, np.median(q) * 10 ** (floor_cap_db / 10))
    scale = 1.0 / np.log(100.0 / (100.0 - percentile))
    thr = floor * scale * 10 ** (margin_db / 10)
    out = np.where(S < thr[None, :], floor[None, :], S)
    return replace(spec, values=out, noise_floor=floor, threshold=thr)


def to_db(spec: Spectrogram) -> Spectrogram:
    """10*log10(power / max power); zero-power cells become -inf."""
    if spec.unit == "db":
        return spec
    vmax = spec.values.max()
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(spec.values / vmax) if vmax > 0 else np.full_like(spec.values, -np.inf)
    return replace(spec, values=db, unit="db")


@dataclass(frozen=True)
class GrayImage:
    pixels: np.ndarray  # (rows, cols) in [0, 1]; rows = frequency, cols = time
    db_floor: float
    db_ceil: float

    @property
    def shape(self):
        return self.pixels.shape


def power_to_db(power: np.ndarray, reference: Optional[float] = None) -> np.ndarray:
    power = np.asarray(power, dtype=float)
    ref = power.max() if reference is None else reference
    if ref <= 0:
        return np.full_like(power, -np.inf)
    with np.errstate(divide="ignore"):
        return 10 * np.log10(power / ref)


def to_gray(region_db: np.ndarray, db_floor: float = -50.0, db_ceil: float = 0.0) -> GrayImage:
    """Linear map of a dB region onto [0, 1], clamped."""
    region_db = np.asarray(region_db, dtype=float)
    if region_db.size == 0:
        raise ValueError("empty region")
    if not db_floor < db_ceil:
        raise ValueError("db_floor must be below db_ceil")
    g = (region_db - db_floor) / (db_ceil - db_floor)
    g = np.clip(np.nan_to_num(g, nan=0.0, neginf=0.0, posinf=1.0), 0.0, 1.0)
    return GrayImage(g, db_floor, db_ceil)
