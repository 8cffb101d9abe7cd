"""Envelope, step rate, maximal and torso Doppler from a denoised spectrogram."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.signal import find_peaks

from .sim import Direction
from .tfa import Spectrogram


class GaitError(ValueError):
    """Base class for measurements that cannot be analysed."""


class NoPeriodicityError(GaitError):
    pass


class InsufficientStepsError(GaitError):
    pass


@dataclass(frozen=True)
class Envelope:
    """Per-frame extreme Doppler frequency on the motion side (signed, Hz)."""

    values: np.ndarray
    frame_rate: float
    direction: Direction
    median_width: int
    empty_frames: np.ndarray = field(repr=False)  # frames without signal content

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def flagged(self) -> bool:
        return bool(self.empty_frames.any())

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class GaitStats:
    """Gait parameters; Doppler values are magnitudes in Hz.

    ``step_peaks`` pairs each detected step's frame index with the envelope
    magnitude there.
    """

    f_step: float
    f_max: float
    f_torso: float
    step_peaks: tuple = ()
    direction: Direction = Direction.TOWARD

    @property
    def peak_frames(self) -> np.ndarray:
        return np.array([p[0] for p in self.step_peaks], dtype=int)

    @property
    def peak_values(self) -> np.ndarray:
        return np.array([p[1] for p in self.step_peaks], dtype=float)

    def to_dict(self) -> dict:
        return {
            "f_step": self.f_step,
            "f_max": self.f_max,
            "f_torso": self.f_torso,
            "direction": self.direction.value,
            "peaks": [{"frame": int(i), "doppler": float(v)} for i, v in self.step_peaks],
        }


def _direction_side(spec: Spectrogram, direction: Direction) -> np.ndarray:
    f = spec.freq_axis
    return f > 0 if Direction(direction) is Direction.TOWARD else f < 0


def signal_regions(spec: Spectrogram, direction, min_area: int | None = None) -> np.ndarray:
    """Super-threshold cells on the motion side that belong to large blobs.

    Connected regions smaller than ``min_area`` cells are discarded; the
    default is twice the time-frequency resolution cell, ``2*(L/hop)*(K/L)``,
    which removes isolated noise survivors but keeps any real scatterer track.
    """
    mask = spec.signal_mask() & _direction_side(spec, direction)[None, :]
    if min_area is None:
        min_area = 2 * spec.params.fft_size // spec.params.hop
    if min_area <= 1:
        return mask
    lab, n = ndimage.label(mask)
    if n == 0:
        return mask
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    big = sizes >= min_area
    big[0] = False
    return big[lab]


def envelope(spec: Spectrogram, direction, median_width: int = 11, min_area: int | None = None) -> Envelope:
    direction = Direction(direction)
    keep = signal_regions(spec, direction, min_area)
    absf = np.abs(spec.freq_axis)
    e = np.where(keep, absf[None, :], 0.0).max(axis=1)
    empty = ~keep.any(axis=1)
    if median_width > 1:
        e = ndimage.median_filter(e, size=median_width, mode="nearest")
    return Envelope(direction.sign * e, spec.frame_rate, direction, median_width, empty)


def estimate_step_rate(env: Envelope, band=(0.5, 4.0), min_duration: float = 2.0) -> float:
    """Dominant frequency of the envelope magnitude inside ``band`` (Hz)."""
    x = env.magnitude
    if x.size / env.frame_rate < min_duration:
        raise NoPeriodicityError(f"envelope shorter than {min_duration} s")
    x = x - x.mean()
    if not np.any(np.abs(x) > 1e-12 * max(1.0, np.abs(env.values).max())):
        raise NoPeriodicityError("no gait periodicity: constant envelope")
    nfft = max(1 << 16, 1 << int(np.ceil(np.log2(8 * x.size))))
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size), n=nfft))
    freqs = np.fft.rfftfreq(nfft, d=1.0 / env.frame_rate)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    if not in_band.any():
        raise NoPeriodicityError("frequency band not resolvable")
    idx = np.nonzero(in_band)[0]
    k = idx[np.argmax(spec[idx])]
    if k in (idx[0], idx[-1]):
        raise NoPeriodicityError("no gait periodicity: spectral maximum at band edge")
    return float(freqs[k])


def detect_step_peaks(env: Envelope, f_step: float, min_separation: float = 0.6,
                      min_steps: int = 4, smooth: float = 0.06) -> tuple:
    """Envelope maxima at least ``min_separation / f_step`` seconds apart.

    The envelope tops are flat and noisy, so maxima are located on a copy
    smoothed by a Gaussian of ``smooth / f_step`` seconds; the reported
    values are read from the unsmoothed envelope.
    """
    x = env.magnitude
    distance = max(1, int(round(min_separation / f_step * env.frame_rate)))
    sigma = smooth / f_step * env.frame_rate
    y = ndimage.gaussian_filter1d(x, sigma, mode="nearest") if sigma > 0 else x
    idx, _ = find_peaks(y, distance=distance)
    idx = idx[x[idx] > 0]
    if idx.size < min_steps:
        raise InsufficientStepsError(f"found {idx.size} steps, need {min_steps}")
    return tuple((int(i), float(x[i])) for i in idx)


def estimate_max_doppler(env: Envelope, peaks) -> float:
    if len(peaks) < 2:
        raise InsufficientStepsError("need at least two step peaks")
    return float(np.mean([abs(v) for _, v in peaks]))


def estimate_torso_doppler(spec: Spectrogram, env: Envelope, ridge_halfwidth: float | None = None) -> float:
    """Median over frames of the power centroid of the dominant low-Doppler ridge.

    Per frame the strongest cell with ``|f| <= 0.5 * max|envelope|`` locates
    the ridge; the centroid is taken over ``ridge_halfwidth`` Hz around it
    (default: half the window main lobe, ``2 * fs / L``).
    """
    side = _direction_side(spec, env.direction)
    absf = np.abs(spec.freq_axis)
    emax = env.magnitude.max()
    if emax <= 0:
        raise GaitError("empty envelope")
    cols = np.nonzero(side & (absf <= 0.5 * emax))[0]
    if cols.size == 0:
        raise GaitError("no torso ridge found")
    if ridge_halfwidth is None:
        ridge_halfwidth = 2 * spec.fs / spec.params.window_length
    half = max(1, int(round(ridge_halfwidth / spec.bin_width)))
    power = spec.values[:, cols]
    if spec.threshold is not None:
        power = np.where(spec.signal_mask()[:, cols], power, 0.0)
    k = np.argmax(power, axis=1)
    offs = np.arange(-half, half + 1)
    idx = np.clip(k[:, None] + offs[None, :], 0, cols.size - 1)
    w = np.take_along_axis(power, idx, axis=1)
    total = w.sum(axis=1)
    ok = total > 0
    if not ok.any():
        raise GaitError("no torso ridge found")
    centroid = (w[ok] * absf[cols][idx[ok]]).sum(axis=1) / total[ok]
    return float(np.median(centroid))


def gait_stats(spec: Spectrogram, direction, median_width: int = 11, band=(0.5, 4.0),
               min_area: int | None = None) -> tuple[GaitStats, Envelope]:
    env = envelope(spec, direction, median_width, min_area)
    f_step = estimate_step_rate(env, band)
    peaks = detect_step_peaks(env, f_step)
    f_max = estimate_max_doppler(env, peaks)
    f_torso = estimate_torso_doppler(spec, env)
    if not f_torso < f_max:
        raise GaitError(f"torso Doppler {f_torso:.1f} Hz not below maximal Doppler {f_max:.1f} Hz")
    return GaitStats(f_step, f_max, f_torso, peaks, env.direction), env
