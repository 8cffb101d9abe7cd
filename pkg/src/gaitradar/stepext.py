"""Four-step analysis window, per-leg step signatures and NCC registration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .gaitparams import GaitStats, InsufficientStepsError
from .tfa import GrayImage, Spectrogram, power_to_db, to_gray


@dataclass(frozen=True)
class StepWindow:
    """Gray-scale spectrogram excerpt holding four steps.

    ``image`` has shape ``(M_y, M_x)``: row 0 is the highest |Doppler|
    (``doppler_rows[0]``), columns are spectrogram frames starting at
    ``start_frame``.
    """

    image: GrayImage
    start_frame: int
    doppler_rows: np.ndarray
    step_frames: tuple  # the four step peaks, window-local frame index
    f_step: float
    frame_rate: float

    @property
    def pixels(self) -> np.ndarray:
        return self.image.pixels

    @property
    def m_x(self) -> int:
        return self.pixels.shape[1]

    @property
    def m_y(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class StepPair:
    """Averaged signatures of alternate steps (A: steps 1 and 3, B: 2 and 4).

    Which leg is which cannot be told from the radar return alone.
    """

    a: np.ndarray
    b: np.ndarray
    step_frames: tuple  # window-local centre frames of the four steps
    flags: tuple = ()
    gamma_max: tuple = field(default=())

    @property
    def n_x(self) -> int:
        return self.a.shape[1]

    @property
    def n_y(self) -> int:
        return self.a.shape[0]

    def swapped(self) -> "StepPair":
        return StepPair(self.b, self.a, self.step_frames, self.flags, self.gamma_max)


def step_length(f_step: float, frame_rate: float) -> int:
    """N_x: two thirds of a step period, in frames."""
    return int(round((2.0 / 3.0) * frame_rate / f_step))


def select_four_step_window(spec: Spectrogram, stats: GaitStats, db_floor: float = -50.0,
                            db_ceil: float = 0.0) -> StepWindow:
    """Crop four consecutive steps and the Doppler band [1.5*f_torso, f_max].

    Among all runs of four consecutive peaks, the one with the largest mean
    squared envelope value is chosen; the window reaches half a step period
    before the first and after the last of its peaks.
    """
    peaks = stats.peak_frames
    values = stats.peak_values
    if peaks.size < 4:
        raise InsufficientStepsError(f"found {peaks.size} steps, need 4")
    half = 0.5 * spec.frame_rate / stats.f_step
    n = spec.n_frames

    best, best_energy = None, -np.inf
    fallback = None
    for i in range(peaks.size - 3):
        lo = int(np.floor(peaks[i] - half))
        hi = int(np.ceil(peaks[i + 3] + half)) + 1
        energy = float(np.mean(values[i:i + 4] ** 2))
        if fallback is None or energy > fallback[1]:
            fallback = (i, energy)
        if lo < 0 or hi > n:
            continue
        if energy > best_energy:
            best, best_energy = i, energy
    if best is None:
        best = fallback[0]
    lo = max(0, int(np.floor(peaks[best] - half)))
    hi = min(n, int(np.ceil(peaks[best + 3] + half)) + 1)

    absf = np.abs(spec.freq_axis)
    side = spec.freq_axis > 0 if stats.direction.sign > 0 else spec.freq_axis < 0
    band = side & (absf >= 1.5 * stats.f_torso) & (absf <= stats.f_max)
    cols = np.nonzero(band)[0]
    if cols.size == 0:
        raise InsufficientStepsError("empty Doppler band between 1.5*f_torso and f_max")
    cols = cols[np.argsort(-absf[cols], kind="stable")]  # row 0 = highest |Doppler|
    region = spec.values[lo:hi, cols].T
    img = to_gray(power_to_db(region), db_floor, db_ceil)
    local = tuple(int(p - lo) for p in peaks[best:best + 4])
    return StepWindow(img, lo, spec.freq_axis[cols], local, stats.f_step, spec.frame_rate)


def _extract(pixels: np.ndarray, centre: int, n_x: int) -> tuple[np.ndarray, bool]:
    """Columns ``[centre - n_x//2, centre - n_x//2 + n_x)``, zero-padded outside."""
    start = centre - n_x // 2
    m_x = pixels.shape[1]
    out = np.zeros((pixels.shape[0], n_x))
    lo, hi = max(0, start), min(m_x, start + n_x)
    if hi > lo:
        out[:, lo - start:hi - start] = pixels[:, lo:hi]
    return out, (lo != start or hi != start + n_x)


def extract_and_average(window: StepWindow | np.ndarray, step_frames, n_x: int) -> StepPair:
    pixels = window.pixels if isinstance(window, StepWindow) else np.asarray(window, dtype=float)
    if n_x > pixels.shape[1]:
        raise ValueError(f"N_x = {n_x} exceeds window width {pixels.shape[1]}")
    if len(step_frames) != 4:
        raise ValueError("need exactly four step times")
    steps, flags = [], []
    for k, c in enumerate(step_frames):
        img, padded = _extract(pixels, int(c), n_x)
        steps.append(img)
        if padded:
            flags.append(f"step{k + 1}_zero_padded")
    a = 0.5 * (steps[0] + steps[2])
    b = 0.5 * (steps[1] + steps[3])
    return StepPair(a, b, tuple(int(c) for c in step_frames), tuple(flags))


def ncc_profile(window: np.ndarray, template: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized cross-correlation for horizontal shifts only.

    ``template`` spans the full window height, so the vertical shift is 0 and
    ``gamma[u]`` compares the template with ``window[:, u:u + N_x]`` for
    ``u = 0 .. M_x - N_x``. Returns ``(gamma, defined)``; positions where the
    window patch or the template has zero variance get ``gamma = 0`` and
    ``defined = False``.
    """
    f = np.asarray(window, dtype=float)
    t = np.asarray(template, dtype=float)
    if t.shape[0] != f.shape[0] or t.shape[1] > f.shape[1]:
        raise ValueError(f"template {t.shape} does not fit window {f.shape}")
    n_y, n_x = t.shape
    n = t.size
    tc = t - t.mean()
    t_ss = float(np.sum(tc * tc))

    # local sums of f and f^2 under the footprint, via column sums
    csum = np.concatenate([[0.0], np.cumsum(f.sum(axis=0))])
    csum2 = np.concatenate([[0.0], np.cumsum((f * f).sum(axis=0))])
    s1 = csum[n_x:] - csum[:-n_x]
    s2 = csum2[n_x:] - csum2[:-n_x]
    f_ss = s2 - s1 * s1 / n

    # sum_xy f(x+u, y) * tc(x, y); the template mean drops out since sum(tc) = 0
    num = fftconvolve(f, tc[::-1, ::-1], mode="valid")[0]

    scale = max(1.0, float(np.max(np.abs(f))) ** 2) * n
    defined = (f_ss > 1e-12 * scale) & (t_ss > 1e-12 * max(1.0, float(np.max(np.abs(t)))) ** 2 * n)
    gamma = np.zeros_like(num)
    gamma[defined] = num[defined] / np.sqrt(f_ss[defined] * t_ss)
    return np.clip(gamma, -1.0, 1.0), defined


def refine_step_pair(window: StepWindow, pair: StepPair, search: float = 0.25) -> StepPair:
    """One registration pass: correlate each leg's template, re-extract, re-average.

    Every step may move by at most ``search / f_step`` seconds so that the
    legs cannot swap.
    """
    pixels = window.pixels
    n_x = pair.n_x
    m_x = pixels.shape[1]
    radius = max(1, int(round(search * window.frame_rate / window.f_step)))
    centres = list(pair.step_frames)
    flags = list(pair.flags)
    gmax = [0.0] * 4
    for leg, template, members in (("A", pair.a, (0, 2)), ("B", pair.b, (1, 3))):
        gamma, defined = ncc_profile(pixels, template)
        for k in members:
            u0 = centres[k] - n_x // 2
            if u0 < 0 or u0 > m_x - n_x:
                flags.append(f"step{k + 1}_outside_search")
                continue
            lo, hi = max(0, u0 - radius), min(m_x - n_x, u0 + radius) + 1
            cand = np.arange(lo, hi)
            ok = defined[cand]
            if not ok.any():
                flags.append(f"step{k + 1}_undefined_correlation")
                continue
            best = cand[ok][np.argmax(gamma[cand[ok]])]
            if defined[u0] and gamma[u0] >= gamma[best]:
                best = u0
            centres[k] = int(best + n_x // 2)
            gmax[k] = float(gamma[best])
    refined = extract_and_average(pixels, centres, n_x)
    return StepPair(refined.a, refined.b, refined.step_frames,
                    tuple(dict.fromkeys(flags + list(refined.flags))), tuple(gmax))


def step_pair(spec: Spectrogram, stats: GaitStats, db_floor: float = -50.0,
              db_ceil: float = 0.0, refine: bool = True) -> tuple[StepWindow, StepPair]:
    window = select_four_step_window(spec, stats, db_floor, db_ceil)
    n_x = step_length(stats.f_step, spec.frame_rate)
    pair = extract_and_average(window, window.step_frames, n_x)
    if refine:
        pair = refine_step_pair(window, pair)
    return window, pair
