"""(Dis)similarity features of a pair of step signatures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

FEATURE_NAMES = ("r", "r_H", "r_M", "r_L", "MSE", "MAE", "MSSIM", "delta_fmax")


@dataclass(frozen=True)
class SsimParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    window_size: int = 11
    sigma: float = 1.5
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if not all(np.isfinite([self.alpha, self.beta, self.gamma])):
            raise ValueError("SSIM exponents must be finite")
        if self.window_size < 1 or self.sigma <= 0 or self.dynamic_range <= 0:
            raise ValueError("invalid SSIM window or dynamic range")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("SSIM constants must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2


@dataclass(frozen=True)
class FeatureVector:
    r: float
    r_H: float
    r_M: float
    r_L: float
    MSE: float
    MAE: float
    MSSIM: float
    delta_fmax: float
    flags: tuple = ()

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)

    def as_dict(self) -> dict:
        return {n: float(getattr(self, n)) for n in FEATURE_NAMES}


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty images")
    return a, b


def pearson(a, b) -> float | None:
    """Correlation coefficient of two equal-size arrays; None if either is flat."""
    a, b = _check_pair(a, b)
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.sum(da * da))
    sbb = float(np.sum(db * db))
    if saa <= 0 or sbb <= 0:
        return None
    return float(np.clip(np.sum(da * db) / np.sqrt(saa * sbb), -1.0, 1.0))


def band_slices(n_rows: int) -> dict:
    """Equal thirds of the rows; row 0 holds the highest |Doppler|."""
    edges = [0] + [int(round(n_rows * k / 3)) for k in (1, 2)] + [n_rows]
    return {"H": slice(edges[0], edges[1]), "M": slice(edges[1], edges[2]), "L": slice(edges[2], edges[3])}


def correlation(a, b) -> dict:
    """r over the whole images plus r_H, r_M, r_L over the row thirds.

    Values are None where a band (or the whole image) has zero variance.
    """
    a, b = _check_pair(a, b)
    out = {"r": pearson(a, b)}
    for name, sl in band_slices(a.shape[0]).items():
        sub_a, sub_b = a[sl], b[sl]
        out[f"r_{name}"] = pearson(sub_a, sub_b) if sub_a.size else None
    return out


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def mae(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    n = g.size
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    lo = n // 2
    hi0 = img.shape[0] - (n - 1 - n // 2)
    hi1 = img.shape[1] - (n - 1 - n // 2)
    return out[lo:hi0, lo:hi1]


def ssim_map(a, b, params: SsimParams = SsimParams()) -> np.ndarray:
    """Local SSIM over every fully contained Gaussian window position."""
    a, b = _check_pair(a, b)
    w = params.window_size
    if a.shape[0] < w or a.shape[1] < w:
        raise ValueError(f"images {a.shape} smaller than the {w}x{w} SSIM window")
    g = gaussian_window(w, params.sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = np.maximum(_filter_valid(a * a, g) - mu_a * mu_a, 0.0)
    var_b = np.maximum(_filter_valid(b * b, g) - mu_b * mu_b, 0.0)
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    c1, c2, c3 = params.c1, params.c2, params.c3
    if params.alpha == params.beta == params.gamma == 1.0 and c3 == c2 / 2:
        # closed form of l*c*s for unit exponents; symmetric in a and b
        return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
            (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    sd = np.sqrt(var_a * var_b)
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    con = (2 * sd + c2) / (var_a + var_b + c2)
    struct = (cov + c3) / (sd + c3)
    return np.sign(lum) * np.abs(lum) ** params.alpha * np.abs(con) ** params.beta * \
        np.sign(struct) * np.abs(struct) ** params.gamma


def mssim(a, b, params: SsimParams = SsimParams()) -> float:
    return float(np.mean(ssim_map(a, b, params)))


def delta_fmax(peak_values) -> float:
    """Mean absolute difference of consecutive step-peak Doppler values."""
    v = np.abs(np.asarray([p[1] if isinstance(p, (tuple, list)) else p for p in peak_values], dtype=float))
    if v.size < 2:
        raise ValueError("need at least two step peaks")
    return float(np.mean(np.abs(np.diff(v))))


def feature_vector(a, b, peak_values, ssim_params: SsimParams = SsimParams()) -> FeatureVector:
    """All eight features; undefined correlations are imputed as 0 and flagged."""
    flags = []
    corr = correlation(a, b)
    for key, val in corr.items():
        if val is None:
            corr[key] = 0.0
            flags.append(f"{key}_undefined")
    try:
        ms = mssim(a, b, ssim_params)
    except ValueError:
        ms = 0.0
        flags.append("MSSIM_undefined")
    try:
        dfm = delta_fmax(peak_values)
    except ValueError:
        dfm = 0.0
        flags.append("delta_fmax_undefined")
    return FeatureVector(corr["r"], corr["r_H"], corr["r_M"], corr["r_L"], mse(a, b), mae(a, b),
                         ms, dfm, tuple(flags))
