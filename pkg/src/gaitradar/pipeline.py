"""Per-measurement analysis chain and the pipeline configuration."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .features import FeatureVector, SsimParams, feature_vector
from .gaitparams import Envelope, GaitError, GaitStats, gait_stats
from .sim import Direction, IqSignal, Measurement
from .stepext import StepPair, StepWindow, step_pair
from .tfa import Spectrogram, StftParams, denoise, stft_spectrogram


@dataclass(frozen=True)
class PipelineConfig:
    # [stft]
    window_length: int = 255
    fft_size: int = 2048
    hop: int = 8
    # [denoise]
    margin_db: float = 8.0
    percentile: float = 20.0
    floor_cap_db: float = 10.0
    # [envelope]
    median_width: int = 11
    min_area: int = 0  # 0: twice the time-frequency resolution cell
    band_low: float = 0.5
    band_high: float = 4.0
    # [steps]
    db_floor: float = -50.0
    db_ceil: float = 0.0
    refine: bool = True
    # [model]
    scenario: str = "both"
    fa_bound: float = 0.05
    # [simulate]
    cohort: str = ""
    snr: float = 20.0
    master_seed: int = 2019

    def __post_init__(self):
        if self.hop < 1 or not 0 < self.window_length <= self.fft_size:
            raise ValueError("invalid STFT parameters")
        if self.margin_db < 0:
            raise ValueError("margin_db must be >= 0")
        if not 0 < self.percentile < 100:
            raise ValueError("percentile must lie in (0, 100)")
        if self.median_width < 1:
            raise ValueError("median_width must be >= 1")
        if not 0 < self.band_low < self.band_high:
            raise ValueError("need 0 < band_low < band_high")
        if not self.db_floor < self.db_ceil:
            raise ValueError("db_floor must be below db_ceil")
        if self.scenario not in ("toward", "away", "both"):
            raise ValueError("scenario must be toward, away or both")
        if not 0 <= self.fa_bound <= 1:
            raise ValueError("fa_bound must lie in [0, 1]")

    @property
    def stft(self) -> StftParams:
        return StftParams(self.window_length, self.fft_size, self.hop)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


SECTIONS = {
    "stft": ("window_length", "fft_size", "hop"),
    "denoise": ("margin_db", "percentile", "floor_cap_db"),
    "envelope": ("median_width", "min_area", "band_low", "band_high"),
    "steps": ("db_floor", "db_ceil", "refine"),
    "model": ("scenario", "fa_bound"),
    "simulate": ("cohort", "snr", "master_seed"),
}


def parse_config(text: str, base: Optional[Path] = None, **overrides) -> PipelineConfig:
    """Read an INI pipeline config; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"config: {exc}") from exc
    types = {f.name: f.type for f in fields(PipelineConfig)}
    kwargs = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ValueError(f"config: unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in SECTIONS[section]:
                raise ValueError(f"config: unknown key {key!r} in [{section}]")
            kind = types[key]
            try:
                if kind == "bool":
                    val = cp.getboolean(section, key)
                elif kind == "int":
                    val = int(raw)
                elif kind == "float":
                    val = float(raw)
                else:
                    val = raw.strip()
            except ValueError as exc:
                raise ValueError(f"config: bad value for {key}: {raw!r}") from exc
            kwargs[key] = val
    if kwargs.get("cohort") and base is not None and not Path(kwargs["cohort"]).is_absolute():
        kwargs["cohort"] = str((base / kwargs["cohort"]).resolve())
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**kwargs)


def load_config(path=None, **overrides) -> PipelineConfig:
    if path is None:
        return PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base=path.parent, **overrides)


@dataclass
class Analysis:
    """Every intermediate product of one measurement."""

    spectrogram: Spectrogram
    denoised: Spectrogram
    envelope: Optional[Envelope] = None
    stats: Optional[GaitStats] = None
    window: Optional[StepWindow] = None
    pair: Optional[StepPair] = None
    features: Optional[FeatureVector] = None
    flags: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def analyze_signal(signal: IqSignal, direction, config: PipelineConfig = PipelineConfig(),
                   ssim_params: SsimParams = SsimParams()) -> Analysis:
    """Spectrogram -> denoising -> gait statistics -> step pair -> features.

    Failures of the gait stages (no periodicity, too few steps) are recorded
    in ``error`` instead of raised, so callers can emit a rejected row.
    """
    direction = Direction(direction)
    spec = stft_spectrogram(signal.zero_mean(), config.stft)
    den = denoise(spec, config.margin_db, config.percentile, config.floor_cap_db)
    out = Analysis(spec, den)
    try:
        stats, env = gait_stats(den, direction, config.median_width, (config.band_low, config.band_high),
                                config.min_area or None)
        out.envelope, out.stats = env, stats
        if env.flagged:
            out.flags.append("envelope_empty_frames")
        window, pair = step_pair(den, stats, config.db_floor, config.db_ceil, config.refine)
        out.window, out.pair = window, pair
        out.flags.extend(pair.flags)
        fv = feature_vector(pair.a, pair.b, stats.step_peaks, ssim_params)
        out.features = fv
        out.flags.extend(fv.flags)
    except (GaitError, ValueError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def analyze_measurement(m: Measurement, config: PipelineConfig = PipelineConfig()) -> Analysis:
    return analyze_signal(m.signal, m.direction, config)


def infer_direction(signal: IqSignal, config: PipelineConfig = PipelineConfig()) -> Direction:
    """Side of the spectrum holding more super-threshold energy."""
    spec = denoise(stft_spectrogram(signal.zero_mean(), config.stft), config.margin_db,
                   config.percentile, config.floor_cap_db)
    power = np.where(spec.signal_mask(), spec.values, 0.0).sum(axis=0)
    pos = power[spec.freq_axis > 0].sum()
    neg = power[spec.freq_axis < 0].sum()
    return Direction.TOWARD if pos >= neg else Direction.AWAY


def with_overrides(config: PipelineConfig, **kw) -> PipelineConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
